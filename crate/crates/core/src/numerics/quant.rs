//! Symmetric per-tensor int8 quantization and integer-MAC layer execution.

use serde::Serialize;

use super::{Kernel, Matrix, Tensor};
use crate::error::{Error, Result};
use crate::ir::TensorShape;

/// Largest quantized magnitude; the grid is symmetric, so -128 is unused.
pub const QUANT_LEVELS: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
    pub bit_width: u32,
}

impl QuantParams {
    fn with_scale(scale: f64) -> Self {
        QuantParams {
            scale,
            zero_point: 0,
            bit_width: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    pub shape: TensorShape,
    pub values: Vec<i8>,
}

/// `scale = max|x| / 127` (1 for an all-zero input), round half to even.
pub fn quantize_values(values: &[f64]) -> (Vec<i8>, QuantParams) {
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if max_abs == 0.0 {
        1.0
    } else {
        max_abs / QUANT_LEVELS as f64
    };
    let q = values
        .iter()
        .map(|&v| {
            (v / scale)
                .round_ties_even()
                .clamp(-(QUANT_LEVELS as f64), QUANT_LEVELS as f64) as i8
        })
        .collect();
    (q, QuantParams::with_scale(scale))
}

pub fn quantize(x: &Tensor) -> (QTensor, QuantParams) {
    let (values, params) = quantize_values(x.data());
    (
        QTensor {
            shape: x.shape(),
            values,
        },
        params,
    )
}

pub fn dequantize(q: &QTensor, params: &QuantParams) -> Tensor {
    Tensor::from_fn(q.shape, |c, y, x| {
        let i = (c * q.shape.height + y) * q.shape.width + x;
        q.values[i] as f64 * params.scale
    })
}

/// Result of running a layer on int8 operands with integer accumulation.
#[derive(Debug, Clone)]
pub struct QuantizedOutput {
    pub output: Tensor,
    pub input_params: QuantParams,
    pub weight_params: QuantParams,
    /// Worst-case elementwise deviation from the float execution of the same
    /// layer.
    ///
    /// With `x' = x + ex`, `|ex| <= sx/2` and `w' = w + ew`, `|ew| <= sw/2`,
    /// every product deviates by `|w ex + x ew + ex ew| <= |w|max sx/2 +
    /// |x|max sw/2 + sx sw/4`; summing over `n` taps gives the bound. A
    /// small term covers f64 rounding in the float reference sum.
    pub bound: f64,
}

fn error_bound(n_taps: usize, x_max: f64, w_max: f64, sx: f64, sw: f64) -> f64 {
    let n = n_taps as f64;
    n * (w_max * sx / 2.0 + x_max * sw / 2.0 + sx * sw / 4.0) + 8.0 * n * n * f64::EPSILON * x_max * w_max
}

pub fn quantized_dense_forward(x: &Tensor, w: &Matrix, bias: Option<&[f64]>) -> Result<QuantizedOutput> {
    if x.data().len() != w.cols {
        return Err(Error::Shape(format!(
            "dense weight has {} columns, input has {} elements",
            w.cols,
            x.data().len()
        )));
    }
    let (qx, px) = quantize(x);
    let (qw, pw) = quantize_values(&w.data);
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let acc: i64 = (0..w.cols)
            .map(|c| qw[r * w.cols + c] as i64 * qx.values[c] as i64)
            .sum();
        out.push(acc as f64 * px.scale * pw.scale + bias.map_or(0.0, |b| b[r]));
    }
    Ok(QuantizedOutput {
        output: Tensor::new(TensorShape::vector(w.rows), out)?,
        input_params: px,
        weight_params: pw,
        bound: error_bound(w.cols, x.max_abs(), w.data.iter().fold(0.0, |m, v| m.max(v.abs())), px.scale, pw.scale),
    })
}

pub fn quantized_conv_forward(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<QuantizedOutput> {
    let reference_shape = super::conv_forward(&Tensor::zeros(x.shape()), kernel, stride, padding)?.shape();
    let (qx, px) = quantize(x);
    let (qw, pw) = quantize_values(&kernel.data);
    let TensorShape { height, width, .. } = x.shape();
    let k = kernel.size;
    let mut out = Vec::with_capacity(reference_shape.elements());
    for o in 0..kernel.out_ch {
        for oy in 0..reference_shape.height {
            for ox in 0..reference_shape.width {
                let mut acc: i64 = 0;
                for c in 0..kernel.in_ch {
                    for ty in 0..k {
                        for tx in 0..k {
                            let (iy, ix) = ((oy * stride + ty) as isize - padding as isize, (ox * stride + tx) as isize - padding as isize);
                            if iy < 0 || ix < 0 || iy >= height as isize || ix >= width as isize {
                                continue;
                            }
                            let xv = qx.values[(c * height + iy as usize) * width + ix as usize] as i64;
                            acc += xv * qw[kernel.offset(o, c, ty, tx)] as i64;
                        }
                    }
                }
                out.push(acc as f64 * px.scale * pw.scale);
            }
        }
    }
    Ok(QuantizedOutput {
        output: Tensor::new(reference_shape, out)?,
        input_params: px,
        weight_params: pw,
        bound: error_bound(kernel.in_ch * k * k, x.max_abs(), kernel.max_abs(), px.scale, pw.scale),
    })
}

pub fn quantized_tconv_forward(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<QuantizedOutput> {
    let out_shape = super::tconv_forward_dense(&Tensor::zeros(x.shape()), kernel, stride, padding)?.shape();
    let (qx, px) = quantize(x);
    let (qw, pw) = quantize_values(&kernel.data);
    let TensorShape {
        channels,
        height,
        width,
    } = x.shape();
    let k = kernel.size;
    let mut acc = vec![0i64; out_shape.elements()];
    for c in 0..channels {
        for iy in 0..height {
            for ix in 0..width {
                let xv = qx.values[(c * height + iy) * width + ix] as i64;
                if xv == 0 {
                    continue;
                }
                for o in 0..kernel.out_ch {
                    for ty in 0..k {
                        let oy = (iy * stride + ty) as isize - padding as isize;
                        if oy < 0 || oy >= out_shape.height as isize {
                            continue;
                        }
                        for tx in 0..k {
                            let ox = (ix * stride + tx) as isize - padding as isize;
                            if ox < 0 || ox >= out_shape.width as isize {
                                continue;
                            }
                            acc[(o * out_shape.height + oy as usize) * out_shape.width + ox as usize] +=
                                xv * qw[kernel.offset(o, c, ty, tx)] as i64;
                        }
                    }
                }
            }
        }
    }
    let out = acc.into_iter().map(|a| a as f64 * px.scale * pw.scale).collect();
    Ok(QuantizedOutput {
        output: Tensor::new(out_shape, out)?,
        input_params: px,
        weight_params: pw,
        bound: error_bound(channels * k * k, x.max_abs(), kernel.max_abs(), px.scale, pw.scale),
    })
}
