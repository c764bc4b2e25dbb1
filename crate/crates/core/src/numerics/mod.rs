//! Exact functional reference for every layer type.
//!
//! These routines favour obviously-correct loops over speed: convolutions pad
//! their input explicitly and transposed convolutions materialize the
//! zero-inserted map, so every multiply the hardware would see in a dense
//! execution is actually performed (and counted by the `*_counted` variants).

mod quant;

pub use quant::{
    dequantize, quantize, quantize_values, quantized_conv_forward, quantized_dense_forward,
    quantized_tconv_forward, QTensor, QuantParams, QuantizedOutput, QUANT_LEVELS,
};

use crate::error::{Error, Result};
use crate::ir::{tconv_expanded_len, Activation, NormKind, NormSpec, TensorShape};

/// Dense activation tensor stored channel-major, then row, then column.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Result<Self> {
        if !shape.is_valid() {
            return Err(Error::Shape(format!("invalid tensor shape {shape}")));
        }
        if data.len() != shape.elements() {
            return Err(Error::Shape(format!(
                "tensor {shape} needs {} values, got {}",
                shape.elements(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("tensor values must be finite".into()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.elements()],
        }
    }

    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.elements());
        for c in 0..shape.channels {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    data.push(f(c, y, x));
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(TensorShape::vector(values.len()), values)
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Tensor {
        self.map(|v| alpha * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("cannot add {} and {}", self.shape, other.shape)));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Same values viewed under another shape with the same element count.
    pub fn reshaped(self, shape: TensorShape) -> Result<Tensor> {
        if shape.elements() != self.data.len() {
            return Err(Error::Shape(format!("cannot view {} as {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data })
    }
}

/// Row-major weight matrix for dense layers (`rows` outputs by `cols` inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Matrix { rows: n, cols: n, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Convolution kernel indexed `[out_ch][in_ch][ky][kx]`. The same layout is
/// used for transposed convolutions, where `kernel[o][i][ty][tx]` is the
/// weight scattered from input `(y, x)` to output `(y*s + ty - p, x*s + tx - p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub out_ch: usize,
    pub in_ch: usize,
    pub size: usize,
    pub data: Vec<f64>,
}

impl Kernel {
    pub fn new(out_ch: usize, in_ch: usize, size: usize, data: Vec<f64>) -> Result<Self> {
        if out_ch == 0 || in_ch == 0 || size == 0 {
            return Err(Error::Shape("kernel dimensions must be >= 1".into()));
        }
        if data.len() != out_ch * in_ch * size * size {
            return Err(Error::Shape(format!(
                "kernel {out_ch}x{in_ch}x{size}x{size} needs {} values, got {}",
                out_ch * in_ch * size * size,
                data.len()
            )));
        }
        Ok(Kernel {
            out_ch,
            in_ch,
            size,
            data,
        })
    }

    pub fn from_fn(
        out_ch: usize,
        in_ch: usize,
        size: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(out_ch * in_ch * size * size);
        for o in 0..out_ch {
            for i in 0..in_ch {
                for ky in 0..size {
                    for kx in 0..size {
                        data.push(f(o, i, ky, kx));
                    }
                }
            }
        }
        Kernel {
            out_ch,
            in_ch,
            size,
            data,
        }
    }

    #[inline]
    pub fn offset(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_ch + i) * self.size + ky) * self.size + kx
    }

    #[inline]
    pub fn get(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.data[self.offset(o, i, ky, kx)]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `y = W x (+ b)`. Inputs of any shape are flattened.
pub fn dense_forward(x: &Tensor, w: &Matrix, bias: Option<&[f64]>) -> Result<Tensor> {
    if x.data.len() != w.cols {
        return Err(Error::Shape(format!(
            "dense weight has {} columns, input has {} elements",
            w.cols,
            x.data.len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != w.rows {
            return Err(Error::Shape(format!("bias has {} entries, expected {}", b.len(), w.rows)));
        }
    }
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(&x.data) {
            acc += wv * xv;
        }
        if let Some(b) = bias {
            acc += b[r];
        }
        out.push(acc);
    }
    Tensor::new(TensorShape::vector(w.rows), out)
}

fn check_conv_args(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<()> {
    if x.shape.channels != kernel.in_ch {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, tensor is {}",
            kernel.in_ch, x.shape
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("stride must be >= 1".into()));
    }
    if padding > kernel.size - 1 {
        return Err(Error::Shape(format!(
            "padding {padding} exceeds kernel - 1 = {}",
            kernel.size - 1
        )));
    }
    Ok(())
}

/// Valid cross-correlation of an explicitly padded map, counting multiplies.
/// `flip` rotates the kernel by 180 degrees.
fn correlate_counted(
    padded: &[f64],
    channels: usize,
    ph: usize,
    pw: usize,
    kernel: &Kernel,
    stride: usize,
    flip: bool,
) -> Result<(Tensor, u64)> {
    let k = kernel.size;
    if ph < k || pw < k {
        return Err(Error::Shape(format!("padded map {ph}x{pw} is smaller than kernel {k}")));
    }
    let oh = (ph - k) / stride + 1;
    let ow = (pw - k) / stride + 1;
    let shape = TensorShape::new(kernel.out_ch, oh, ow)?;
    let mut out = vec![0.0; shape.elements()];
    let mut macs = 0u64;
    for o in 0..kernel.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..channels {
                    for ty in 0..k {
                        for tx in 0..k {
                            let v = padded[(c * ph + oy * stride + ty) * pw + ox * stride + tx];
                            let w = if flip {
                                kernel.get(o, c, k - 1 - ty, k - 1 - tx)
                            } else {
                                kernel.get(o, c, ty, tx)
                            };
                            acc += v * w;
                            macs += 1;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Ok((Tensor { shape, data: out }, macs))
}

/// Direct convolution plus the number of multiplies performed (padding
/// positions included).
pub fn conv_forward_counted(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<(Tensor, u64)> {
    check_conv_args(x, kernel, stride, padding)?;
    let TensorShape {
        channels,
        height,
        width,
    } = x.shape;
    let ph = height + 2 * padding;
    let pw = width + 2 * padding;
    let mut padded = vec![0.0; channels * ph * pw];
    for c in 0..channels {
        for y in 0..height {
            for xx in 0..width {
                padded[(c * ph + y + padding) * pw + xx + padding] = x.get(c, y, xx);
            }
        }
    }
    correlate_counted(&padded, channels, ph, pw, kernel, stride, false)
}

pub fn conv_forward(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<Tensor> {
    conv_forward_counted(x, kernel, stride, padding).map(|(t, _)| t)
}

/// Zero-inserts `x` (stride - 1 zeros between neighbours) and pads each
/// border with `k - p - 1` zeros. Returns the map and its side lengths.
pub fn zero_insert(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> (Vec<f64>, usize, usize) {
    let TensorShape {
        channels,
        height,
        width,
    } = x.shape;
    let eh = tconv_expanded_len(height, kernel, stride, padding);
    let ew = tconv_expanded_len(width, kernel, stride, padding);
    let border = kernel - padding - 1;
    let mut expanded = vec![0.0; channels * eh * ew];
    for c in 0..channels {
        for y in 0..height {
            for xx in 0..width {
                expanded[(c * eh + border + y * stride) * ew + border + xx * stride] = x.get(c, y, xx);
            }
        }
    }
    (expanded, eh, ew)
}

/// Transposed convolution computed the dense way: explicit zero insertion,
/// then a stride-1 convolution with the 180-degree rotated kernel over the
/// expanded map. Also returns the number of multiplies performed.
pub fn tconv_forward_dense_counted(
    x: &Tensor,
    kernel: &Kernel,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, u64)> {
    check_conv_args(x, kernel, stride, padding)?;
    let (expanded, eh, ew) = zero_insert(x, kernel.size, stride, padding);
    correlate_counted(&expanded, x.shape.channels, eh, ew, kernel, 1, true)
}

pub fn tconv_forward_dense(x: &Tensor, kernel: &Kernel, stride: usize, padding: usize) -> Result<Tensor> {
    tconv_forward_dense_counted(x, kernel, stride, padding).map(|(t, _)| t)
}

/// Learned affine pair of a normalization layer, one entry per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAffine {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl NormAffine {
    pub fn identity(channels: usize) -> Self {
        NormAffine {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
        }
    }
}

/// Batch norm with the stored running statistics, or instance norm with
/// per-channel statistics taken from `x`.
pub fn norm_forward(x: &Tensor, norm: &NormSpec, affine: &NormAffine) -> Result<Tensor> {
    let channels = x.shape.channels;
    if !(norm.epsilon > 0.0) {
        return Err(Error::Shape(format!("norm epsilon must be > 0, got {}", norm.epsilon)));
    }
    if affine.gamma.len() != channels || affine.beta.len() != channels {
        return Err(Error::Shape(format!(
            "norm affine parameters do not match {channels} channels"
        )));
    }
    let plane = x.shape.spatial();
    let mut out = x.data.clone();
    for c in 0..channels {
        let values = &x.data[c * plane..(c + 1) * plane];
        let (mean, var) = match norm.kind {
            NormKind::InstanceNorm => {
                let mean = values.iter().sum::<f64>() / plane as f64;
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / plane as f64;
                (mean, var)
            }
            NormKind::BatchNorm => (
                norm.running_mean.as_ref().map_or(0.0, |m| m[c]),
                norm.running_var.as_ref().map_or(1.0, |v| v[c]),
            ),
        };
        let inv = 1.0 / (var + norm.epsilon).sqrt();
        for v in &mut out[c * plane..(c + 1) * plane] {
            *v = affine.gamma[c] * (*v - mean) * inv + affine.beta[c];
        }
    }
    Tensor::new(x.shape, out)
}

pub fn activation_forward(x: &Tensor, act: Activation) -> Tensor {
    x.map(|v| act.apply(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(c: usize, h: usize, w: usize) -> TensorShape {
        TensorShape::new(c, h, w).unwrap()
    }

    #[test]
    fn dense_identity_and_hand_values() {
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let y = dense_forward(&x, &Matrix::identity(3), Some(&[0.0; 3])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);

        let w = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = Tensor::vector(vec![1.0, 1.0]).unwrap();
        let y = dense_forward(&x, &w, Some(&[10.0, 10.0])).unwrap();
        assert_eq!(y.data(), &[13.0, 17.0]);
    }

    #[test]
    fn dense_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Matrix::new(8, 8, (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let xs: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = dense_forward(&Tensor::vector(xs.clone()).unwrap(), &w, None).unwrap();
        // column-major accumulation order, independent of the row-slice loop above
        let mut reference = [0.0f64; 8];
        for c in 0..8 {
            for (r, acc) in reference.iter_mut().enumerate() {
                *acc += w.data[r * 8 + c] * xs[c];
            }
        }
        for (a, b) in y.data().iter().zip(reference) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn dense_shape_mismatch() {
        let x = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert!(dense_forward(&x, &Matrix::identity(3), None).is_err());
    }

    #[test]
    fn tconv_delta_reproduces_kernel() {
        let k = Kernel::from_fn(1, 1, 3, |_, _, y, x| (y * 3 + x + 1) as f64);
        let x = Tensor::new(shape(1, 1, 1), vec![1.0]).unwrap();
        let y = tconv_forward_dense(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), shape(1, 3, 3));
        assert_eq!(y.data(), k.data.as_slice());
    }

    #[test]
    fn tconv_zero_input_gives_zero() {
        let k = Kernel::from_fn(2, 3, 3, |o, i, y, x| (o + i + y + x) as f64 - 3.0);
        let y = tconv_forward_dense(&Tensor::zeros(shape(3, 4, 4)), &k, 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tconv_ones_overlap_counts() {
        // scatter form: out[o] counts inputs i with 0 <= o + p - i*s < k, per axis 1,2,1
        let k = Kernel::from_fn(1, 1, 3, |_, _, _, _| 1.0);
        let x = Tensor::from_fn(shape(1, 2, 2), |_, _, _| 1.0);
        let (y, macs) = tconv_forward_dense_counted(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), shape(1, 3, 3));
        assert_eq!(y.data(), &[1.0, 2.0, 1.0, 2.0, 4.0, 2.0, 1.0, 2.0, 1.0]);
        assert_eq!(macs, 81);
    }

    #[test]
    fn conv_counts_padding_taps() {
        let k = Kernel::from_fn(1, 1, 3, |_, _, _, _| 1.0);
        let x = Tensor::from_fn(shape(1, 5, 5), |_, _, _| 1.0);
        let (y, macs) = conv_forward_counted(&x, &k, 1, 1).unwrap();
        assert_eq!(macs, 225);
        assert_eq!(y.get(0, 0, 0), 4.0);
        assert_eq!(y.get(0, 2, 2), 9.0);
    }

    #[test]
    fn one_by_one_conv_scales() {
        let k = Kernel::new(1, 1, 1, vec![2.0]).unwrap();
        let x = Tensor::from_fn(shape(1, 3, 4), |_, y, x| (y * 4 + x) as f64 - 5.0);
        let y = conv_forward(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x.scaled(2.0));
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::vector(vec![-2.0, 0.0, 3.0]).unwrap();
        let y = activation_forward(&x, Activation::LeakyRelu { slope: 0.1 });
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(&y.data()[1..], &[0.0, 3.0]);
    }

    #[test]
    fn instance_norm_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(shape(3, 5, 4), |c, _, _| rng.random_range(-2.0..2.0) * (c + 1) as f64 + c as f64);
        let norm = NormSpec::new(NormKind::InstanceNorm);
        let y = norm_forward(&x, &norm, &NormAffine::identity(3)).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..20).map(|i| y.data()[c * 20 + i]).collect();
            let mean = vals.iter().sum::<f64>() / 20.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 20.0;
            assert!(mean.abs() < 1e-12);
            // variance is sigma^2 / (sigma^2 + eps), a hair under one
            assert!(var < 1.0 && var > 1.0 - 1e-3, "var {var}");
        }
    }

    #[test]
    fn batch_norm_uses_stored_statistics() {
        let x = Tensor::from_fn(shape(2, 1, 2), |c, _, x| (c * 2 + x) as f64);
        let mut norm = NormSpec::new(NormKind::BatchNorm);
        norm.epsilon = 1e-12;
        norm.running_mean = Some(vec![1.0, 0.0]);
        norm.running_var = Some(vec![4.0, 1.0]);
        let y = norm_forward(&x, &norm, &NormAffine::identity(2)).unwrap();
        let expect = [-0.5, 0.0, 2.0, 3.0];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let k = Kernel::from_fn(1, 2, 3, |_, _, _, _| 1.0);
        let x = Tensor::zeros(shape(1, 4, 4));
        assert!(conv_forward(&x, &k, 1, 1).is_err());
        let x = Tensor::zeros(shape(2, 4, 4));
        assert!(conv_forward(&x, &k, 1, 3).is_err());
        assert!(tconv_forward_dense(&x, &k, 0, 1).is_err());
        let mut norm = NormSpec::new(NormKind::InstanceNorm);
        norm.epsilon = -1.0;
        assert!(norm_forward(&x, &norm, &NormAffine::identity(2)).is_err());
        assert!(Tensor::new(shape(1, 1, 2), vec![1.0, f64::NAN]).is_err());
    }
}
