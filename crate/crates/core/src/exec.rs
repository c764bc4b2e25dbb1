//! Functional execution of a whole graph on the reference kernels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ir::{LayerSpec, ModelGraph, TensorShape};
use crate::numerics::{
    activation_forward, conv_forward, dense_forward, norm_forward, tconv_forward_dense, Kernel, Matrix, NormAffine,
    Tensor,
};
use crate::sparse::tconv_forward_sparse;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Dense { weight: Matrix, bias: Option<Vec<f64>> },
    Conv { kernel: Kernel, norm: Option<NormAffine> },
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<LayerParams>,
}

impl ModelParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, norm affine pairs near identity.
    pub fn random(graph: &ModelGraph, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = graph
            .layers()
            .iter()
            .map(|layer| match layer {
                LayerSpec::Dense {
                    in_features,
                    out_features,
                    has_bias,
                } => {
                    let bound = 1.0 / (*in_features as f64).sqrt();
                    let data = (0..in_features * out_features)
                        .map(|_| rng.random_range(-bound..=bound))
                        .collect();
                    LayerParams::Dense {
                        weight: Matrix::new(*out_features, *in_features, data).expect("sizes agree"),
                        bias: has_bias.then(|| (0..*out_features).map(|_| rng.random_range(-bound..=bound)).collect()),
                    }
                }
                LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => {
                    let bound = 1.0 / ((c.in_ch * c.kernel * c.kernel) as f64).sqrt();
                    let kernel = Kernel::from_fn(c.out_ch, c.in_ch, c.kernel, |_, _, _, _| rng.random_range(-bound..=bound));
                    let norm = c.follow_norm.as_ref().map(|_| NormAffine {
                        gamma: (0..c.out_ch).map(|_| rng.random_range(0.5..1.5)).collect(),
                        beta: (0..c.out_ch).map(|_| rng.random_range(-0.1..0.1)).collect(),
                    });
                    LayerParams::Conv { kernel, norm }
                }
                _ => LayerParams::None,
            })
            .collect();
        ModelParams { layers }
    }
}

/// How transposed convolutions are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TconvPath {
    Dense,
    Sparse,
}

/// A random input in `[-1, 1]` for the graph.
pub fn random_input(graph: &ModelGraph, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(graph.input_shape(), |_, _, _| rng.random_range(-1.0..=1.0))
}

/// Runs every layer; returns the output of each.
pub fn execute_graph(graph: &ModelGraph, params: &ModelParams, input: &Tensor, path: TconvPath) -> Result<Vec<Tensor>> {
    if input.shape() != graph.input_shape() {
        return Err(Error::Shape(format!(
            "graph expects input {}, got {}",
            graph.input_shape(),
            input.shape()
        )));
    }
    if params.layers.len() != graph.layers().len() {
        return Err(Error::Shape(format!(
            "{} parameter sets for {} layers",
            params.layers.len(),
            graph.layers().len()
        )));
    }
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.layers().len());
    for (i, (layer, p)) in graph.layers().iter().zip(&params.layers).enumerate() {
        let x = outputs.last().unwrap_or(input);
        let y = match (layer, p) {
            (LayerSpec::Dense { .. }, LayerParams::Dense { weight, bias }) => dense_forward(x, weight, bias.as_deref())?,
            (LayerSpec::Conv2d(c), LayerParams::Conv { kernel, norm }) => {
                let y = conv_forward(x, kernel, c.stride, c.padding)?;
                match (&c.follow_norm, norm) {
                    (Some(spec), Some(affine)) => norm_forward(&y, spec, affine)?,
                    _ => y,
                }
            }
            (LayerSpec::TransposedConv2d(c), LayerParams::Conv { kernel, norm }) => {
                let y = match path {
                    TconvPath::Dense => tconv_forward_dense(x, kernel, c.stride, c.padding)?,
                    TconvPath::Sparse => tconv_forward_sparse(x, kernel, c.stride, c.padding)?,
                };
                match (&c.follow_norm, norm) {
                    (Some(spec), Some(affine)) => norm_forward(&y, spec, affine)?,
                    _ => y,
                }
            }
            (LayerSpec::Activation(a), _) => activation_forward(x, *a),
            (LayerSpec::ResidualAdd { source }, _) => x.add(&outputs[*source])?,
            _ => return Err(Error::Shape(format!("layer {i}: parameters do not match the layer kind"))),
        };
        let expected: TensorShape = graph.shapes()[i];
        outputs.push(if y.shape() == expected {
            y
        } else {
            y.reshaped(expected)?
        });
    }
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{Activation, ConvSpec, NormKind, NormSpec};

    #[test]
    fn sparse_and_dense_paths_agree() {
        let g = ModelGraph::new(
            "g",
            TensorShape::vector(6),
            vec![
                LayerSpec::Dense {
                    in_features: 6,
                    out_features: 8,
                    has_bias: true,
                },
                LayerSpec::Activation(Activation::Relu),
                LayerSpec::TransposedConv2d(
                    ConvSpec::new(8, 3, 4, 1, 0).with_norm(NormSpec::new(NormKind::InstanceNorm)),
                ),
                LayerSpec::TransposedConv2d(ConvSpec::new(3, 2, 3, 2, 1)),
                LayerSpec::Activation(Activation::Tanh),
            ],
        )
        .unwrap();
        let p = ModelParams::random(&g, 1);
        let x = random_input(&g, 2);
        let a = execute_graph(&g, &p, &x, TconvPath::Dense).unwrap();
        let b = execute_graph(&g, &p, &x, TconvPath::Sparse).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.last().unwrap().shape(), g.output_shape());
    }

    #[test]
    fn residual_adds_source_output() {
        let c = ConvSpec::new(2, 2, 3, 1, 1);
        let g = ModelGraph::new(
            "r",
            TensorShape::new(2, 4, 4).unwrap(),
            vec![
                LayerSpec::Conv2d(c.clone()),
                LayerSpec::Conv2d(c),
                LayerSpec::ResidualAdd { source: 0 },
            ],
        )
        .unwrap();
        let p = ModelParams::random(&g, 3);
        let out = execute_graph(&g, &p, &random_input(&g, 4), TconvPath::Dense).unwrap();
        assert_eq!(out[2], out[1].add(&out[0]).unwrap());
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let g = ModelGraph::new("d", TensorShape::vector(3), vec![LayerSpec::Activation(Activation::Relu)]).unwrap();
        let p = ModelParams::random(&g, 0);
        let x = Tensor::vector(vec![0.0; 4]).unwrap();
        assert!(execute_graph(&g, &p, &x, TconvPath::Dense).is_err());
    }
}
