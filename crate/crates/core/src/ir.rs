//! GAN layer graphs: layer specifications, shape inference, MAC and
//! parameter accounting, and the TOML model-file format.
//!
//! A graph is a linear chain of layers. The only non-chain edge is
//! [`LayerSpec::ResidualAdd`], which adds the output of an earlier layer to
//! the running activation. Normalization is not a standalone layer: it is
//! attached to the convolution that feeds it through `follow_norm`.
//!
//! Model file layout (TOML):
//!
//! ```toml
//! name = "tiny"
//! input_shape = { channels = 2, height = 1, width = 1 }
//!
//! [[layers]]
//! type = "dense"
//! in_features = 2
//! out_features = 3
//! has_bias = true
//!
//! [[layers]]
//! type = "activation"
//! fn = "leaky_relu"
//! slope = 0.2
//! ```
//!
//! Convolution layers use `type = "conv2d"` or `type = "transposed_conv2d"`
//! with `in_ch`, `out_ch`, `kernel`, `stride`, `padding` and an optional
//! `follow_norm = { kind = "instance_norm", epsilon = 1e-5 }`.
//! Residual additions use `type = "residual_add"` with `source = <layer index>`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_NORM_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TensorShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl TensorShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = TensorShape {
            channels,
            height,
            width,
        };
        if !shape.is_valid() {
            return Err(Error::Shape(format!("all dimensions must be >= 1, got {shape}")));
        }
        Ok(shape)
    }

    /// A flat feature vector (`height = width = 1`).
    pub fn vector(len: usize) -> Self {
        TensorShape {
            channels: len,
            height: 1,
            width: 1,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.channels >= 1 && self.height >= 1 && self.width >= 1
    }

    pub fn elements(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    BatchNorm,
    InstanceNorm,
}

fn default_epsilon() -> f64 {
    DEFAULT_NORM_EPSILON
}

/// Normalization applied to a convolution's output.
///
/// Batch norm uses stored running statistics (`running_mean`/`running_var`,
/// defaulting to 0 and 1 per channel); instance norm computes its statistics
/// from the activation itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub kind: NormKind,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub running_var: Option<Vec<f64>>,
}

impl NormSpec {
    pub fn new(kind: NormKind) -> Self {
        NormSpec {
            kind,
            epsilon: DEFAULT_NORM_EPSILON,
            running_mean: None,
            running_var: None,
        }
    }

    fn validate(&self, channels: usize) -> std::result::Result<(), String> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(format!("norm epsilon must be > 0, got {}", self.epsilon));
        }
        for (label, stats) in [("running_mean", &self.running_mean), ("running_var", &self.running_var)] {
            if let Some(v) = stats {
                if self.kind == NormKind::InstanceNorm {
                    return Err(format!("{label} is only meaningful for batch_norm"));
                }
                if v.len() != channels {
                    return Err(format!("{label} has {} entries, expected {channels}", v.len()));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(format!("{label} contains non-finite values"));
                }
            }
        }
        if let Some(var) = &self.running_var {
            if var.iter().any(|&v| v < 0.0) {
                return Err("running_var must be non-negative".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "fn", rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

/// Hyperparameters shared by direct and transposed 2-D convolutions.
/// Kernels are square; stride and padding apply to both spatial axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow_norm: Option<NormSpec>,
}

impl ConvSpec {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            follow_norm: None,
        }
    }

    pub fn with_norm(mut self, norm: NormSpec) -> Self {
        self.follow_norm = Some(norm);
        self
    }

    pub fn weight_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel * self.kernel
    }

    fn validate_hyper(&self) -> std::result::Result<(), String> {
        if self.in_ch == 0 || self.out_ch == 0 {
            return Err("channel counts must be >= 1".into());
        }
        if self.kernel == 0 {
            return Err("kernel must be >= 1".into());
        }
        if self.stride == 0 {
            return Err("stride must be >= 1".into());
        }
        if self.padding > self.kernel - 1 {
            return Err(format!(
                "padding {} exceeds kernel - 1 = {}",
                self.padding,
                self.kernel - 1
            ));
        }
        if let Some(norm) = &self.follow_norm {
            norm.validate(self.out_ch)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        has_bias: bool,
    },
    Conv2d(ConvSpec),
    TransposedConv2d(ConvSpec),
    Activation(Activation),
    ResidualAdd {
        source: usize,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d(_) => "conv2d",
            LayerSpec::TransposedConv2d(_) => "transposed_conv2d",
            LayerSpec::Activation(_) => "activation",
            LayerSpec::ResidualAdd { .. } => "residual_add",
        }
    }

    /// Layers that perform multiply-accumulate work on the photonic units.
    pub fn is_compute(&self) -> bool {
        matches!(
            self,
            LayerSpec::Dense { .. } | LayerSpec::Conv2d(_) | LayerSpec::TransposedConv2d(_)
        )
    }

    pub fn conv(&self) -> Option<&ConvSpec> {
        match self {
            LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => Some(c),
            _ => None,
        }
    }

    /// Trainable parameters: weights, biases and the affine pair of any
    /// attached normalization.
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense {
                in_features,
                out_features,
                has_bias,
            } => in_features * out_features + if *has_bias { *out_features } else { 0 },
            LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => {
                c.weight_count() + if c.follow_norm.is_some() { 2 * c.out_ch } else { 0 }
            }
            LayerSpec::Activation(_) | LayerSpec::ResidualAdd { .. } => 0,
        }
    }

    /// Number of weight elements consumed by the layer's MACs.
    pub fn weight_elements(&self) -> usize {
        match self {
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => in_features * out_features,
            LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => c.weight_count(),
            _ => 0,
        }
    }
}

/// Output length of a direct convolution along one axis, `None` when the
/// padded input is shorter than the kernel.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output length of a transposed convolution along one axis:
/// `(i - 1) * s - 2p + k`, `None` when that is below 1.
pub fn tconv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if input == 0 {
        return None;
    }
    let grown = (input - 1) * stride + kernel;
    if grown < 2 * padding + 1 {
        return None;
    }
    Some(grown - 2 * padding)
}

/// Side length of the zero-inserted, border-padded map a transposed
/// convolution is evaluated over: `i + (i - 1)(s - 1) + 2(k - p - 1)`.
pub fn tconv_expanded_len(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    input + (input - 1) * (stride - 1) + 2 * (kernel - padding - 1)
}

/// Output shape of one layer given its input shape. `prior` holds the output
/// shapes of all earlier layers (needed by residual additions).
pub fn layer_output_shape(
    index: usize,
    layer: &LayerSpec,
    input: TensorShape,
    prior: &[TensorShape],
) -> Result<TensorShape> {
    match layer {
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => {
            if *in_features == 0 || *out_features == 0 {
                return Err(Error::layer(index, "dense features must be >= 1"));
            }
            if input.elements() != *in_features {
                return Err(Error::layer(
                    index,
                    format!(
                        "dense expects {in_features} input features, incoming shape {input} has {}",
                        input.elements()
                    ),
                ));
            }
            Ok(TensorShape::vector(*out_features))
        }
        LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => {
            c.validate_hyper().map_err(|m| Error::layer(index, m))?;
            if input.channels != c.in_ch {
                return Err(Error::layer(
                    index,
                    format!("expects {} input channels, incoming shape is {input}", c.in_ch),
                ));
            }
            let transposed = matches!(layer, LayerSpec::TransposedConv2d(_));
            let axis = |len: usize| {
                if transposed {
                    tconv_output_len(len, c.kernel, c.stride, c.padding)
                } else {
                    conv_output_len(len, c.kernel, c.stride, c.padding)
                }
            };
            match (axis(input.height), axis(input.width)) {
                (Some(h), Some(w)) if h >= 1 && w >= 1 => Ok(TensorShape {
                    channels: c.out_ch,
                    height: h,
                    width: w,
                }),
                _ => Err(Error::layer(
                    index,
                    format!(
                        "kernel {} / stride {} / padding {} produce an empty output from {input}",
                        c.kernel, c.stride, c.padding
                    ),
                )),
            }
        }
        LayerSpec::Activation(act) => {
            if let Activation::LeakyRelu { slope } = act {
                if !(*slope > 0.0 && *slope < 1.0) {
                    return Err(Error::layer(
                        index,
                        format!("leaky_relu slope must lie in (0, 1), got {slope}"),
                    ));
                }
            }
            Ok(input)
        }
        LayerSpec::ResidualAdd { source } => {
            if *source >= index {
                return Err(Error::layer(
                    index,
                    format!("residual source {source} must precede the add"),
                ));
            }
            let src = prior[*source];
            if src != input {
                return Err(Error::layer(
                    index,
                    format!("residual source {source} has shape {src}, incoming shape is {input}"),
                ));
            }
            Ok(input)
        }
    }
}

/// Per-layer output shapes for a layer list, failing on the first
/// inconsistent layer.
pub fn infer_layer_shapes(input: TensorShape, layers: &[LayerSpec]) -> Result<Vec<TensorShape>> {
    if !input.is_valid() {
        return Err(Error::graph(format!("input shape {input} has a zero dimension")));
    }
    let mut shapes: Vec<TensorShape> = Vec::with_capacity(layers.len());
    let mut current = input;
    for (i, layer) in layers.iter().enumerate() {
        current = layer_output_shape(i, layer, current, &shapes)?;
        shapes.push(current);
    }
    Ok(shapes)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    name: String,
    input_shape: TensorShape,
    #[serde(default)]
    layers: Vec<LayerSpec>,
}

/// A validated layer graph. Construction runs shape inference end to end,
/// so every `ModelGraph` value is known to be consistent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelGraph {
    name: String,
    input_shape: TensorShape,
    layers: Vec<LayerSpec>,
    #[serde(skip)]
    shapes: Vec<TensorShape>,
}

impl ModelGraph {
    pub fn new(name: impl Into<String>, input_shape: TensorShape, layers: Vec<LayerSpec>) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return Err(Error::graph("model has no layers"));
        }
        let shapes = infer_layer_shapes(input_shape, &layers)?;
        Ok(ModelGraph {
            name,
            input_shape,
            layers,
            shapes,
        })
    }

    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        ModelGraph::new(file.name, file.input_shape, file.layers)
    }

    pub fn to_toml_string(&self) -> String {
        let file = ModelFile {
            name: self.name.clone(),
            input_shape: self.input_shape,
            layers: self.layers.clone(),
        };
        toml::to_string(&file).expect("model graphs always serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> TensorShape {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer.
    pub fn shapes(&self) -> &[TensorShape] {
        &self.shapes
    }

    /// Input shape seen by layer `index`.
    pub fn layer_input(&self, index: usize) -> TensorShape {
        if index == 0 {
            self.input_shape
        } else {
            self.shapes[index - 1]
        }
    }

    pub fn output_shape(&self) -> TensorShape {
        *self.shapes.last().expect("graphs are non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn has_transposed_conv(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::TransposedConv2d(_)))
    }
}

/// Reads and validates a model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelGraph::from_toml_str(&text, &path.display().to_string())
}

/// Loads every `*.toml` model in a directory, sorted by file name.
pub fn load_model_dir(dir: impl AsRef<Path>) -> Result<Vec<ModelGraph>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(load_model).collect()
}

pub fn infer_shapes(graph: &ModelGraph) -> Vec<TensorShape> {
    graph.shapes().to_vec()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MacCount {
    pub dense_macs: u64,
    pub per_layer: Vec<u64>,
}

/// Multiply-accumulates of one layer when executed densely. Transposed
/// convolutions are counted over the zero-inserted map, i.e. every output
/// element costs `in_ch * k * k` MACs.
pub fn layer_dense_macs(layer: &LayerSpec, output: TensorShape) -> u64 {
    match layer {
        LayerSpec::Dense {
            in_features,
            out_features,
            ..
        } => (*in_features as u64) * (*out_features as u64),
        LayerSpec::Conv2d(c) | LayerSpec::TransposedConv2d(c) => {
            output.elements() as u64 * (c.in_ch * c.kernel * c.kernel) as u64
        }
        LayerSpec::Activation(_) | LayerSpec::ResidualAdd { .. } => 0,
    }
}

pub fn count_macs(graph: &ModelGraph) -> MacCount {
    let per_layer: Vec<u64> = graph
        .layers()
        .iter()
        .zip(graph.shapes())
        .map(|(l, s)| layer_dense_macs(l, *s))
        .collect();
    MacCount {
        dense_macs: per_layer.iter().sum(),
        per_layer,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(k: usize, s: usize, p: usize) -> ConvSpec {
        ConvSpec::new(1, 1, k, s, p)
    }

    #[test]
    fn smallest_legal_graph() {
        let text = r#"
name = "one"
input_shape = { channels = 2, height = 1, width = 1 }
[[layers]]
type = "dense"
in_features = 2
out_features = 3
"#;
        let g = ModelGraph::from_toml_str(text, "inline").unwrap();
        assert_eq!(g.layers().len(), 1);
        assert_eq!(g.output_shape(), TensorShape::vector(3));
    }

    #[test]
    fn tconv_output_size() {
        let s = layer_output_shape(
            0,
            &LayerSpec::TransposedConv2d(conv(3, 2, 1)),
            TensorShape::new(1, 2, 2).unwrap(),
            &[],
        )
        .unwrap();
        assert_eq!((s.height, s.width), (3, 3));
        assert_eq!(tconv_expanded_len(2, 3, 2, 1), 5);
    }

    #[test]
    fn same_padding_conv_keeps_size() {
        let s = layer_output_shape(
            0,
            &LayerSpec::Conv2d(conv(3, 1, 1)),
            TensorShape::new(1, 5, 5).unwrap(),
            &[],
        )
        .unwrap();
        assert_eq!((s.height, s.width), (5, 5));
    }

    #[test]
    fn dense_shape_and_macs() {
        let g = ModelGraph::new(
            "d",
            TensorShape::vector(4),
            vec![LayerSpec::Dense {
                in_features: 4,
                out_features: 7,
                has_bias: false,
            }],
        )
        .unwrap();
        assert_eq!(g.output_shape(), TensorShape::vector(7));
        assert_eq!(count_macs(&g).dense_macs, 28);
    }

    #[test]
    fn conv_and_tconv_macs() {
        let g = ModelGraph::new(
            "c",
            TensorShape::new(1, 5, 5).unwrap(),
            vec![LayerSpec::Conv2d(conv(3, 1, 1))],
        )
        .unwrap();
        assert_eq!(count_macs(&g).dense_macs, 225);
        let g = ModelGraph::new(
            "t",
            TensorShape::new(1, 2, 2).unwrap(),
            vec![LayerSpec::TransposedConv2d(conv(3, 2, 1))],
        )
        .unwrap();
        assert_eq!(count_macs(&g).dense_macs, 81);
    }

    #[test]
    fn padding_equal_to_kernel_is_rejected_with_layer_index() {
        let text = r#"
name = "bad"
input_shape = { channels = 1, height = 8, width = 8 }
[[layers]]
type = "activation"
fn = "relu"
[[layers]]
type = "conv2d"
in_ch = 1
out_ch = 1
kernel = 3
stride = 1
padding = 3
"#;
        match ModelGraph::from_toml_str(text, "inline") {
            Err(Error::Validation {
                location: crate::error::Location::Layer(1),
                message,
            }) => assert!(message.contains("padding"), "{message}"),
            other => panic!("expected layer-1 validation error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        let err = ModelGraph::from_toml_str("name = [", "broken.toml").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        let err = ModelGraph::from_toml_str(
            "name='x'\ninput_shape={channels=1,height=1,width=1}\n[[layers]]\ntype='pool'\n",
            "x",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn leaky_slope_bounds() {
        for slope in [0.0, 1.0, -0.1, 1.5] {
            let err = ModelGraph::new(
                "a",
                TensorShape::vector(2),
                vec![LayerSpec::Activation(Activation::LeakyRelu { slope })],
            )
            .unwrap_err();
            assert!(matches!(err, Error::Validation { .. }));
        }
    }

    #[test]
    fn residual_rules() {
        let c = LayerSpec::Conv2d(ConvSpec::new(2, 2, 3, 1, 1));
        let ok = ModelGraph::new(
            "r",
            TensorShape::new(2, 4, 4).unwrap(),
            vec![c.clone(), c.clone(), LayerSpec::ResidualAdd { source: 0 }],
        );
        assert!(ok.is_ok());
        let forward_ref = ModelGraph::new(
            "r",
            TensorShape::new(2, 4, 4).unwrap(),
            vec![c.clone(), LayerSpec::ResidualAdd { source: 1 }],
        );
        assert!(forward_ref.is_err());
        let mismatch = ModelGraph::new(
            "r",
            TensorShape::new(2, 4, 4).unwrap(),
            vec![
                c.clone(),
                LayerSpec::Conv2d(ConvSpec::new(2, 2, 3, 2, 1)),
                LayerSpec::ResidualAdd { source: 0 },
            ],
        );
        assert!(mismatch.is_err());
    }

    #[test]
    fn zero_epsilon_rejected() {
        let mut norm = NormSpec::new(NormKind::InstanceNorm);
        norm.epsilon = 0.0;
        let err = ModelGraph::new(
            "n",
            TensorShape::new(1, 4, 4).unwrap(),
            vec![LayerSpec::Conv2d(conv(3, 1, 1).with_norm(norm))],
        )
        .unwrap_err();
        assert!(err.to_string().contains("epsilon"));
    }

    #[test]
    fn toml_round_trip_keeps_every_field() {
        let graph = ModelGraph::new(
            "rt",
            TensorShape::new(3, 4, 4).unwrap(),
            vec![
                LayerSpec::Conv2d(ConvSpec::new(3, 4, 3, 1, 1).with_norm(NormSpec::new(NormKind::InstanceNorm))),
                LayerSpec::Activation(Activation::LeakyRelu { slope: 0.2 }),
                LayerSpec::TransposedConv2d(ConvSpec::new(4, 2, 4, 2, 1)),
                LayerSpec::Activation(Activation::Tanh),
                LayerSpec::Dense {
                    in_features: 128,
                    out_features: 5,
                    has_bias: true,
                },
                LayerSpec::Activation(Activation::Sigmoid),
            ],
        )
        .unwrap();
        let text = graph.to_toml_string();
        let back = ModelGraph::from_toml_str(&text, "rt").unwrap();
        assert_eq!(graph, back);
    }
}
