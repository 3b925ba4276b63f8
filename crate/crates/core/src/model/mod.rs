//! Declarative network description and everything derived from it.

mod config;
mod file;
mod fuse;
mod init;
mod shapes;
mod stats;

pub use config::{parse_model_config, to_config_text};
pub use file::{load_model, save_model, FORMAT_VERSION, MODEL_MAGIC};
pub use fuse::{fuse_batchnorm, fuse_network, FusedConv};
pub use init::{quantize_network, randomize_weights, WeightInit};
pub use shapes::{infer_shapes, ConvGeometry};
pub use stats::{activity_percent, model_stats, LayerStats, ModelStats};

use std::fmt;

use thiserror::Error;

use crate::fixedpoint::{FixedFormat, FixedTensor, FormatError, TensorError};
use crate::neuron::{NeuronError, NeuronParams};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown layer kind `{token}`")]
    UnknownLayerKind {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("line {line}: non-positive {what}")]
    NonPositive { line: usize, what: &'static str },
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("layer {layer}: batch norm: {message}")]
    BatchNorm { layer: usize, message: String },
    #[error("layer {layer}: weights: {message}")]
    Weights { layer: usize, message: String },
    #[error("layer {layer}: {source}")]
    Neuron {
        layer: usize,
        #[source]
        source: NeuronError,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("bad magic: not a model file")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    Version(u16),
    #[error("truncated payload")]
    Truncated,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// Activation tensor shape. One-dimensional networks use `height == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    Conv1d,
    FullyConnected,
    AvgPool,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::Conv1d => "conv1d",
            LayerKind::FullyConnected => "fc",
            LayerKind::AvgPool => "avgpool",
        }
    }

    /// Whether the layer owns trainable weights.
    pub fn has_weights(self) -> bool {
        !matches!(self, LayerKind::AvgPool)
    }
}

/// Storage formats for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Formats {
    /// Weights and biases.
    pub weights: FixedFormat,
    /// Membrane potentials, thresholds and leak constants.
    pub potentials: FixedFormat,
}

impl Default for Formats {
    fn default() -> Self {
        Formats {
            weights: FixedFormat::Q8_8,
            potentials: FixedFormat::Q8_8,
        }
    }
}

/// Batch normalization applied to the layer's *input* channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub epsilon: f64,
}

impl BatchNormParams {
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            variance: vec![1.0; channels],
            epsilon: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-channel `(scale, shift)` so that `bn(x) = scale * x + shift`.
    pub fn affine(&self) -> Result<Vec<(f64, f64)>, String> {
        let n = self.gamma.len();
        if self.beta.len() != n || self.mean.len() != n || self.variance.len() != n {
            return Err("parameter vectors differ in length".into());
        }
        (0..n)
            .map(|c| {
                let var = self.variance[c];
                if var < 0.0 || var.is_nan() {
                    return Err(format!("negative variance {var} on channel {c}"));
                }
                let denom = (var + self.epsilon).sqrt();
                if !(denom > 0.0) {
                    return Err(format!("variance + epsilon is zero on channel {c}"));
                }
                let scale = self.gamma[c] / denom;
                Ok((scale, self.beta[c] - self.mean[c] * scale))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Ignored by pooling, which keeps its input channel count.
    pub out_channels: usize,
    /// `(kh, kw)`; unused by fully connected layers, whose kernel spans the input.
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub has_bias: bool,
    pub neuron: NeuronParams,
    pub formats: Formats,
    pub batchnorm: Option<BatchNormParams>,
    /// Output spikes of this layer are a feature-extraction point.
    pub extract: bool,
    pub npu_count: usize,
}

impl LayerSpec {
    pub fn conv2d(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv2d,
            out_channels,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            padding: (padding, padding),
            has_bias: true,
            neuron: NeuronParams::default(),
            formats: Formats::default(),
            batchnorm: None,
            extract: false,
            npu_count: 1,
        }
    }

    pub fn conv1d(out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv1d,
            kernel: (1, kernel),
            stride: (1, stride),
            padding: (0, padding),
            ..Self::conv2d(out_channels, 1, 1, 0)
        }
    }

    pub fn fully_connected(out_channels: usize) -> Self {
        LayerSpec {
            kind: LayerKind::FullyConnected,
            kernel: (0, 0),
            ..Self::conv2d(out_channels, 1, 1, 0)
        }
    }

    pub fn avgpool(kernel: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::AvgPool,
            out_channels: 0,
            has_bias: false,
            ..Self::conv2d(0, kernel, stride, 0)
        }
    }

    pub fn with_neuron(mut self, neuron: NeuronParams) -> Self {
        self.neuron = neuron;
        self
    }

    pub fn extracted(mut self) -> Self {
        self.extract = true;
        self
    }
}

/// Real-valued row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RealTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RealTensor {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        RealTensor {
            shape,
            data: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(RealTensor),
    Fixed(FixedTensor),
}

impl Tensor {
    pub fn shape(&self) -> &[usize] {
        match self {
            Tensor::Real(t) => &t.shape,
            Tensor::Fixed(t) => t.shape(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_fixed(&self) -> bool {
        matches!(self, Tensor::Fixed(_))
    }

    /// Values as reals (dequantized when fixed).
    pub fn to_real(&self) -> Vec<f64> {
        match self {
            Tensor::Real(t) => t.data.clone(),
            Tensor::Fixed(t) => t.dequantize(),
        }
    }
}

/// Parameters of one layer. Weight layout is `(out, in, kh, kw)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerWeights {
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub name: String,
    pub input_shape: Shape,
    /// Input declared as `(channels, length)`.
    pub one_dimensional: bool,
    /// Timesteps per output.
    pub timesteps: usize,
    /// Formats in effect before any per-layer override.
    pub formats: Formats,
    pub layers: Vec<LayerSpec>,
    pub weights: Vec<LayerWeights>,
}

impl NetworkSpec {
    /// Builds a spec with zero-initialized weights.
    pub fn new(name: impl Into<String>, input_shape: Shape, layers: Vec<LayerSpec>) -> Result<Self, ModelError> {
        let mut spec = NetworkSpec {
            name: name.into(),
            input_shape,
            one_dimensional: false,
            timesteps: 1,
            formats: Formats::default(),
            layers,
            weights: Vec::new(),
        };
        spec.reset_weights()?;
        Ok(spec)
    }

    /// Replaces all parameters with real zeros of the right shapes.
    pub fn reset_weights(&mut self) -> Result<(), ModelError> {
        let geoms = self.geometries()?;
        self.weights = self
            .layers
            .iter()
            .zip(&geoms)
            .map(|(layer, g)| {
                if !layer.kind.has_weights() {
                    return LayerWeights::default();
                }
                LayerWeights {
                    weight: Some(Tensor::Real(RealTensor::zeros(g.weight_shape()))),
                    bias: layer
                        .has_bias
                        .then(|| Tensor::Real(RealTensor::zeros(vec![g.output.channels]))),
                }
            })
            .collect();
        Ok(())
    }

    /// Geometry of every layer, in order.
    pub fn geometries(&self) -> Result<Vec<ConvGeometry>, ModelError> {
        let mut input = self.input_shape;
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let g = ConvGeometry::new(layer, input).map_err(|message| ModelError::Shape { layer: i, message })?;
            input = g.output;
            out.push(g);
        }
        Ok(out)
    }

    /// Indices of the feature-extraction layers.
    pub fn extraction_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.extract.then_some(i))
            .collect()
    }

    /// Checks weights against shapes and neuron parameters against their formats.
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.timesteps == 0 {
            return Err(ModelError::NonPositive { line: 0, what: "timesteps" });
        }
        let geoms = self.geometries()?;
        if self.weights.len() != self.layers.len() {
            return Err(ModelError::Weights {
                layer: self.weights.len().min(self.layers.len()),
                message: format!("{} weight entries for {} layers", self.weights.len(), self.layers.len()),
            });
        }
        for (i, ((layer, g), w)) in self.layers.iter().zip(&geoms).zip(&self.weights).enumerate() {
            layer
                .neuron
                .validate()
                .map_err(|source| ModelError::Neuron { layer: i, source })?;
            if layer.npu_count == 0 {
                return Err(ModelError::Shape {
                    layer: i,
                    message: "npu count must be at least 1".into(),
                });
            }
            if let Some(bn) = &layer.batchnorm {
                if bn.channels() != g.input.channels {
                    return Err(ModelError::BatchNorm {
                        layer: i,
                        message: format!("{} channels, layer input has {}", bn.channels(), g.input.channels),
                    });
                }
                bn.affine().map_err(|message| ModelError::BatchNorm { layer: i, message })?;
            }
            if !layer.kind.has_weights() {
                if w.weight.is_some() || w.bias.is_some() {
                    return Err(ModelError::Weights {
                        layer: i,
                        message: "pooling layers carry no parameters".into(),
                    });
                }
                continue;
            }
            let weight = w.weight.as_ref().ok_or_else(|| ModelError::Weights {
                layer: i,
                message: "missing weight tensor".into(),
            })?;
            if weight.shape() != g.weight_shape().as_slice() {
                return Err(ModelError::Weights {
                    layer: i,
                    message: format!("weight shape {:?}, expected {:?}", weight.shape(), g.weight_shape()),
                });
            }
            match (&w.bias, layer.has_bias) {
                (Some(b), true) if b.shape() == [g.output.channels] => {}
                (None, false) => {}
                (Some(b), true) => {
                    return Err(ModelError::Weights {
                        layer: i,
                        message: format!("bias shape {:?}, expected [{}]", b.shape(), g.output.channels),
                    })
                }
                (b, _) => {
                    return Err(ModelError::Weights {
                        layer: i,
                        message: format!("bias present = {}, declared = {}", b.is_some(), layer.has_bias),
                    })
                }
            }
        }
        Ok(())
    }

    /// Whether every parameter tensor is already fixed-point.
    pub fn is_quantized(&self) -> bool {
        self.weights
            .iter()
            .flat_map(|w| w.weight.iter().chain(w.bias.iter()))
            .all(Tensor::is_fixed)
    }
}
