use super::{LayerKind, ModelError, NetworkSpec, Shape};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerStats {
    pub kind: LayerKind,
    pub input: Shape,
    pub output: Shape,
    pub weights: usize,
    pub biases: usize,
    /// Filters in this layer (0 for pooling).
    pub kernels: usize,
    /// Spiking output elements.
    pub neurons: usize,
    pub extract: bool,
}

impl LayerStats {
    pub fn synapses(&self) -> usize {
        self.weights + self.biases
    }
}

/// Parameter, filter and neuron counts of a network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelStats {
    /// Input elements per timestep.
    pub inputs: usize,
    /// Trainable weights plus biases.
    pub synapses: usize,
    /// Sum of output channels over layers with weights.
    pub kernels: usize,
    /// Sum of spiking output elements (inputs excluded).
    pub neurons: usize,
    pub layers: Vec<LayerStats>,
}

impl ModelStats {
    /// Percentage of neurons spiking per timestep: `spikes / (neurons * timesteps) * 100`.
    pub fn activity_percent(&self, total_spikes: u64, timesteps: usize) -> f64 {
        activity_percent(total_spikes, self.neurons as u64, timesteps)
    }
}

pub fn activity_percent(total_spikes: u64, neurons: u64, timesteps: usize) -> f64 {
    if neurons == 0 || timesteps == 0 {
        return 0.0;
    }
    total_spikes as f64 / (neurons as f64 * timesteps as f64) * 100.0
}

pub fn model_stats(spec: &NetworkSpec) -> Result<ModelStats, ModelError> {
    let layers: Vec<LayerStats> = spec
        .layers
        .iter()
        .zip(spec.geometries()?)
        .map(|(layer, g)| {
            let trainable = layer.kind.has_weights();
            LayerStats {
                kind: layer.kind,
                input: g.input,
                output: g.output,
                weights: if trainable { g.fan_in() * g.output.channels } else { 0 },
                biases: if trainable && layer.has_bias { g.output.channels } else { 0 },
                kernels: if trainable { g.output.channels } else { 0 },
                neurons: g.output.len(),
                extract: layer.extract,
            }
        })
        .collect();
    Ok(ModelStats {
        inputs: spec.input_shape.len(),
        synapses: layers.iter().map(LayerStats::synapses).sum(),
        kernels: layers.iter().map(|l| l.kernels).sum(),
        neurons: layers.iter().map(|l| l.neurons).sum(),
        layers,
    })
}
