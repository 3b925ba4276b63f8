//! Inference engines.
//!
//! [`DenseEngine`] evaluates every layer as a full convolution each timestep
//! and serves as the reference. [`EventEngine`] models the accelerator: one
//! stage per layer that scatters each incoming spike into an accumulator,
//! then fires all neurons at the timestep barrier. In fixed-point arithmetic
//! both produce bit-identical spikes and potentials.
//!
//! Membrane state persists across timesteps until [`DenseEngine::reset`] /
//! [`EventEngine::reset`].

mod calibrate;
mod compiled;
mod dense;
mod event;

pub use calibrate::calibrate_activity;
pub use dense::DenseEngine;
pub use event::EventEngine;

use thiserror::Error;

use crate::events::{EventError, EventFrame, SpikeList};
use crate::fixedpoint::{dequantize, quantize_value, FixedFormat, TensorError};
use crate::model::{ModelError, NetworkSpec, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arithmetic {
    Real,
    Fixed,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input shape {got} does not match network input {expected}")]
    InputShape { expected: Shape, got: Shape },
    #[error("spike input must be binary and raster-sorted: {0}")]
    NotBinary(String),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error("layer {layer} has an unfused batch norm; fuse it before fixed-point inference")]
    UnfusedBatchNorm { layer: usize },
    #[error("the event-driven engine runs in fixed-point arithmetic only")]
    RequiresFixed,
    #[error("timestep {timestep} out of range (run has {timesteps})")]
    TimestepOutOfRange { timestep: usize, timesteps: usize },
}

/// Membrane potentials of every layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Potentials {
    Real(Vec<Vec<f64>>),
    /// Raw values in each layer's potential format.
    Fixed(Vec<Vec<i64>>),
}

/// Result of one timestep.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepOutput {
    /// Output spikes of each layer, raster-ordered.
    pub spikes: Vec<SpikeList>,
    /// Saturation events per layer during this step.
    pub saturations: Vec<u64>,
}

impl StepOutput {
    pub fn counts(&self) -> Vec<u64> {
        self.spikes.iter().map(|s| s.len() as u64).collect()
    }

    pub fn total(&self) -> u64 {
        self.spikes.iter().map(|s| s.len() as u64).sum()
    }
}

/// One received spike in the event-driven pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TraceEntry {
    pub timestep: u32,
    /// Receiving stage; `layers` denotes spikes leaving the last layer.
    pub layer: u16,
    /// Coordinate in the receiving stage's input (the sender's output).
    pub source: SpikeCoord,
    /// Membrane updates performed for this spike.
    pub updates: u32,
}

pub use crate::events::SpikeCoord;

/// Ordered log of every spike delivered between stages.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpikeTrace {
    pub layers: usize,
    /// Timesteps covered, including ones without any spike.
    pub timesteps: usize,
    pub entries: Vec<TraceEntry>,
}

impl SpikeTrace {
    pub fn new(layers: usize) -> Self {
        SpikeTrace {
            layers,
            timesteps: 0,
            entries: Vec::new(),
        }
    }

    pub fn total_updates(&self) -> u64 {
        self.entries.iter().map(|e| e.updates as u64).sum()
    }

    /// Spikes received by each stage (the last slot counts network outputs).
    pub fn spikes_per_layer(&self) -> Vec<u64> {
        let mut counts = vec![0; self.layers + 1];
        for e in &self.entries {
            counts[e.layer as usize] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub arithmetic: Arithmetic,
    /// `[timestep][layer]` output spikes.
    pub spikes: Vec<Vec<SpikeList>>,
    /// Total output spikes per layer.
    pub layer_spikes: Vec<u64>,
    pub total_spikes: u64,
    /// Spiking neurons per layer.
    pub neurons: Vec<usize>,
    pub saturations: Vec<u64>,
    pub extraction_layers: Vec<usize>,
    pub output_shapes: Vec<Shape>,
    pub potential_formats: Vec<FixedFormat>,
    pub final_potentials: Potentials,
}

impl RunResult {
    fn new(spec: &NetworkSpec, arithmetic: Arithmetic, potentials: Potentials) -> Result<Self, EngineError> {
        let shapes: Vec<Shape> = spec.geometries()?.iter().map(|g| g.output).collect();
        Ok(RunResult {
            arithmetic,
            spikes: Vec::new(),
            layer_spikes: vec![0; shapes.len()],
            total_spikes: 0,
            neurons: shapes.iter().map(Shape::len).collect(),
            saturations: vec![0; shapes.len()],
            extraction_layers: spec.extraction_layers(),
            potential_formats: spec.layers.iter().map(|l| l.formats.potentials).collect(),
            output_shapes: shapes,
            final_potentials: potentials,
        })
    }

    fn push(&mut self, step: StepOutput) {
        for (l, s) in step.spikes.iter().enumerate() {
            self.layer_spikes[l] += s.len() as u64;
            self.total_spikes += s.len() as u64;
            self.saturations[l] += step.saturations[l];
        }
        self.spikes.push(step.spikes);
    }

    pub fn timesteps(&self) -> usize {
        self.spikes.len()
    }

    /// `total_spikes / (neurons * timesteps)` as a percentage.
    pub fn activity_percent(&self) -> f64 {
        let neurons: usize = self.neurons.iter().sum();
        crate::model::activity_percent(self.total_spikes, neurons as u64, self.timesteps())
    }
}

/// A dequantized binary feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub layer: usize,
    pub shape: Shape,
    /// Row-major `(channel, y, x)`, each 0.0 or 1.0.
    pub values: Vec<f64>,
}

/// Feature maps of the extraction layers at `timestep`, converted to reals.
pub fn extract_features(result: &RunResult, timestep: usize) -> Result<Vec<FeatureMap>, EngineError> {
    let step = result.spikes.get(timestep).ok_or(EngineError::TimestepOutOfRange {
        timestep,
        timesteps: result.timesteps(),
    })?;
    result
        .extraction_layers
        .iter()
        .map(|&layer| {
            let shape = result.output_shapes[layer];
            let one = match result.arithmetic {
                Arithmetic::Real => 1.0,
                Arithmetic::Fixed => dequantize(quantize_value(1.0, result.potential_formats[layer])),
            };
            let mut values = vec![0.0; shape.len()];
            for s in &step[layer].entries {
                values[shape.index(s.c as usize, s.y as usize, s.x as usize)] = one;
            }
            Ok(FeatureMap { layer, shape, values })
        })
        .collect()
}

/// Runs the dense engine over a frame sequence from a zeroed state.
pub fn run_dense(spec: &NetworkSpec, frames: &[EventFrame], arithmetic: Arithmetic) -> Result<RunResult, EngineError> {
    let mut engine = DenseEngine::new(spec, arithmetic)?;
    let mut steps = Vec::with_capacity(frames.len());
    for frame in frames {
        steps.push(engine.step(frame)?);
    }
    let mut result = RunResult::new(spec, arithmetic, engine.potentials())?;
    steps.into_iter().for_each(|s| result.push(s));
    Ok(result)
}

/// Runs the event-driven engine (fixed point) over spike lists from a zeroed state.
pub fn run_event_driven(spec: &NetworkSpec, inputs: &[SpikeList]) -> Result<(RunResult, SpikeTrace), EngineError> {
    let mut engine = EventEngine::new(spec)?;
    let mut trace = SpikeTrace::new(spec.layers.len());
    let mut steps = Vec::with_capacity(inputs.len());
    for input in inputs {
        steps.push(engine.step(input, Some(&mut trace))?);
    }
    let mut result = RunResult::new(spec, Arithmetic::Fixed, engine.potentials())?;
    steps.into_iter().for_each(|s| result.push(s));
    Ok((result, trace))
}
