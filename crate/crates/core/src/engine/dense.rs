use super::compiled::{CompiledLayer, CompiledNetwork, LayerParams};
use super::{Arithmetic, EngineError, Potentials, StepOutput};
use crate::events::{EventFrame, SpikeCoord, SpikeList};
use crate::fixedpoint::SaturationCounter;
use crate::model::{NetworkSpec, Shape};

/// Timestep-synchronous reference engine: every layer is a full convolution
/// of its input followed by the neuron barrier.
#[derive(Debug, Clone)]
pub struct DenseEngine {
    net: CompiledNetwork,
    real: Vec<Vec<f64>>,
    fixed: Vec<Vec<i64>>,
    timestep: usize,
}

impl DenseEngine {
    pub fn new(spec: &NetworkSpec, arithmetic: Arithmetic) -> Result<Self, EngineError> {
        let net = CompiledNetwork::new(spec, arithmetic)?;
        let sizes: Vec<usize> = net.layers.iter().map(|l| l.geometry.output.len()).collect();
        let (real, fixed) = match arithmetic {
            Arithmetic::Real => (sizes.iter().map(|&n| vec![0.0; n]).collect(), Vec::new()),
            Arithmetic::Fixed => (Vec::new(), sizes.iter().map(|&n| vec![0; n]).collect()),
        };
        Ok(DenseEngine {
            net,
            real,
            fixed,
            timestep: 0,
        })
    }

    pub fn reset(&mut self) {
        self.real.iter_mut().for_each(|v| v.fill(0.0));
        self.fixed.iter_mut().for_each(|v| v.fill(0));
        self.timestep = 0;
    }

    /// Output shape of the last layer.
    pub fn output_shape(&self) -> Shape {
        self.net.layers.last().map_or(self.net.layers[0].geometry.input, |l| l.geometry.output)
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn potentials(&self) -> Potentials {
        match self.net.arithmetic {
            Arithmetic::Real => Potentials::Real(self.real.clone()),
            Arithmetic::Fixed => Potentials::Fixed(self.fixed.clone()),
        }
    }

    /// Advances one timestep. Frame values are spike counts (binary or summed).
    pub fn step(&mut self, frame: &EventFrame) -> Result<StepOutput, EngineError> {
        let expected = self.net.layers[0].geometry.input;
        if frame.shape() != expected {
            return Err(EngineError::InputShape {
                expected,
                got: frame.shape(),
            });
        }
        let mut activation: Vec<u16> = frame.values.clone();
        let mut out = StepOutput::default();
        for (l, layer) in self.net.layers.iter().enumerate() {
            let mut sat = SaturationCounter::new();
            let spikes = match &layer.params {
                LayerParams::Real { .. } => step_real(layer, &activation, &mut self.real[l]),
                LayerParams::Fixed { .. } => {
                    let acc = gather_fixed(layer, &activation);
                    layer.fire_fixed(&acc, &mut self.fixed[l], &mut sat)
                }
            };
            activation = vec![0; layer.geometry.output.len()];
            for s in &spikes {
                activation[layer.geometry.output.index(s.c as usize, s.y as usize, s.x as usize)] = 1;
            }
            out.saturations.push(sat.count);
            out.spikes.push(SpikeList {
                timestep: self.timestep,
                entries: spikes,
            });
        }
        self.timestep += 1;
        Ok(out)
    }
}

/// Visits every in-bounds tap `(c, iy, ix, ky, kx)` of output `(o, oy, ox)`.
#[inline]
fn for_each_tap(layer: &CompiledLayer, o: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, usize, usize)) {
    let g = &layer.geometry;
    let channels = if g.diagonal { o..o + 1 } else { 0..g.input.channels };
    for c in channels {
        for ky in 0..g.kernel.0 {
            let Some(iy) = (oy * g.stride.0 + ky).checked_sub(g.padding.0) else { continue };
            if iy >= g.input.height {
                continue;
            }
            for kx in 0..g.kernel.1 {
                let Some(ix) = (ox * g.stride.1 + kx).checked_sub(g.padding.1) else { continue };
                if ix >= g.input.width {
                    continue;
                }
                f(g.input.index(c, iy, ix), g.weight_index(o, c, ky, kx), c);
            }
        }
    }
}

fn gather_fixed(layer: &CompiledLayer, input: &[u16]) -> Vec<i128> {
    let LayerParams::Fixed { weight, .. } = &layer.params else { unreachable!() };
    let out = layer.geometry.output;
    let mut acc = vec![0i128; out.len()];
    for o in 0..out.channels {
        for oy in 0..out.height {
            for ox in 0..out.width {
                let mut sum = 0i128;
                for_each_tap(layer, o, oy, ox, |i, w, _| {
                    let v = input[i];
                    if v != 0 {
                        sum += weight[w] as i128 * v as i128;
                    }
                });
                acc[out.index(o, oy, ox)] = sum;
            }
        }
    }
    acc
}

fn step_real(layer: &CompiledLayer, input: &[u16], potentials: &mut [f64]) -> Vec<SpikeCoord> {
    let LayerParams::Real { weight, bias, bn, neuron } = &layer.params else { unreachable!() };
    let out = layer.geometry.output;
    let mut spikes = Vec::new();
    for o in 0..out.channels {
        for oy in 0..out.height {
            for ox in 0..out.width {
                let mut charge = 0.0;
                for_each_tap(layer, o, oy, ox, |i, w, c| {
                    let v = input[i] as f64;
                    let v = match bn {
                        Some(affine) => affine[c].0 * v + affine[c].1,
                        None => v,
                    };
                    charge += weight[w] * v;
                });
                let idx = out.index(o, oy, ox);
                let (fired, v) = neuron.step(potentials[idx], charge + bias[o]);
                potentials[idx] = v;
                if fired {
                    spikes.push(SpikeCoord::new(o, oy, ox));
                }
            }
        }
    }
    spikes
}
