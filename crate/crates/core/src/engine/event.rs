use super::compiled::{CompiledNetwork, LayerParams};
use super::{Arithmetic, EngineError, Potentials, SpikeTrace, StepOutput, TraceEntry};
use crate::events::SpikeList;
use crate::fixedpoint::SaturationCounter;
use crate::model::NetworkSpec;

/// Event-driven pipeline: one stage per layer.
///
/// Each stage walks its incoming spikes in raster order and, for every
/// output neuron whose window covers the spike, adds the matching weight to
/// that neuron's wide accumulator. At the barrier the stage adds biases,
/// steps all neurons and forwards the resulting spikes downstream.
#[derive(Debug, Clone)]
pub struct EventEngine {
    net: CompiledNetwork,
    potentials: Vec<Vec<i64>>,
    accumulators: Vec<Vec<i128>>,
    timestep: usize,
}

impl EventEngine {
    pub fn new(spec: &NetworkSpec) -> Result<Self, EngineError> {
        Self::with_arithmetic(spec, Arithmetic::Fixed)
    }

    pub fn with_arithmetic(spec: &NetworkSpec, arithmetic: Arithmetic) -> Result<Self, EngineError> {
        if arithmetic != Arithmetic::Fixed {
            return Err(EngineError::RequiresFixed);
        }
        let net = CompiledNetwork::new(spec, Arithmetic::Fixed)?;
        let sizes: Vec<usize> = net.layers.iter().map(|l| l.geometry.output.len()).collect();
        Ok(EventEngine {
            potentials: sizes.iter().map(|&n| vec![0; n]).collect(),
            accumulators: sizes.iter().map(|&n| vec![0; n]).collect(),
            net,
            timestep: 0,
        })
    }

    pub fn reset(&mut self) {
        self.potentials.iter_mut().for_each(|v| v.fill(0));
        self.timestep = 0;
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn potentials(&self) -> Potentials {
        Potentials::Fixed(self.potentials.clone())
    }

    /// Advances one timestep, appending every delivered spike to `trace`.
    pub fn step(&mut self, input: &SpikeList, mut trace: Option<&mut SpikeTrace>) -> Result<StepOutput, EngineError> {
        let shape = self.net.layers[0].geometry.input;
        if !input.is_canonical() {
            return Err(EngineError::NotBinary("duplicate or unsorted coordinates".into()));
        }
        if let Some(s) = input
            .entries
            .iter()
            .find(|s| s.c as usize >= shape.channels || s.y as usize >= shape.height || s.x as usize >= shape.width)
        {
            return Err(EngineError::NotBinary(format!("spike ({}, {}, {}) outside {shape}", s.c, s.y, s.x)));
        }
        let t = self.timestep as u32;
        let mut incoming = input.entries.clone();
        let mut out = StepOutput::default();
        for (l, layer) in self.net.layers.iter().enumerate() {
            let g = &layer.geometry;
            let LayerParams::Fixed { .. } = layer.params else { unreachable!() };
            let acc = &mut self.accumulators[l];
            acc.fill(0);
            let out_ch = g.output.channels;
            let plane = g.output.plane();
            for s in &incoming {
                let (c, y, x) = (s.c as usize, s.y as usize, s.x as usize);
                let mut updates = 0u32;
                for (oy, ox, ky, kx) in g.scatter_targets(y, x) {
                    let tap = (c * g.kernel.0 + ky) * g.kernel.1 + kx;
                    let pos = oy * g.output.width + ox;
                    if g.diagonal {
                        acc[c * plane + pos] += layer.scatter_weight[tap * out_ch + c] as i128;
                        updates += 1;
                    } else {
                        let row = &layer.scatter_weight[tap * out_ch..(tap + 1) * out_ch];
                        for (o, &w) in row.iter().enumerate() {
                            acc[o * plane + pos] += w as i128;
                        }
                        updates += out_ch as u32;
                    }
                }
                if let Some(trace) = trace.as_deref_mut() {
                    trace.entries.push(TraceEntry {
                        timestep: t,
                        layer: l as u16,
                        source: *s,
                        updates,
                    });
                }
            }
            let mut sat = SaturationCounter::new();
            let spikes = layer.fire_fixed(acc, &mut self.potentials[l], &mut sat);
            out.saturations.push(sat.count);
            out.spikes.push(SpikeList {
                timestep: self.timestep,
                entries: spikes.clone(),
            });
            incoming = spikes;
        }
        if let Some(trace) = trace {
            trace.timesteps = trace.timesteps.max(self.timestep + 1);
            let sink = self.net.layers.len() as u16;
            trace.entries.extend(incoming.iter().map(|&source| TraceEntry {
                timestep: t,
                layer: sink,
                source,
                updates: 0,
            }));
        }
        self.timestep += 1;
        Ok(out)
    }
}
