use super::{Arithmetic, EngineError};
use crate::events::SpikeCoord;
use crate::fixedpoint::{rescale_raw, FixedFormat, FixedTensor, SaturationCounter};
use crate::model::{ConvGeometry, LayerKind, NetworkSpec, Tensor};
use crate::neuron::{quantize_neuron, FixedNeuron, NeuronParams};

#[derive(Debug, Clone)]
pub(crate) enum LayerParams {
    Real {
        /// `(out, in, kh, kw)`
        weight: Vec<f64>,
        bias: Vec<f64>,
        /// Per input channel `(scale, shift)` of an unfused batch norm.
        bn: Option<Vec<(f64, f64)>>,
        neuron: NeuronParams,
    },
    Fixed {
        /// `(out, in, kh, kw)` raw values with `weight_frac` fraction bits.
        weight: Vec<i64>,
        /// Biases re-expressed with `weight_frac` fraction bits.
        bias: Vec<i128>,
        weight_frac: u32,
        potentials: FixedFormat,
        neuron: FixedNeuron,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledLayer {
    pub geometry: ConvGeometry,
    pub params: LayerParams,
    /// Fixed weights transposed to `(in, kh, kw, out)` for scatter.
    pub scatter_weight: Vec<i64>,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledNetwork {
    pub arithmetic: Arithmetic,
    pub layers: Vec<CompiledLayer>,
}

fn pool_weights(g: &ConvGeometry) -> Vec<f64> {
    let mut w = vec![0.0; g.weight_shape().iter().product()];
    let v = 1.0 / g.kernel_area() as f64;
    for o in 0..g.output.channels {
        for ky in 0..g.kernel.0 {
            for kx in 0..g.kernel.1 {
                w[g.weight_index(o, o, ky, kx)] = v;
            }
        }
    }
    w
}

fn transpose_for_scatter(g: &ConvGeometry, weight: &[i64]) -> Vec<i64> {
    let out = g.output.channels;
    let mut t = vec![0; weight.len()];
    for o in 0..out {
        for c in 0..g.input.channels {
            for ky in 0..g.kernel.0 {
                for kx in 0..g.kernel.1 {
                    let tap = (c * g.kernel.0 + ky) * g.kernel.1 + kx;
                    t[tap * out + o] = weight[g.weight_index(o, c, ky, kx)];
                }
            }
        }
    }
    t
}

impl CompiledNetwork {
    pub fn new(spec: &NetworkSpec, arithmetic: Arithmetic) -> Result<Self, EngineError> {
        spec.validate()?;
        let geoms = spec.geometries()?;
        let mut layers = Vec::with_capacity(geoms.len());
        for (i, ((layer, g), w)) in spec.layers.iter().zip(geoms).zip(&spec.weights).enumerate() {
            let real_weight = match (&w.weight, layer.kind) {
                (_, LayerKind::AvgPool) => pool_weights(&g),
                (Some(t), _) => t.to_real(),
                (None, _) => unreachable!("validated"),
            };
            let real_bias = w.bias.as_ref().map_or_else(|| vec![0.0; g.output.channels], Tensor::to_real);
            let params = match arithmetic {
                Arithmetic::Real => LayerParams::Real {
                    weight: real_weight,
                    bias: real_bias,
                    bn: match &layer.batchnorm {
                        Some(bn) => Some(bn.affine().map_err(|message| {
                            EngineError::Model(crate::model::ModelError::BatchNorm { layer: i, message })
                        })?),
                        None => None,
                    },
                    neuron: layer.neuron,
                },
                Arithmetic::Fixed => {
                    if layer.batchnorm.is_some() {
                        return Err(EngineError::UnfusedBatchNorm { layer: i });
                    }
                    let fmt = layer.formats.weights;
                    let shape = g.weight_shape();
                    let weight = match &w.weight {
                        Some(Tensor::Fixed(t)) => t.clone(),
                        _ => FixedTensor::quantize(shape, &real_weight, fmt)?,
                    };
                    let weight_frac = weight.format().fraction_bits();
                    let bias_tensor = match &w.bias {
                        Some(Tensor::Fixed(t)) => t.clone(),
                        _ => FixedTensor::quantize(vec![g.output.channels], &real_bias, fmt)?,
                    };
                    let bias_frac = bias_tensor.format().fraction_bits();
                    let bias = bias_tensor
                        .data()
                        .iter()
                        .map(|&b| {
                            if weight_frac >= bias_frac {
                                (b as i128) << (weight_frac - bias_frac)
                            } else {
                                (b as i128) >> (bias_frac - weight_frac)
                            }
                        })
                        .collect();
                    let neuron = quantize_neuron(&layer.neuron, layer.formats.potentials)
                        .map_err(|source| EngineError::Model(crate::model::ModelError::Neuron { layer: i, source }))?;
                    LayerParams::Fixed {
                        weight: weight.data().to_vec(),
                        bias,
                        weight_frac,
                        potentials: layer.formats.potentials,
                        neuron,
                    }
                }
            };
            let scatter_weight = match &params {
                LayerParams::Fixed { weight, .. } => transpose_for_scatter(&g, weight),
                LayerParams::Real { .. } => Vec::new(),
            };
            layers.push(CompiledLayer {
                geometry: g,
                params,
                scatter_weight,
            });
        }
        Ok(CompiledNetwork {
            arithmetic,
            layers,
        })
    }
}

impl CompiledLayer {
    /// Timestep barrier in fixed point: adds the bias once, converts each
    /// accumulated charge to the potential format, steps every neuron and
    /// returns the spikes in raster order.
    pub fn fire_fixed(&self, acc: &[i128], potentials: &mut [i64], sat: &mut SaturationCounter) -> Vec<SpikeCoord> {
        let LayerParams::Fixed {
            bias,
            weight_frac,
            potentials: fmt,
            neuron,
            ..
        } = &self.params
        else {
            unreachable!("fixed barrier on a real layer");
        };
        let out = self.geometry.output;
        let plane = out.plane();
        let mut spikes = Vec::new();
        for o in 0..out.channels {
            for p in 0..plane {
                let idx = o * plane + p;
                let x = rescale_raw(acc[idx] + bias[o], *weight_frac, *fmt, sat);
                let (fired, v) = neuron.step_raw(potentials[idx], x, sat);
                potentials[idx] = v;
                if fired {
                    spikes.push(SpikeCoord::new(o, p / out.width, p % out.width));
                }
            }
        }
        spikes
    }
}
