use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LayerWeights, ModelError, NetworkSpec, RealTensor, Tensor};
use crate::fixedpoint::{FixedTensor, SaturationCounter};

/// Uniform random initialization for toy runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightInit {
    /// Weights are drawn from `±gain * vth / sqrt(fan_in)`.
    pub gain: f64,
    /// Biases are drawn from `±bias_scale * vth`.
    pub bias_scale: f64,
}

impl Default for WeightInit {
    fn default() -> Self {
        WeightInit {
            gain: 2.5,
            bias_scale: 0.1,
        }
    }
}

/// Replaces every weight and bias with seeded uniform reals.
pub fn randomize_weights(spec: &mut NetworkSpec, seed: u64, init: WeightInit) -> Result<(), ModelError> {
    let geoms = spec.geometries()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for ((layer, g), w) in spec.layers.iter().zip(&geoms).zip(spec.weights.iter_mut()) {
        if !layer.kind.has_weights() {
            *w = LayerWeights::default();
            continue;
        }
        let vth = layer.neuron.v_threshold;
        let bound = init.gain * vth / (g.fan_in() as f64).sqrt();
        let shape = g.weight_shape();
        let len = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
        w.weight = Some(Tensor::Real(RealTensor { shape, data }));
        w.bias = layer.has_bias.then(|| {
            let b = init.bias_scale * vth;
            let data = (0..g.output.channels)
                .map(|_| if b > 0.0 { rng.gen_range(-b..=b) } else { 0.0 })
                .collect();
            Tensor::Real(RealTensor {
                shape: vec![g.output.channels],
                data,
            })
        });
    }
    Ok(())
}

/// Converts all real parameters to each layer's weight format (floor rounding).
/// Returns the number of saturated values.
pub fn quantize_network(spec: &NetworkSpec) -> Result<(NetworkSpec, u64), ModelError> {
    let mut out = spec.clone();
    let mut sat = SaturationCounter::new();
    for (i, (layer, w)) in out.layers.iter().zip(out.weights.iter_mut()).enumerate() {
        if layer.batchnorm.is_some() {
            return Err(ModelError::BatchNorm {
                layer: i,
                message: "fuse batch norm before quantizing".into(),
            });
        }
        let fmt = layer.formats.weights;
        for slot in [&mut w.weight, &mut w.bias] {
            if let Some(Tensor::Real(t)) = slot {
                let q = FixedTensor::quantize_counted(t.shape.clone(), &t.data, fmt, &mut sat)?;
                *slot = Some(Tensor::Fixed(q));
            }
        }
    }
    Ok((out, sat.count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_model_config;

    #[test]
    fn seeded_and_shaped() {
        let mut a = parse_model_config("input 2 6 6\n4c3s1\navg2s2\nfc3\n").unwrap();
        let mut b = a.clone();
        randomize_weights(&mut a, 7, WeightInit::default()).unwrap();
        randomize_weights(&mut b, 7, WeightInit::default()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
        assert!(a.weights[1].weight.is_none());
    }

    #[test]
    fn quantize_floors_into_weight_format() {
        let mut spec = parse_model_config("input 1 3 3\n1c1s1\n").unwrap();
        spec.weights[0].weight = Some(Tensor::Real(RealTensor {
            shape: vec![1, 1, 1, 1],
            data: vec![-0.3],
        }));
        let (q, sat) = quantize_network(&spec).unwrap();
        assert_eq!(sat, 0);
        match q.weights[0].weight.as_ref().unwrap() {
            Tensor::Fixed(t) => assert_eq!(t.data(), &[-77]),
            other => panic!("{other:?}"),
        }
        assert!(q.is_quantized());
    }
}
