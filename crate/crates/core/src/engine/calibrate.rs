use super::{Arithmetic, DenseEngine, EngineError, Potentials};
use crate::events::EventFrame;
use crate::model::{NetworkSpec, RealTensor, Tensor};
use crate::neuron::{LeakForm, NeuronKind, NeuronParams};

/// Charge that makes a resting neuron fire in one step.
fn firing_charge(n: &NeuronParams) -> f64 {
    match (n.kind, n.leak) {
        (NeuronKind::Lif, LeakForm::DecayInput) => n.v_threshold * n.tau,
        _ => n.v_threshold,
    }
}

fn one_layer(spec: &NetworkSpec, layer: usize) -> Result<NetworkSpec, EngineError> {
    let g = spec.geometries()?[layer];
    let mut one = NetworkSpec::new("probe", g.input, vec![spec.layers[layer].clone()])?;
    one.weights = vec![spec.weights[layer].clone()];
    Ok(one)
}

/// Element at fraction `p` of a sorted slice (0.0 when empty).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let rank = (p * sorted.len() as f64).floor() as usize;
    sorted.get(rank.min(sorted.len().saturating_sub(1))).copied().unwrap_or(0.0)
}

/// Rescales real weights layer by layer so that about `target` of each
/// layer's neurons fire from rest on `probe`.
///
/// Each layer's weight-only charge is computed for the probe (the output of
/// the already calibrated layers before it), and the weights are scaled so
/// that the `1 - target` quantile of that charge reaches the one-step firing
/// charge. When fewer than `target` of the neurons receive any positive
/// charge, the quantile is taken over the positive charges alone. Biases are
/// left alone. Returns the scale applied to each layer (1.0 for pooling
/// layers and for layers whose probe charge is never positive).
pub fn calibrate_activity(spec: &mut NetworkSpec, probe: &EventFrame, target: f64) -> Result<Vec<f64>, EngineError> {
    let target = target.clamp(1e-6, 1.0);
    let mut frame = probe.binarized();
    let mut scales = Vec::with_capacity(spec.layers.len());
    for l in 0..spec.layers.len() {
        let mut scale = 1.0;
        if spec.layers[l].kind.has_weights() {
            let mut charge_net = one_layer(spec, l)?;
            charge_net.layers[0].neuron = NeuronParams::integrate_and_fire(f64::MAX);
            charge_net.weights[0].bias = None;
            charge_net.layers[0].has_bias = false;
            charge_net.layers[0].batchnorm = None;
            let mut engine = DenseEngine::new(&charge_net, Arithmetic::Real)?;
            engine.step(&frame)?;
            let Potentials::Real(p) = engine.potentials() else { unreachable!() };
            let mut charges = p.into_iter().next().unwrap_or_default();
            charges.sort_by(f64::total_cmp);
            let mut q = quantile(&charges, 1.0 - target);
            if q <= 0.0 {
                // too few positive charges to reach the target; spread it over those
                let first = charges.partition_point(|&c| c <= 0.0);
                q = quantile(&charges[first..], 1.0 - target);
            }
            if q > 0.0 {
                scale = firing_charge(&spec.layers[l].neuron) / q;
                if let Some(Tensor::Real(RealTensor { data, .. })) = &mut spec.weights[l].weight {
                    data.iter_mut().for_each(|w| *w *= scale);
                }
            }
        }
        scales.push(scale);
        let mut engine = DenseEngine::new(&one_layer(spec, l)?, Arithmetic::Real)?;
        let out = engine.step(&frame)?;
        let shape = engine.output_shape();
        frame = out.spikes[0].densify(shape)?;
    }
    Ok(scales)
}
