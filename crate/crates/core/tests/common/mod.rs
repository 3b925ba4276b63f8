#![allow(dead_code)]

use npusim::engine::{run_dense, Arithmetic, Potentials};
use npusim::events::{frame_to_spikelist, EventFrame, SpikeList};
use npusim::model::{fuse_network, randomize_weights, BatchNormParams, LayerSpec, NetworkSpec, Shape, WeightInit};
use npusim::neuron::{LeakForm, NeuronParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random small network with a random binary input sequence.
pub struct Case {
    pub spec: NetworkSpec,
    pub frames: Vec<EventFrame>,
    pub spikes: Vec<SpikeList>,
}

pub fn random_neuron(rng: &mut ChaCha8Rng) -> NeuronParams {
    let vth = rng.gen_range(0.25..2.0);
    match rng.gen_range(0..3) {
        0 => NeuronParams::integrate_and_fire(vth),
        1 => NeuronParams::leaky(rng.gen_range(1.0..8.0), vth, LeakForm::DecayInput),
        _ => NeuronParams::leaky(rng.gen_range(1.0..8.0), vth, LeakForm::ShiftLeak),
    }
}

fn random_layer(rng: &mut ChaCha8Rng, last: bool) -> LayerSpec {
    let layer = match rng.gen_range(0..10) {
        0 if last => LayerSpec::fully_connected(rng.gen_range(1..=4)),
        0 | 1 => LayerSpec::avgpool(rng.gen_range(1..=2), rng.gen_range(1..=2)),
        _ => {
            let k = rng.gen_range(1..=3);
            let mut l = LayerSpec::conv2d(rng.gen_range(1..=4), k, rng.gen_range(1..=2), rng.gen_range(0..=1));
            l.kernel.1 = rng.gen_range(1..=3);
            l.has_bias = rng.gen_bool(0.8);
            l
        }
    };
    layer.with_neuron(random_neuron(rng))
}

pub fn random_frames(rng: &mut ChaCha8Rng, shape: Shape, timesteps: usize, density: f64) -> Vec<EventFrame> {
    (0..timesteps)
        .map(|t| {
            let mut f = EventFrame::zeros(shape, t);
            f.values.iter_mut().for_each(|v| *v = rng.gen_bool(density) as u16);
            f
        })
        .collect()
}

/// Up to 4 layers, input up to 2x12x12, up to 20 timesteps, density 0.1..0.9.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let input = Shape::new(rng.gen_range(1..=2), rng.gen_range(3..=12), rng.gen_range(3..=12));
        let depth = rng.gen_range(1..=4);
        let layers: Vec<LayerSpec> = (0..depth).map(|i| random_layer(&mut rng, i + 1 == depth)).collect();
        let Ok(mut spec) = NetworkSpec::new("random", input, layers) else { continue };
        // occasionally large weights to exercise saturation
        let gain = if rng.gen_bool(0.2) { 400.0 } else { rng.gen_range(1.0..4.0) };
        let init = WeightInit { gain, bias_scale: 0.3 };
        randomize_weights(&mut spec, rng.gen(), init).unwrap();
        spec.timesteps = rng.gen_range(1..=20);
        let density = rng.gen_range(0.1..0.9);
        let frames = random_frames(&mut rng, input, spec.timesteps, density);
        let spikes = frames.iter().map(|f| frame_to_spikelist(f).unwrap()).collect();
        return Case { spec, frames, spikes };
    }
}

/// Random BN-before-conv layer stack with unpadded windows, so fusion is exact.
pub fn bn_case(seed: u64) -> (NetworkSpec, Vec<EventFrame>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let input = Shape::new(rng.gen_range(1..=3), rng.gen_range(3..=9), rng.gen_range(3..=9));
        let depth = rng.gen_range(1..=3);
        let layers: Vec<LayerSpec> = (0..depth)
            .map(|_| {
                let mut l = LayerSpec::conv2d(rng.gen_range(1..=4), rng.gen_range(1..=3), rng.gen_range(1..=2), 0)
                    .with_neuron(random_neuron(&mut rng));
                l.has_bias = rng.gen_bool(0.5);
                l
            })
            .collect();
        let Ok(mut spec) = NetworkSpec::new("bn", input, layers) else { continue };
        randomize_weights(&mut spec, rng.gen(), WeightInit::default()).unwrap();
        let geoms = spec.geometries().unwrap();
        for (l, g) in spec.layers.iter_mut().zip(&geoms) {
            if rng.gen_bool(0.8) {
                let n = g.input.channels;
                l.batchnorm = Some(BatchNormParams {
                    gamma: (0..n).map(|_| rng.gen_range(0.2..2.0)).collect(),
                    beta: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    mean: (0..n).map(|_| rng.gen_range(-0.5..1.0)).collect(),
                    variance: (0..n).map(|_| rng.gen_range(0.05..2.0)).collect(),
                    epsilon: 1e-5,
                });
            }
        }
        let (timesteps, density) = (rng.gen_range(1..=6), rng.gen_range(0.1..0.9));
        let frames = random_frames(&mut rng, input, timesteps, density);
        return (spec, frames);
    }
}

/// Largest elementwise difference between fused and unfused real potentials.
pub fn fusion_error(seed: u64) -> f64 {
    let (spec, frames) = bn_case(seed);
    let fused = fuse_network(&spec).unwrap();
    assert!(fused.layers.iter().all(|l| l.batchnorm.is_none()));
    // layer by layer on the same input so spike differences cannot cascade
    let mut worst = 0.0f64;
    for l in 0..spec.layers.len() {
        let single = |s: &NetworkSpec| {
            let g = s.geometries().unwrap()[l];
            let mut one = NetworkSpec::new("one", g.input, vec![s.layers[l].clone()]).unwrap();
            one.weights = vec![s.weights[l].clone()];
            let mut neuron = one.layers[0].neuron;
            // a huge threshold keeps the neuron integrating, exposing the raw charge
            neuron.v_threshold = 1e12;
            one.layers[0].neuron = neuron;
            one
        };
        let (a, b) = (single(&spec), single(&fused));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ l as u64);
        let inputs = random_frames(&mut rng, a.input_shape, frames.len(), 0.5);
        let pa = run_dense(&a, &inputs, Arithmetic::Real).unwrap().final_potentials;
        let pb = run_dense(&b, &inputs, Arithmetic::Real).unwrap().final_potentials;
        let (Potentials::Real(pa), Potentials::Real(pb)) = (pa, pb) else {
            unreachable!()
        };
        for (x, y) in pa[0].iter().zip(&pb[0]) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}
