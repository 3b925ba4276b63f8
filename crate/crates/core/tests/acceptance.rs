//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS or FAIL line; the process fails if any does.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::thread;
use std::time::Instant;

use npusim::engine::{calibrate_activity, run_dense, run_event_driven, Arithmetic};
use npusim::events::{
    accumulate_frame, frame_to_spikelist, synthetic_stream, window_count, window_events, window_events_over,
    AccumulationMode, EventRecord, Geometry, SpikeCoord, SpikeList,
};
use npusim::fixedpoint::{dequantize, quantize_value, FixedFormat, FixedValue};
use npusim::model::{
    activity_percent, model_stats, parse_model_config, quantize_network, randomize_weights, LayerSpec, NetworkSpec,
    Shape, WeightInit,
};
use npusim::neuron::{quantize_neuron, LeakForm, NeuronParams};
use npusim::perf::{compare_networks, energy_report, simulate_latency, HardwareConfig, NetworkSummary};
use npusim::presets;
use npusim::serve::wire::Message;
use npusim::serve::{stream_frames, Server, ServerConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn property<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())
}

fn accounting() -> Outcome {
    let start = Instant::now();
    let vgg = model_stats(&presets::small_32_st_vgg()).map_err(|e| e.to_string())?;
    let scnn = model_stats(&presets::scnn_4_layer()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(vgg.synapses == 886_752, format!("VGG synapses {}", vgg.synapses))?;
    check(vgg.kernels == 992, format!("VGG kernels {}", vgg.kernels))?;
    check(vgg.inputs == 145_920, format!("VGG inputs {}", vgg.inputs))?;
    let maps: Vec<(usize, usize)> = vgg
        .layers
        .iter()
        .filter(|l| l.extract)
        .map(|l| (l.output.height, l.output.width))
        .collect();
    check(
        maps == [(38, 30), (19, 15), (10, 8), (5, 4), (3, 2), (2, 1)],
        format!("extraction maps {maps:?}"),
    )?;
    check(
        (scnn.synapses, scnn.kernels, scnn.inputs) == (25_763, 227, 240),
        format!("SCNN {} / {} / {}", scnn.synapses, scnn.kernels, scnn.inputs),
    )?;
    check(elapsed.as_secs_f64() < 1.0, format!("took {elapsed:?}"))?;
    Ok(format!(
        "VGG {}/{}/{}, SCNN {}/{}/{}, six maps, {:.1} ms",
        vgg.synapses,
        vgg.kernels,
        vgg.inputs,
        scnn.synapses,
        scnn.kernels,
        scnn.inputs,
        elapsed.as_secs_f64() * 1e3
    ))
}

fn activity() -> Outcome {
    let neurons = model_stats(&presets::small_32_st_vgg()).map_err(|e| e.to_string())?.neurons as u64;
    let mut shown = Vec::new();
    for (spikes, expected) in [(214_800, "32.04"), (213_500, "31.84"), (214_900, "32.05")] {
        let got = format!("{:.2}", activity_percent(spikes, neurons, 1));
        check(got == expected, format!("{spikes} spikes -> {got}%, want {expected}%"))?;
        shown.push(got);
    }
    Ok(format!("{}% / {}% / {}% over {neurons} neurons", shown[0], shown[1], shown[2]))
}

fn energy() -> Outcome {
    let vgg = model_stats(&presets::small_32_st_vgg()).map_err(|e| e.to_string())?;
    let scnn = model_stats(&presets::scnn_4_layer()).map_err(|e| e.to_string())?;
    let hw = |p: f64| HardwareConfig {
        dynamic_power_w: p,
        ..HardwareConfig::default()
    };
    let e = energy_report(0.7, &hw(0.7), &vgg, 214_800, 1).map_err(|e| e.to_string())?;
    let s = energy_report(1e-3, &hw(0.2), &scnn, 7_200, 2).map_err(|e| e.to_string())?;
    check(rel(e.energy_per_output_j, 0.490) <= 0.02, format!("E {}", e.energy_per_output_j))?;
    check(rel(e.energy_per_spike_j, 2.30e-6) <= 0.02, format!("E/spike {}", e.energy_per_spike_j))?;
    check(rel(e.energy_per_synapse_j, 553e-9) <= 0.02, format!("E/synapse {}", e.energy_per_synapse_j))?;
    check(rel(s.energy_per_output_j, 0.2e-3) <= 0.02, format!("SCNN E {}", s.energy_per_output_j))?;
    check(rel(s.energy_norm_j, 3.88e-9) <= 0.02, format!("SCNN E_norm {}", s.energy_norm_j))?;
    // the table rounds to 0.004 uJ
    check(
        format!("{:.3}", s.energy_norm_j * 1e6) == "0.004",
        format!("SCNN E_norm {} does not round to 0.004 uJ", s.energy_norm_j),
    )?;
    let a = NetworkSummary::from_run("vgg", &vgg, 214_800, 1, 0.7, 0.7);
    let b = NetworkSummary::from_run("scnn", &scnn, 7_200, 2, 1e-3, 0.2);
    let rows = compare_networks(&a, &b).map_err(|e| e.to_string())?;
    let ratio = |m: &str| rows.iter().find(|r| r.metric == m).map(|r| r.ratio).unwrap_or(f64::NAN);
    let norm = ratio("energy_norm_j");
    let kernel = ratio("kernel_computation_index");
    check((norm - 142.0).abs() <= 1.0, format!("E_norm ratio {norm}"))?;
    check((kernel - 130.0).abs() <= 1.0, format!("kernel computation ratio {kernel}"))?;
    Ok(format!(
        "E {:.0} mJ, E/spike {:.3} uJ, E/synapse {:.0} nJ, SCNN E_norm {:.2} nJ, ratios {norm:.2} / {kernel:.1}",
        e.energy_per_output_j * 1e3,
        e.energy_per_spike_j * 1e6,
        e.energy_per_synapse_j * 1e9,
        s.energy_norm_j * 1e9
    ))
}

fn equivalence() -> Outcome {
    let mut seeds = ChaCha8Rng::seed_from_u64(0xacce);
    let (mut spikes, mut saturating) = (0u64, 0);
    for i in 0..100 {
        let seed: u64 = seeds.gen();
        let case = common::random_case(seed);
        let dense = run_dense(&case.spec, &case.frames, Arithmetic::Fixed).map_err(|e| e.to_string())?;
        let (event, _) = run_event_driven(&case.spec, &case.spikes).map_err(|e| e.to_string())?;
        check(dense.spikes == event.spikes, format!("case {i} (seed {seed}): spike trains differ"))?;
        check(dense.layer_spikes == event.layer_spikes, format!("case {i}: counts differ"))?;
        check(
            dense.final_potentials == event.final_potentials,
            format!("case {i}: final potentials differ"),
        )?;
        spikes += dense.total_spikes;
        saturating += dense.saturations.iter().any(|&s| s > 0) as usize;
    }
    check(spikes > 0, "no case produced a spike")?;
    Ok(format!("100 random nets, {spikes} spikes, {saturating} cases with saturation"))
}

fn fusion() -> Outcome {
    let mut seeds = ChaCha8Rng::seed_from_u64(0xb0);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let seed: u64 = seeds.gen();
        let err = common::fusion_error(seed);
        check(err <= 1e-5, format!("instance {i} (seed {seed}): difference {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("100 instances, max difference {worst:.2e}"))
}

fn quantization() -> Outcome {
    let q88 = FixedFormat::new(8, 8).map_err(|e| e.to_string())?;
    let half = quantize_value(0.5, q88).raw();
    let neg = quantize_value(-0.3, q88).raw();
    check(half == 128, format!("0.5 -> {half}"))?;
    check(neg == -77, format!("-0.3 -> {neg}"))?;
    let formats = (1u32..=16, 0u32..=16).prop_filter_map("width", |(i, f)| FixedFormat::new(i, f).ok());
    property(
        512,
        (formats.clone(), -300.0f64..300.0, -300.0f64..300.0),
        |(fmt, a, b)| {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(quantize_value(lo, fmt).raw() <= quantize_value(hi, fmt).raw());
            Ok(())
        },
    )?;
    property(512, (formats, any::<i64>()), |(fmt, r)| {
        let raw = fmt.min_raw() + r.rem_euclid(fmt.max_raw() - fmt.min_raw() + 1);
        let v = FixedValue::from_raw(raw, fmt);
        prop_assert_eq!(quantize_value(dequantize(v), fmt).raw(), raw);
        Ok(())
    })?;
    Ok("0.5 -> 128, -0.3 -> -77, monotone, representable values round-trip".into())
}

fn neuron_strategy() -> impl Strategy<Value = NeuronParams> {
    prop_oneof![
        (0.1f64..4.0).prop_map(NeuronParams::integrate_and_fire),
        (1.0f64..8.0, 0.1f64..4.0).prop_map(|(t, v)| NeuronParams::leaky(t, v, LeakForm::DecayInput)),
        (1.0f64..8.0, 0.1f64..4.0).prop_map(|(t, v)| NeuronParams::leaky(t, v, LeakForm::ShiftLeak)),
    ]
}

fn neurons() -> Outcome {
    let q88 = FixedFormat::new(8, 8).map_err(|e| e.to_string())?;
    // hard reset, real and fixed
    property(1024, (neuron_strategy(), -8.0f64..8.0, -8.0f64..8.0), |(n, v, x)| {
        let (fired, next) = n.step(v, x);
        prop_assert!(!fired || next == 0.0);
        let f = quantize_neuron(&n, q88).unwrap();
        let (fired, next) = f.step(quantize_value(v, q88), quantize_value(x, q88));
        prop_assert!(!fired || next.raw() == 0);
        Ok(())
    })?;
    // IF never loses charge under nonnegative input
    property(1024, (0.1f64..4.0, -8.0f64..4.0, 0.0f64..8.0), |(vth, v, x)| {
        let n = NeuronParams::integrate_and_fire(vth);
        let v = v.min(vth * 0.999);
        let (fired, next) = n.step(v, x);
        prop_assert!(fired || next >= v);
        let f = quantize_neuron(&n, q88).unwrap();
        let (qv, qx) = (quantize_value(v, q88), quantize_value(x, q88));
        let (fired, next) = f.step(qv, qx);
        prop_assert!(fired || next.raw() >= qv.raw());
        Ok(())
    })?;
    // LIF relaxes toward zero without input
    property(1024, (1.0f64..8.0, 0.1f64..4.0, any::<bool>(), -8.0f64..4.0), |(tau, vth, shift, v)| {
        let leak = if shift { LeakForm::ShiftLeak } else { LeakForm::DecayInput };
        let n = NeuronParams::leaky(tau, vth, leak);
        let v = v.min(vth * 0.999);
        let (_, next) = n.step(v, 0.0);
        prop_assert!(next.abs() <= v.abs() && next * v >= 0.0);
        let f = quantize_neuron(&n, q88).unwrap();
        let qv = quantize_value(v, q88);
        let (_, next) = f.step(qv, FixedValue::zero(q88));
        prop_assert!(next.raw().abs() <= qv.raw().abs() && next.raw() * qv.raw() >= 0);
        Ok(())
    })?;
    // the threshold itself fires, one step below does not
    property(1024, 1i64..2048, |raw| {
        let vth = raw as f64 / 256.0;
        let n = NeuronParams::integrate_and_fire(vth);
        prop_assert!(n.step(0.0, vth).0);
        prop_assert!(!n.step(0.0, vth - 1.0 / 256.0).0);
        let f = quantize_neuron(&n, q88).unwrap();
        let zero = FixedValue::zero(q88);
        prop_assert!(f.step(zero, FixedValue::from_raw(raw, q88)).0);
        prop_assert!(!f.step(zero, FixedValue::from_raw(raw - 1, q88)).0);
        Ok(())
    })?;
    Ok("hard reset, IF monotone, LIF decay, firing at exactly vth (real and Q8.8)".into())
}

fn event_pipeline() -> Outcome {
    let geometry = Geometry { width: 7, height: 5 };
    let event = (0u64..400_000, 0u16..7, 0u16..5, 0u8..=1).prop_map(|(t, x, y, p)| EventRecord { t, x, y, p });
    property(256, (proptest::collection::vec(event, 0..300), 1u64..120_000), |(mut events, w)| {
        events.sort_by_key(|e| e.t);
        let groups = window_events(&events, w);
        let joined: Vec<EventRecord> = groups.iter().flat_map(|g| g.iter().copied()).collect();
        prop_assert_eq!(&joined, &events);
        for (k, g) in groups.iter().enumerate() {
            prop_assert!(g.iter().all(|e| e.t / w == k as u64));
            let sum = accumulate_frame(g, AccumulationMode::Sum, geometry, k);
            let binary = accumulate_frame(g, AccumulationMode::Binary, geometry, k);
            let clamped: Vec<u16> = sum.values.iter().map(|&v| v.min(1)).collect();
            prop_assert_eq!(&binary.values, &clamped);
            let list = frame_to_spikelist(&binary).unwrap();
            prop_assert_eq!(list.densify(binary.shape()).unwrap(), binary);
        }
        Ok(())
    })?;
    let clip = synthetic_stream(Geometry { width: 304, height: 240 }, 60_000_000, 2_000.0, 1);
    let count = window_count(60_000_000, 50_000);
    let groups = window_events_over(&clip, 50_000, count);
    check(count == 1200 && groups.len() == 1200, format!("{count} windows"))?;
    check(
        window_events(&clip, 50_000).len() == 1200,
        "windowing the clip itself does not give 1200 windows",
    )?;
    check(
        groups.iter().map(|g| g.len()).sum::<usize>() == clip.len(),
        "clip events lost by windowing",
    )?;
    Ok(format!("partition, clamp and round-trip properties; 60 s clip -> {count} windows"))
}

fn latency() -> Outcome {
    let spec = NetworkSpec::new("one", Shape::new(1, 16, 16), vec![LayerSpec::conv2d(32, 3, 1, 1)])
        .map_err(|e| e.to_string())?;
    let (_, trace) = run_event_driven(
        &spec,
        &[SpikeList {
            timestep: 0,
            entries: vec![SpikeCoord::new(0, 7, 7)],
        }],
    )
    .map_err(|e| e.to_string())?;
    let hw = HardwareConfig {
        cycles_per_fire: 0,
        ..HardwareConfig::default()
    };
    let r = simulate_latency(&trace, &spec, &hw).map_err(|e| e.to_string())?;
    check(trace.total_updates() == 288, format!("{} updates", trace.total_updates()))?;
    check(r.end_to_end_s == 2.88e-6, format!("anchor latency {}", r.end_to_end_s))?;

    property(64, (any::<u64>(), 0.0f64..1.0, 0u64..8), |(seed, keep, overhead)| {
        let case = common::random_case(seed);
        let (_, full) = run_event_driven(&case.spec, &case.spikes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fewer = full.clone();
        fewer.entries.retain(|_| rng.gen_bool(keep));
        let hw = HardwareConfig {
            cycles_per_spike_overhead: overhead,
            ..HardwareConfig::default()
        };
        let a = simulate_latency(&fewer, &case.spec, &hw).unwrap();
        let b = simulate_latency(&full, &case.spec, &hw).unwrap();
        prop_assert!(a.end_to_end_cycles <= b.end_to_end_cycles);
        let more = HardwareConfig {
            npu_per_layer: (0..case.spec.layers.len()).map(|_| rng.gen_range(1..=6)).collect(),
            ..hw.clone()
        };
        let c = simulate_latency(&full, &case.spec, &more).unwrap();
        prop_assert!(c.end_to_end_cycles <= b.end_to_end_cycles);
        Ok(())
    })?;

    let net = |npus: usize| {
        let layers = (0..4)
            .map(|_| LayerSpec {
                npu_count: npus,
                ..LayerSpec::conv2d(16, 3, 1, 1)
            })
            .collect();
        let mut spec = NetworkSpec::new("toy", Shape::new(16, 12, 12), layers).unwrap();
        randomize_weights(&mut spec, 11, WeightInit::default()).unwrap();
        spec
    };
    let four = net(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames = common::random_frames(&mut rng, four.input_shape, 4, 0.3);
    let lists: Vec<SpikeList> = frames.iter().map(|f| frame_to_spikelist(f).unwrap()).collect();
    let (_, trace) = run_event_driven(&four, &lists).map_err(|e| e.to_string())?;
    let slow = simulate_latency(&trace, &four, &HardwareConfig::default()).map_err(|e| e.to_string())?;
    let fast = simulate_latency(&trace, &net(16), &HardwareConfig::default()).map_err(|e| e.to_string())?;
    let speedup = slow.end_to_end_s / fast.end_to_end_s;
    check(speedup > 1.0 && speedup <= 4.0, format!("16 vs 4 NPU speedup {speedup}"))?;
    Ok(format!(
        "288 updates -> {:.2} us, monotone/antitone over 64 nets, 16 vs 4 NPU speedup {speedup:.3}",
        r.end_to_end_s * 1e6
    ))
}

fn streaming() -> Outcome {
    let mut spec = parse_model_config(
        "input 2 16 12\ntimesteps 1\nneuron lif tau=2 vth=1 leak=decay\n8c3s1p1!\navg2s2\n16c3s1p1!\n10c1s1\n",
    )
    .map_err(|e| e.to_string())?;
    randomize_weights(&mut spec, 21, WeightInit::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let frames = common::random_frames(&mut rng, spec.input_shape, 20, 0.15);
    calibrate_activity(&mut spec, &frames[0], 0.3).map_err(|e| e.to_string())?;
    let spec = quantize_network(&spec).map_err(|e| e.to_string())?.0;
    let lists: Vec<SpikeList> = frames.iter().map(|f| frame_to_spikelist(f).unwrap()).collect();

    let server = Server::bind(
        "127.0.0.1:0",
        ServerConfig {
            spec: spec.clone(),
            hw: HardwareConfig::default(),
            send_maps: true,
        },
    )
    .map_err(|e| e.to_string())?;
    let addr = server.local_addr().map_err(|e| e.to_string())?;
    let handle = thread::spawn(move || server.run_for(2));
    let first = stream_frames(addr, spec.input_shape, &lists).map_err(|e| e.to_string())?;
    let second = stream_frames(addr, spec.input_shape, &lists).map_err(|e| e.to_string())?;
    handle.join().map_err(|_| "server thread panicked")?.map_err(|e| e.to_string())?;

    check(first.len() == lists.len(), format!("{} results for {} frames", first.len(), lists.len()))?;
    check(
        first.iter().enumerate().all(|(i, r)| r.window == i as u32),
        "results out of order",
    )?;
    let bytes = |rs: &[npusim::serve::wire::ResultPayload]| -> Vec<u8> {
        rs.iter().flat_map(|r| Message::Result(r.clone()).encode().unwrap()).collect()
    };
    check(bytes(&first) == bytes(&second), "results differ between runs")?;
    let (local, _) = run_event_driven(&spec, &lists).map_err(|e| e.to_string())?;
    let extract = spec.extraction_layers();
    let mut total = 0;
    for (t, r) in first.iter().enumerate() {
        let want: Vec<u32> = extract.iter().map(|&l| local.spikes[t][l].len() as u32).collect();
        check(r.counts == want, format!("window {t}: {:?} vs local {want:?}", r.counts))?;
        total += want.iter().sum::<u32>();
    }
    check(total > 0, "network never fired")?;
    Ok(format!(
        "{} frames -> {} ordered results, byte-identical twice, {total} extraction spikes match local run",
        lists.len(),
        first.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("model accounting", accounting),
        ("activity formula", activity),
        ("energy calculus", energy),
        ("engine equivalence", equivalence),
        ("batch-norm fusion", fusion),
        ("quantization rules", quantization),
        ("neuron dynamics", neurons),
        ("event pipeline", event_pipeline),
        ("latency model", latency),
        ("streaming harness", streaming),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.2}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{secs:.2}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
