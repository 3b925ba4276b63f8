use std::ffi::{CStr, CString};
use std::ptr;

use npusim_ffi::*;

const TOY: &str = "\
input 2 8 8
timesteps 1
neuron lif tau=2 vth=1 leak=decay
4c3s1p1!
avg2s2
6c3s1p1!
";

fn last_error() -> String {
    unsafe { CStr::from_ptr(npu_last_error()) }.to_string_lossy().into_owned()
}

fn model(text: &str) -> *mut NpuModel {
    let text = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { npu_model_from_config(text.as_ptr(), &mut m) }, NpuStatus::Ok, "{}", last_error());
    m
}

fn probe(len: usize, seed: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 7 + seed * 13).is_multiple_of(5) as u8).collect()
}

#[test]
fn stats_and_shapes() {
    let vgg = model(include_str!("../../core/configs/small_32_st_vgg.cfg"));
    let mut s = NpuModelStats::default();
    assert_eq!(unsafe { npu_model_stats(vgg, &mut s) }, NpuStatus::Ok);
    assert_eq!((s.synapses, s.kernels, s.inputs, s.neurons), (886_752, 992, 145_920, 670_464));
    let mut shape = NpuShape::default();
    assert_eq!(unsafe { npu_model_shape(vgg, 10, &mut shape) }, NpuStatus::Ok);
    assert_eq!((shape.channels, shape.height, shape.width), (128, 2, 1));
    assert_eq!(unsafe { npu_model_shape(vgg, 11, &mut shape) }, NpuStatus::InvalidArgument);
    unsafe { npu_model_free(vgg) };
}

#[test]
fn errors_are_reported() {
    let text = CString::new("input 2 8 8\n4q3\n").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { npu_model_from_config(text.as_ptr(), &mut m) }, NpuStatus::Parse);
    assert!(m.is_null());
    assert!(last_error().contains("line 2"), "{}", last_error());
    assert_eq!(unsafe { npu_model_from_config(ptr::null(), &mut m) }, NpuStatus::NullPointer);
    assert_eq!(unsafe { npu_model_stats(ptr::null(), ptr::null_mut()) }, NpuStatus::NullPointer);
    let mut s = NpuModelStats::default();
    let ok = model(TOY);
    assert_eq!(unsafe { npu_model_stats(ok, &mut s) }, NpuStatus::Ok);
    assert_eq!(last_error(), "");
    unsafe { npu_model_free(ok) };
    unsafe { npu_model_free(ptr::null_mut()) };
}

#[test]
fn engines_agree_and_reset() {
    let m = model(TOY);
    let mut stats = NpuModelStats::default();
    unsafe {
        assert_eq!(npu_model_stats(m, &mut stats), NpuStatus::Ok);
        assert_eq!(npu_model_randomize(m, 3), NpuStatus::Ok);
        let p = probe(stats.inputs as usize, 0);
        assert_eq!(npu_model_calibrate(m, p.as_ptr(), p.len(), 0.3), NpuStatus::Ok);
        let mut sat = 0;
        assert_eq!(npu_model_quantize(m, &mut sat), NpuStatus::Ok);
    }
    let layers = stats.layers as usize;
    let mut engines = [ptr::null_mut(); 2];
    for (e, kind) in engines.iter_mut().zip([NpuEngineKind::DenseFixed, NpuEngineKind::Event]) {
        assert_eq!(unsafe { npu_engine_new(m, kind, e) }, NpuStatus::Ok, "{}", last_error());
    }
    unsafe { npu_model_free(m) };

    let frames: Vec<Vec<u8>> = (0..5).map(|s| probe(stats.inputs as usize, s)).collect();
    let run = |e: *mut NpuEngine| {
        let mut all = Vec::new();
        for f in &frames {
            let mut counts = vec![0u64; layers];
            assert_eq!(unsafe { npu_engine_step(e, f.as_ptr(), f.len(), counts.as_mut_ptr(), layers) }, NpuStatus::Ok);
            let mut map = vec![0u8; 6 * 4 * 4];
            assert_eq!(unsafe { npu_engine_output(e, 2, map.as_mut_ptr(), map.len()) }, NpuStatus::Ok);
            assert_eq!(map.iter().map(|&b| b as u64).sum::<u64>(), counts[2]);
            all.push((counts, map));
        }
        all
    };
    let dense = run(engines[0]);
    let event = run(engines[1]);
    assert_eq!(dense, event);
    assert!(dense.iter().any(|(c, _)| c.iter().sum::<u64>() > 0));
    unsafe { npu_engine_reset(engines[1]) };
    assert_eq!(run(engines[1]), event);

    let bad = vec![2u8; stats.inputs as usize];
    assert_eq!(
        unsafe { npu_engine_step(engines[1], bad.as_ptr(), bad.len(), ptr::null_mut(), 0) },
        NpuStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { npu_engine_step(engines[1], bad.as_ptr(), 3, ptr::null_mut(), 0) },
        NpuStatus::InvalidArgument
    );
    engines.iter().for_each(|&e| unsafe { npu_engine_free(e) });
}

#[test]
fn save_load_round_trip() {
    let m = model(TOY);
    unsafe {
        npu_model_randomize(m, 8);
        let mut len = 0;
        assert_eq!(npu_model_save(m, ptr::null_mut(), 0, &mut len), NpuStatus::BufferTooSmall);
        let mut buf = vec![0u8; len];
        assert_eq!(npu_model_save(m, buf.as_mut_ptr(), buf.len(), &mut len), NpuStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(npu_model_load(buf.as_ptr(), len, &mut again), NpuStatus::Ok);
        let mut buf2 = vec![0u8; len];
        assert_eq!(npu_model_save(again, buf2.as_mut_ptr(), len, &mut len), NpuStatus::Ok);
        assert_eq!(buf, buf2);
        assert_eq!(npu_model_load(buf.as_ptr(), 5, &mut again), NpuStatus::Parse);
        npu_model_free(m);
        npu_model_free(again);
    }
}

#[test]
fn energy_and_activity() {
    assert_eq!(format!("{:.2}", npu_activity_percent(214_800, 670_464, 1)), "32.04");
    let mut e = NpuEnergy::default();
    assert_eq!(unsafe { npu_energy(0.7, 0.7, 886_752, 992, 214_800, 1, &mut e) }, NpuStatus::Ok);
    assert!((e.energy_per_output_j - 0.49).abs() < 1e-12);
    assert_eq!(e.kernel_computation_index, 214_800.0 * 992.0);
    assert_eq!(unsafe { npu_energy(0.0, 0.7, 1, 1, 1, 1, &mut e) }, NpuStatus::InvalidArgument);
    assert!(last_error().contains("latency"));
}
