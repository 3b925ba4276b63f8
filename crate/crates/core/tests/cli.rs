use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_npusim");

const TOY: &str = "\
name toy
input 2 16 12
timesteps 1
neuron lif tau=2 vth=1 leak=decay
8c3s1p1!
avg2s2
16c3s1p1!
";

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn npusim(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A toy model plus a two-second synthetic event stream over its sensor.
fn toy_setup() -> (TempDir, PathBuf, PathBuf) {
    let dir = TempDir::new().unwrap();
    let model = dir.path().join("toy.cfg");
    std::fs::write(&model, TOY).unwrap();
    let events = dir.path().join("events.csv");
    stdout(&npusim(&[
        "synth", "--width", "12", "--height", "16", "--duration-us", "2000000", "--rate-hz", "2000", "--seed", "7", "-o",
        p(&events),
    ]));
    (dir, model, events)
}

/// Per-window spike counts of each layer from a run's windows.csv.
fn layer_counts(path: &Path) -> Vec<Vec<u64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let first = header.iter().position(|h| *h == "l0").unwrap();
    lines
        .map(|l| l.split(',').skip(first).map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn stats_prints_accounting() {
    let vgg = stdout(&npusim(&["stats", p(&configs().join("small_32_st_vgg.cfg"))]));
    assert!(vgg.contains("synapses 886752, kernels 992, inputs 145920, neurons 670464"), "{vgg}");
    let scnn = stdout(&npusim(&["stats", p(&configs().join("scnn.cfg"))]));
    assert!(scnn.contains("synapses 25763, kernels 227, inputs 240"), "{scnn}");
}

#[test]
fn exit_codes() {
    assert_eq!(npusim(&["stats", "/nonexistent/model.cfg"]).status.code(), Some(2));
    assert_eq!(npusim(&["stats"]).status.code(), Some(2));
    assert_eq!(npusim(&["frobnicate"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "input 2 8 8\n32q3\n").unwrap();
    let out = npusim(&["stats", p(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let (_dir, model, events) = toy_setup();
    let out = npusim(&["run", p(&model), p(&events), "--engine", "event", "--arith", "real"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shapes_lists_extraction_maps() {
    let text = stdout(&npusim(&["shapes", p(&configs().join("small_32_st_vgg.cfg"))]));
    let marked: Vec<&str> = text
        .lines()
        .filter(|l| l.ends_with('*'))
        .map(|l| l.split_whitespace().nth(4).unwrap())
        .collect();
    assert_eq!(marked, ["64x38x30", "128x19x15", "128x10x8", "128x5x4", "128x3x2", "128x2x1"]);
}

#[test]
fn sixty_second_stream_gives_1200_windows() {
    let dir = TempDir::new().unwrap();
    let events = dir.path().join("clip.bin");
    stdout(&npusim(&[
        "synth", "--width", "304", "--height", "240", "--duration-us", "60000000", "--rate-hz", "2000", "-o",
        p(&events),
    ]));
    let csv = dir.path().join("windows.csv");
    let out = stdout(&npusim(&[
        "ingest", p(&events), "--width", "304", "--height", "240", "--window-us", "50000", "--duration-us", "60000000",
        "-o", p(&csv),
    ]));
    assert!(out.contains("windows 1200"), "{out}");
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1201);
}

#[test]
fn dense_and_event_engines_agree() {
    let (dir, model, events) = toy_setup();
    let mut counts = Vec::new();
    for engine in ["dense", "event"] {
        let out_dir = dir.path().join(engine);
        stdout(&npusim(&[
            "run", p(&model), p(&events), "--engine", engine, "--arith", "fixed", "--init-seed", "4",
            "--target-activity", "0.3", "--out-dir", p(&out_dir),
        ]));
        counts.push(layer_counts(&out_dir.join("windows.csv")));
    }
    assert_eq!(counts[0].len(), 40);
    assert_eq!(counts[0], counts[1]);
    assert!(counts[0].iter().flatten().sum::<u64>() > 0);
}

#[test]
fn perf_reports_energy() {
    let vgg = configs().join("small_32_st_vgg.cfg");
    let text = stdout(&npusim(&[
        "perf", p(&vgg), "--spikes", "214800", "--latency-s", "0.7", "--power", "0.7",
    ]));
    assert!(text.contains("activity 32.04%"), "{text}");
    assert!(text.contains("energy/output   4.900000e-1 J"), "{text}");

    let (dir, model, events) = toy_setup();
    let out_dir = dir.path().join("perf");
    let text = stdout(&npusim(&[
        "run", p(&model), p(&events), "--init-seed", "4", "--target-activity", "0.3", "--perf", "--power", "0.7",
        "--latency-s", "0.7", "--out-dir", p(&out_dir),
    ]));
    assert!(text.contains("end-to-end"), "{text}");
    assert!(text.contains("energy/output   4.900000e-1 J"), "{text}");
    for f in ["summary.txt", "layers.csv", "windows.csv", "latency.csv", "energy.csv"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
}

#[test]
fn compare_reads_summaries() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    stdout(&npusim(&[
        "perf", p(&configs().join("small_32_st_vgg.cfg")), "--spikes", "214800", "--latency-s", "0.7", "--power",
        "0.7", "--summary", p(&a),
    ]));
    stdout(&npusim(&[
        "perf", p(&configs().join("scnn.cfg")), "--spikes", "7200", "--latency-s", "0.001", "--power", "0.2",
        "--summary", p(&b),
    ]));
    let csv = dir.path().join("ratios.csv");
    let text = stdout(&npusim(&["compare", p(&a), p(&b), "--csv", p(&csv)]));
    assert!(text.contains("kernel_computation_index"), "{text}");
    let rows = std::fs::read_to_string(&csv).unwrap();
    let synapses = rows.lines().find(|l| l.starts_with("synapses,")).unwrap();
    let ratio: f64 = synapses.rsplit(',').next().unwrap().parse().unwrap();
    assert!((ratio - 886752.0 / 25763.0).abs() < 1e-9);
}

#[test]
fn fuse_and_quantize_write_loadable_models() {
    let (dir, model, _) = toy_setup();
    let fused = dir.path().join("toy.fused");
    let quant = dir.path().join("toy.q");
    stdout(&npusim(&["fuse", p(&model), "--init-seed", "2", "-o", p(&fused)]));
    let text = stdout(&npusim(&["quantize", p(&fused), "-o", p(&quant)]));
    assert!(text.contains("saturated"), "{text}");
    let a = stdout(&npusim(&["stats", p(&model)]));
    let b = stdout(&npusim(&["stats", p(&quant)]));
    assert_eq!(a.lines().nth(1), b.lines().nth(1));
}

#[test]
fn streaming_matches_local_run() {
    let (dir, model, events) = toy_setup();
    let out_dir = dir.path().join("local");
    let init = ["--init-seed", "9", "--target-activity", "0.3"];
    let mut args = vec!["run", p(&model), p(&events)];
    args.extend(init);
    args.extend(["--out-dir", p(&out_dir)]);
    stdout(&npusim(&args));
    let local = layer_counts(&out_dir.join("windows.csv"));

    let mut server = Command::new(BIN)
        .args(["serve", p(&model), "--port", "0", "--connections", "2"])
        .args(init)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(server.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").unwrap().to_string();

    let mut runs = Vec::new();
    for _ in 0..2 {
        let args = [
            "stream", addr.as_str(), p(&events), "--width", "12", "--height", "16",
        ];
        runs.push(stdout(&npusim(&args)));
    }
    assert!(server.wait().unwrap().success());
    assert_eq!(runs[0], runs[1]);

    let rows: Vec<Vec<&str>> = runs[0].lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), local.len());
    for (w, row) in rows.iter().enumerate() {
        assert_eq!(row[0], w.to_string());
        // extraction layers of the toy net are 0 and 2
        let got: Vec<u64> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(got, [local[w][0], local[w][2]], "window {w}");
    }
}
