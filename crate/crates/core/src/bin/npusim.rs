//! `npusim` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags,
//! incompatible options, missing input files).

use std::fmt::{Display, Write as _};
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npusim::engine::{calibrate_activity, Arithmetic, DenseEngine, EventEngine, SpikeTrace, StepOutput};
use npusim::events::{
    accumulate_frame, encode_bin, encode_csv, frame_to_spikelist, parse_event_stream, synthetic_stream, window_count,
    window_events, window_events_over, AccumulationMode, EventFrame, EventRecord, Geometry, StreamFormat,
};
use npusim::model::{
    fuse_network, load_model, model_stats, parse_model_config, quantize_network, randomize_weights, save_model,
    ModelStats, NetworkSpec, Shape, WeightInit, MODEL_MAGIC,
};
use npusim::perf::{
    compare_networks, energy_report, fit_spike_overhead, ratio_csv, ratio_table, simulate_latency, HardwareConfig,
    NetworkSummary,
};
use npusim::serve::{Client, Server, ServerConfig};

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(msg: impl Display) -> CliError {
    CliError::Usage(msg.to_string())
}

fn runtime(msg: impl Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

#[derive(Parser)]
#[command(name = "npusim", version, about = "Spiking NPU pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print synapse, kernel, input and neuron counts.
    Stats {
        model: PathBuf,
    },
    /// Print every layer's input and output shape.
    Shapes {
        model: PathBuf,
    },
    /// Fuse batch norms, quantize to fixed point and save a model file.
    Quantize {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Fold batch norms into the following convolutions and save a model file.
    Fuse {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Window an event stream into frames and report per-window counts.
    Ingest {
        events: PathBuf,
        #[arg(long)]
        width: u16,
        #[arg(long)]
        height: u16,
        #[command(flatten)]
        window: WindowArgs,
        /// Per-window CSV destination (stdout if omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write a seeded random event stream (CSV if the name ends in .csv).
    Synth {
        #[arg(long)]
        width: u16,
        #[arg(long)]
        height: u16,
        #[arg(long)]
        duration_us: u64,
        /// Events per second.
        #[arg(long, default_value_t = 100_000.0)]
        rate_hz: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run a network over an event stream or random frames.
    Run(RunArgs),
    /// Latency and energy estimates, from a simulated run or from given figures.
    Perf(PerfArgs),
    /// Ratio table between two network summaries (JSON written by `run`/`perf`).
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Serve streaming inference over TCP.
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// 0 picks a free port; the bound address is printed.
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Attach packed extraction maps to results.
        #[arg(long)]
        maps: bool,
        /// Exit after this many connections have finished.
        #[arg(long)]
        connections: Option<usize>,
        #[arg(long)]
        hw: Option<PathBuf>,
    },
    /// Stream frames to a server and print one result row per window.
    Stream(StreamArgs),
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Text config or binary model file.
    model: PathBuf,
    /// Replace all weights with seeded random values.
    #[arg(long)]
    init_seed: Option<u64>,
    /// After random init, rescale weights so about this fraction of each
    /// layer fires on a random probe frame.
    #[arg(long, requires = "init_seed")]
    target_activity: Option<f64>,
    /// Density of the calibration probe frame.
    #[arg(long, default_value_t = 0.05)]
    probe_density: f64,
}

#[derive(Args, Clone)]
struct WindowArgs {
    #[arg(long, default_value_t = 50_000)]
    window_us: u64,
    #[arg(long, value_enum, default_value_t = Mode::Binary)]
    mode: Mode,
    /// Input format; guessed from the file extension when omitted.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Cover exactly this span instead of ending at the last event.
    #[arg(long)]
    duration_us: Option<u64>,
}

#[derive(Args, Clone)]
struct InputArgs {
    /// Event stream (CSV `t,x,y,p` or packed binary).
    events: Option<PathBuf>,
    /// Use this many seeded random binary frames instead of an event stream.
    #[arg(long, conflicts_with = "events")]
    random_frames: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sensor width (defaults to the network input width).
    #[arg(long)]
    width: Option<u16>,
    #[arg(long)]
    height: Option<u16>,
    #[command(flatten)]
    window: WindowArgs,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = EngineKind::Event)]
    engine: EngineKind,
    #[arg(long, value_enum, default_value_t = Arith::Fixed)]
    arith: Arith,
    /// Also simulate latency and report energy.
    #[arg(long)]
    perf: bool,
    #[command(flatten)]
    hw: HwArgs,
    /// Directory for summary.txt, layers.csv, windows.csv (and latency.csv, energy.csv).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct HwArgs {
    /// Hardware parameters as JSON.
    #[arg(long)]
    hw: Option<PathBuf>,
    /// Dynamic power in watts (overrides the hardware file).
    #[arg(long)]
    power: Option<f64>,
    /// Use this latency per output instead of the simulated one.
    #[arg(long)]
    latency_s: Option<f64>,
    /// Name recorded in the summary.
    #[arg(long)]
    name: Option<String>,
    /// Write a network summary JSON for `compare`.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct PerfArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    hw: HwArgs,
    /// Spikes per output; with --latency-s this skips simulation entirely.
    #[arg(long, requires = "latency_s")]
    spikes: Option<u64>,
    /// Timesteps per output (defaults to the network's).
    #[arg(long)]
    timesteps: Option<usize>,
    /// Fit the per-spike overhead so the simulated run takes this long.
    #[arg(long)]
    fit_latency_s: Option<f64>,
    /// Directory for latency.csv and energy.csv.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct StreamArgs {
    /// Server address, `host:port`.
    addr: String,
    #[command(flatten)]
    input: InputArgs,
    /// Input channels for random frames (event streams always have 2).
    #[arg(long, default_value_t = 2)]
    channels: usize,
    /// Send RESET before every frame.
    #[arg(long)]
    reset_each: bool,
    /// Result CSV destination (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EngineKind {
    Dense,
    Event,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Arith {
    Real,
    Fixed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Binary,
    Sum,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Bin,
}

fn read_input(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => usage(format!("{}: no such file", path.display())),
        _ => runtime(format!("{}: {e}", path.display())),
    })
}

fn write_output(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult {
    fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn load_spec(path: &Path) -> CliResult<NetworkSpec> {
    let bytes = read_input(path)?;
    let spec = if bytes.starts_with(MODEL_MAGIC) {
        load_model(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| runtime(format!("{}: not a model file", path.display())))?;
        parse_model_config(&text)
    };
    spec.map_err(|e| runtime(format!("{}: {e}", path.display())))
}

impl ModelArgs {
    /// Loads the model, applies random init and calibration, and converts it
    /// to the requested arithmetic.
    fn prepare(&self, arith: Arith) -> CliResult<NetworkSpec> {
        let mut spec = load_spec(&self.model)?;
        if let Some(seed) = self.init_seed {
            if spec.is_quantized() {
                return Err(usage("--init-seed needs a real-valued model"));
            }
            randomize_weights(&mut spec, seed, WeightInit::default()).map_err(runtime)?;
            if let Some(target) = self.target_activity {
                if !(0.0..=1.0).contains(&target) {
                    return Err(usage("--target-activity must be in [0, 1]"));
                }
                let probe = random_frame(spec.input_shape, self.probe_density, seed ^ 0x5eed, 0);
                calibrate_activity(&mut spec, &probe, target).map_err(runtime)?;
            }
        }
        match arith {
            Arith::Real => {
                if spec.is_quantized() {
                    return Err(usage("model is already quantized; use --arith fixed"));
                }
                Ok(spec)
            }
            Arith::Fixed if spec.is_quantized() => Ok(spec),
            Arith::Fixed => {
                let fused = fuse_network(&spec).map_err(runtime)?;
                let (q, saturated) = quantize_network(&fused).map_err(runtime)?;
                if saturated > 0 {
                    eprintln!("warning: {saturated} parameters saturated during quantization");
                }
                Ok(q)
            }
        }
    }
}

fn random_frame(shape: Shape, density: f64, seed: u64, index: usize) -> EventFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64));
    let mut frame = EventFrame::zeros(shape, index);
    for v in &mut frame.values {
        *v = rng.gen_bool(density.clamp(0.0, 1.0)) as u16;
    }
    frame
}

fn stream_format(path: &Path, format: Option<Format>) -> StreamFormat {
    match format {
        Some(Format::Csv) => StreamFormat::Csv,
        Some(Format::Bin) => StreamFormat::Bin,
        None if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => StreamFormat::Csv,
        None => StreamFormat::Bin,
    }
}

fn read_events(path: &Path, format: Option<Format>, geometry: Geometry) -> CliResult<Vec<EventRecord>> {
    let bytes = read_input(path)?;
    parse_event_stream(&bytes, stream_format(path, format), geometry).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn windows<'a>(events: &'a [EventRecord], w: &WindowArgs) -> CliResult<Vec<&'a [EventRecord]>> {
    if w.window_us == 0 {
        return Err(usage("--window-us must be positive"));
    }
    Ok(match w.duration_us {
        Some(d) => window_events_over(events, w.window_us, window_count(d, w.window_us)),
        None => window_events(events, w.window_us),
    })
}

fn accumulation(mode: Mode) -> AccumulationMode {
    match mode {
        Mode::Binary => AccumulationMode::Binary,
        Mode::Sum => AccumulationMode::Sum,
    }
}

/// Input frames plus the number of raw events behind each one.
struct Frames {
    frames: Vec<EventFrame>,
    events: Vec<usize>,
}

impl InputArgs {
    fn frames(&self, shape: Shape) -> CliResult<Frames> {
        if let Some(n) = self.random_frames {
            if !(0.0..=1.0).contains(&self.density) {
                return Err(usage("--density must be in [0, 1]"));
            }
            let frames: Vec<EventFrame> = (0..n).map(|i| random_frame(shape, self.density, self.seed, i)).collect();
            let events = frames.iter().map(EventFrame::nonzero).collect();
            return Ok(Frames { frames, events });
        }
        let Some(path) = &self.events else {
            return Err(usage("give an event file or --random-frames"));
        };
        if shape.channels != 2 {
            return Err(usage(format!("event frames have 2 channels but the input is {shape}")));
        }
        let geometry = Geometry {
            width: self.width.unwrap_or(shape.width as u16),
            height: self.height.unwrap_or(shape.height as u16),
        };
        if geometry.width as usize != shape.width || geometry.height as usize != shape.height {
            return Err(usage(format!(
                "sensor {}x{} does not match input {shape}",
                geometry.width, geometry.height
            )));
        }
        let events = read_events(path, self.window.format, geometry)?;
        let groups = windows(&events, &self.window)?;
        let mode = accumulation(self.window.mode);
        Ok(Frames {
            frames: groups.iter().enumerate().map(|(i, g)| accumulate_frame(g, mode, geometry, i)).collect(),
            events: groups.iter().map(|g| g.len()).collect(),
        })
    }
}

impl HwArgs {
    fn config(&self) -> CliResult<HardwareConfig> {
        let mut hw = match &self.hw {
            Some(p) => {
                let bytes = read_input(p)?;
                let text = String::from_utf8(bytes).map_err(|_| runtime(format!("{}: not UTF-8", p.display())))?;
                HardwareConfig::from_json(&text).map_err(|e| runtime(format!("{}: {e}", p.display())))?
            }
            None => HardwareConfig::default(),
        };
        if let Some(p) = self.power {
            hw.dynamic_power_w = p;
        }
        hw.check().map_err(usage)?;
        Ok(hw)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Stats { model } => stats(&model),
        Command::Shapes { model } => shapes(&model),
        Command::Quantize { model, output } => quantize(&model, &output),
        Command::Fuse { model, output } => fuse(&model, &output),
        Command::Ingest {
            events,
            width,
            height,
            window,
            output,
        } => ingest(&events, Geometry { width, height }, &window, output.as_deref()),
        Command::Synth {
            width,
            height,
            duration_us,
            rate_hz,
            seed,
            output,
        } => synth(Geometry { width, height }, duration_us, rate_hz, seed, &output),
        Command::Run(args) => run(&args),
        Command::Perf(args) => perf(&args),
        Command::Compare { a, b, csv } => compare(&a, &b, csv.as_deref()),
        Command::Serve {
            model,
            host,
            port,
            maps,
            connections,
            hw,
        } => serve(&model, &host, port, maps, connections, hw.as_deref()),
        Command::Stream(args) => stream(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn stats(path: &Path) -> CliResult {
    let spec = load_spec(path)?;
    let s = model_stats(&spec).map_err(runtime)?;
    println!("model {}", spec.name);
    println!(
        "synapses {}, kernels {}, inputs {}, neurons {}",
        s.synapses, s.kernels, s.inputs, s.neurons
    );
    println!("timesteps {}", spec.timesteps);
    println!(
        "{:>5} {:<8} {:>14} {:>14} {:>10} {:>8} {:>10}",
        "layer", "kind", "input", "output", "synapses", "kernels", "neurons"
    );
    for (i, l) in s.layers.iter().enumerate() {
        println!(
            "{:>5} {:<8} {:>14} {:>14} {:>10} {:>8} {:>10}{}",
            i,
            l.kind.name(),
            l.input.to_string(),
            l.output.to_string(),
            l.synapses(),
            l.kernels,
            l.neurons,
            if l.extract { " extract" } else { "" }
        );
    }
    Ok(())
}

fn shapes(path: &Path) -> CliResult {
    let spec = load_spec(path)?;
    let geoms = spec.geometries().map_err(runtime)?;
    println!("input {}", spec.input_shape);
    for (i, (l, g)) in spec.layers.iter().zip(&geoms).enumerate() {
        let mark = if l.extract { " *" } else { "" };
        println!("{i:>3} {:<8} {} -> {}{mark}", l.kind.name(), g.input, g.output);
    }
    Ok(())
}

fn fuse(model: &ModelArgs, output: &Path) -> CliResult {
    let spec = model.prepare(Arith::Real)?;
    let fused = fuse_network(&spec).map_err(runtime)?;
    let folded = spec.layers.iter().filter(|l| l.batchnorm.is_some()).count();
    write_output(output, save_model(&fused))?;
    println!("fused {folded} batch norms into {}", output.display());
    Ok(())
}

fn quantize(model: &ModelArgs, output: &Path) -> CliResult {
    let spec = model.prepare(Arith::Real)?;
    if spec.layers.iter().any(|l| l.batchnorm.is_some()) {
        return Err(runtime("model has unfused batch norms; run `fuse` first"));
    }
    let (q, saturated) = quantize_network(&spec).map_err(runtime)?;
    write_output(output, save_model(&q))?;
    println!("quantized {} layers, {saturated} saturated values, wrote {}", q.layers.len(), output.display());
    Ok(())
}

fn ingest(path: &Path, geometry: Geometry, w: &WindowArgs, output: Option<&Path>) -> CliResult {
    let events = read_events(path, w.format, geometry)?;
    let groups = windows(&events, w)?;
    let mode = accumulation(w.mode);
    let mut csv = String::from("window,t_start_us,events,active_negative,active_positive,max_value\n");
    for (i, g) in groups.iter().enumerate() {
        let frame = accumulate_frame(g, mode, geometry, i);
        let plane = frame.height * frame.width;
        let neg = frame.values[..plane].iter().filter(|&&v| v > 0).count();
        let pos = frame.values[plane..].iter().filter(|&&v| v > 0).count();
        let max = frame.values.iter().copied().max().unwrap_or(0);
        let _ = writeln!(csv, "{i},{},{},{neg},{pos},{max}", i as u64 * w.window_us, g.len());
    }
    match output {
        Some(p) => {
            write_output(p, csv)?;
            println!("events {}, windows {}", events.len(), groups.len());
        }
        None => {
            eprintln!("events {}, windows {}", events.len(), groups.len());
            print!("{csv}");
        }
    }
    Ok(())
}

fn synth(geometry: Geometry, duration_us: u64, rate_hz: f64, seed: u64, output: &Path) -> CliResult {
    if geometry.width == 0 || geometry.height == 0 {
        return Err(usage("sensor dimensions must be positive"));
    }
    if rate_hz.is_nan() || rate_hz < 0.0 {
        return Err(usage("--rate-hz must be nonnegative"));
    }
    let events = synthetic_stream(geometry, duration_us, rate_hz, seed);
    match stream_format(output, None) {
        StreamFormat::Csv => write_output(output, encode_csv(&events))?,
        StreamFormat::Bin => write_output(output, encode_bin(&events))?,
    }
    println!("wrote {} events to {}", events.len(), output.display());
    Ok(())
}

/// Everything a run produces.
struct RunOutcome {
    steps: Vec<StepOutput>,
    trace: Option<SpikeTrace>,
}

fn execute(spec: &NetworkSpec, frames: &[EventFrame], engine: EngineKind, arith: Arith) -> CliResult<RunOutcome> {
    let arithmetic = match arith {
        Arith::Real => Arithmetic::Real,
        Arith::Fixed => Arithmetic::Fixed,
    };
    match engine {
        EngineKind::Dense => {
            let mut e = DenseEngine::new(spec, arithmetic).map_err(runtime)?;
            let steps = frames.iter().map(|f| e.step(f)).collect::<Result<_, _>>().map_err(runtime)?;
            Ok(RunOutcome { steps, trace: None })
        }
        EngineKind::Event => {
            let mut e = EventEngine::new(spec).map_err(runtime)?;
            let mut trace = SpikeTrace::new(spec.layers.len());
            let mut steps = Vec::with_capacity(frames.len());
            for f in frames {
                let list = frame_to_spikelist(f).map_err(runtime)?;
                steps.push(e.step(&list, Some(&mut trace)).map_err(runtime)?);
            }
            Ok(RunOutcome {
                steps,
                trace: Some(trace),
            })
        }
    }
}

fn run(args: &RunArgs) -> CliResult {
    if args.engine == EngineKind::Event && args.arith == Arith::Real {
        return Err(usage("the event-driven engine needs --arith fixed"));
    }
    if args.engine == EngineKind::Event && args.input.window.mode == Mode::Sum {
        return Err(usage("the event-driven engine takes binary frames; use --mode binary"));
    }
    if args.perf && args.arith == Arith::Real {
        return Err(usage("--perf simulates the fixed-point pipeline; use --arith fixed"));
    }
    let spec = args.model.prepare(args.arith)?;
    let stats = model_stats(&spec).map_err(runtime)?;
    let input = args.input.frames(spec.input_shape)?;
    let mut outcome = execute(&spec, &input.frames, args.engine, args.arith)?;
    if args.perf && outcome.trace.is_none() {
        // the latency model replays the event pipeline's trace; both engines agree bit for bit
        let binary: Vec<EventFrame> = input.frames.iter().map(EventFrame::binarized).collect();
        outcome.trace = execute(&spec, &binary, EngineKind::Event, Arith::Fixed)?.trace;
    }

    let report = run_report(&spec, &stats, &input, &outcome.steps);
    print!("{}", report.summary);
    if let Some(dir) = &args.out_dir {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        write_output(&dir.join("summary.txt"), &report.summary)?;
        write_output(&dir.join("layers.csv"), &report.layers_csv)?;
        write_output(&dir.join("windows.csv"), &report.windows_csv)?;
    }
    if args.perf {
        let trace = outcome.trace.as_ref().expect("trace recorded");
        let total: u64 = outcome.steps.iter().map(StepOutput::total).sum();
        perf_report(&spec, &stats, trace, total, &args.hw, None, None, args.out_dir.as_deref())?;
    }
    Ok(())
}

struct RunReport {
    summary: String,
    layers_csv: String,
    windows_csv: String,
}

fn run_report(spec: &NetworkSpec, stats: &ModelStats, input: &Frames, steps: &[StepOutput]) -> RunReport {
    let layers = spec.layers.len();
    let windows = steps.len();
    let mut layer_spikes = vec![0u64; layers];
    let mut layer_sat = vec![0u64; layers];
    for s in steps {
        for l in 0..layers {
            layer_spikes[l] += s.spikes[l].len() as u64;
            layer_sat[l] += s.saturations[l];
        }
    }
    let total: u64 = layer_spikes.iter().sum();
    let per_output = if windows == 0 { 0.0 } else { total as f64 / windows as f64 };

    let mut summary = String::new();
    let _ = writeln!(summary, "model {}", spec.name);
    let _ = writeln!(summary, "windows {windows}");
    let _ = writeln!(summary, "input events {}", input.events.iter().sum::<usize>());
    let _ = writeln!(summary, "total spikes {total}");
    let _ = writeln!(summary, "spikes/output {per_output:.2}");
    let _ = writeln!(summary, "activity {:.2}%", stats.activity_percent(total, windows));
    let _ = writeln!(
        summary,
        "{:>5} {:<8} {:>14} {:>12} {:>10} {:>11}",
        "layer", "kind", "output", "spikes", "activity%", "saturated"
    );
    let mut layers_csv = String::from("layer,kind,output,neurons,spikes,activity_percent,saturations,extract\n");
    for (l, ls) in stats.layers.iter().enumerate() {
        let act = npusim::model::activity_percent(layer_spikes[l], ls.neurons as u64, windows);
        let _ = writeln!(
            summary,
            "{l:>5} {:<8} {:>14} {:>12} {act:>10.2} {:>11}",
            ls.kind.name(),
            ls.output.to_string(),
            layer_spikes[l],
            layer_sat[l]
        );
        let _ = writeln!(
            layers_csv,
            "{l},{},{},{},{},{act:.4},{},{}",
            ls.kind.name(),
            ls.output,
            ls.neurons,
            layer_spikes[l],
            layer_sat[l],
            ls.extract
        );
    }

    let mut windows_csv = String::from("window,input_events,input_active,spikes,activity_percent");
    for l in 0..layers {
        let _ = write!(windows_csv, ",l{l}");
    }
    windows_csv.push('\n');
    for (w, s) in steps.iter().enumerate() {
        let t = s.total();
        let _ = write!(
            windows_csv,
            "{w},{},{},{t},{:.4}",
            input.events[w],
            input.frames[w].nonzero(),
            stats.activity_percent(t, 1)
        );
        for c in s.counts() {
            let _ = write!(windows_csv, ",{c}");
        }
        windows_csv.push('\n');
    }
    RunReport {
        summary,
        layers_csv,
        windows_csv,
    }
}

/// Prints latency and energy for a recorded trace. One output spans the
/// network's timesteps, so per-output latency and spikes are run totals
/// scaled by `timesteps / windows`.
#[allow(clippy::too_many_arguments)]
fn perf_report(
    spec: &NetworkSpec,
    stats: &ModelStats,
    trace: &SpikeTrace,
    total_spikes: u64,
    hw_args: &HwArgs,
    timesteps: Option<usize>,
    fit_latency_s: Option<f64>,
    out_dir: Option<&Path>,
) -> CliResult {
    let mut hw = hw_args.config()?;
    if let Some(target) = fit_latency_s {
        let (fitted, report) = fit_spike_overhead(trace, spec, &hw, target).map_err(runtime)?;
        println!(
            "fitted overhead {} cycles/spike: {:.6e} s simulated vs {:.6e} s target",
            fitted.cycles_per_spike_overhead, report.end_to_end_s, target
        );
        hw = fitted;
    }
    let latency = simulate_latency(trace, spec, &hw).map_err(runtime)?;
    print!("{}", latency.to_table());
    let timesteps = timesteps.unwrap_or(spec.timesteps).max(1);
    let windows = trace.timesteps.max(1);
    let scale = timesteps as f64 / windows as f64;
    let latency_s = hw_args.latency_s.unwrap_or(latency.end_to_end_s * scale);
    let spikes = (total_spikes as f64 * scale).round() as u64;
    println!("latency/output {latency_s:.6e} s, spikes/output {spikes}");
    let energy = energy_report(latency_s, &hw, stats, spikes, timesteps).map_err(runtime)?;
    print!("{}", energy.to_table());
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
        write_output(&dir.join("latency.csv"), latency.to_csv())?;
        write_output(&dir.join("energy.csv"), energy.to_csv())?;
    }
    write_summary(spec, stats, hw_args, spikes, timesteps, latency_s, hw.dynamic_power_w)
}

fn write_summary(
    spec: &NetworkSpec,
    stats: &ModelStats,
    hw_args: &HwArgs,
    spikes: u64,
    timesteps: usize,
    latency_s: f64,
    power_w: f64,
) -> CliResult {
    if let Some(path) = &hw_args.summary {
        let name = hw_args.name.clone().unwrap_or_else(|| spec.name.clone());
        let summary = NetworkSummary::from_run(&name, stats, spikes, timesteps, latency_s, power_w);
        let json = serde_json::to_string_pretty(&summary).map_err(runtime)?;
        write_output(path, json + "\n")?;
    }
    Ok(())
}

fn perf(args: &PerfArgs) -> CliResult {
    if let Some(spikes) = args.spikes {
        let spec = load_spec(&args.model.model)?;
        let stats = model_stats(&spec).map_err(runtime)?;
        let hw = args.hw.config()?;
        let latency_s = args.hw.latency_s.expect("enforced by clap");
        let timesteps = args.timesteps.unwrap_or(spec.timesteps);
        println!("activity {:.2}%", stats.activity_percent(spikes, timesteps));
        let energy = energy_report(latency_s, &hw, &stats, spikes, timesteps).map_err(runtime)?;
        print!("{}", energy.to_table());
        if let Some(dir) = &args.out_dir {
            fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
            write_output(&dir.join("energy.csv"), energy.to_csv())?;
        }
        return write_summary(&spec, &stats, &args.hw, spikes, timesteps, latency_s, hw.dynamic_power_w);
    }
    let spec = args.model.prepare(Arith::Fixed)?;
    let stats = model_stats(&spec).map_err(runtime)?;
    let input = args.input.frames(spec.input_shape)?;
    let binary: Vec<EventFrame> = input.frames.iter().map(EventFrame::binarized).collect();
    let outcome = execute(&spec, &binary, EngineKind::Event, Arith::Fixed)?;
    let total = outcome.steps.iter().map(StepOutput::total).sum();
    let trace = outcome.trace.expect("event engine records a trace");
    perf_report(
        &spec,
        &stats,
        &trace,
        total,
        &args.hw,
        args.timesteps,
        args.fit_latency_s,
        args.out_dir.as_deref(),
    )
}

fn read_summary(path: &Path) -> CliResult<NetworkSummary> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn compare(a: &Path, b: &Path, csv: Option<&Path>) -> CliResult {
    let (a, b) = (read_summary(a)?, read_summary(b)?);
    let rows = compare_networks(&a, &b).map_err(runtime)?;
    print!("{}", ratio_table(&a, &b, &rows));
    if let Some(p) = csv {
        write_output(p, ratio_csv(&rows))?;
    }
    Ok(())
}

fn serve(model: &ModelArgs, host: &str, port: u16, maps: bool, connections: Option<usize>, hw: Option<&Path>) -> CliResult {
    let spec = model.prepare(Arith::Fixed)?;
    let hw = HwArgs {
        hw: hw.map(Path::to_path_buf),
        power: None,
        latency_s: None,
        name: None,
        summary: None,
    }
    .config()?;
    let server = Server::bind(
        (host, port),
        ServerConfig {
            spec,
            hw,
            send_maps: maps,
        },
    )
    .map_err(runtime)?;
    println!("listening on {}", server.local_addr().map_err(runtime)?);
    let _ = io::stdout().flush();
    match connections {
        Some(n) => server.run_for(n),
        None => server.run(),
    }
    .map_err(runtime)
}

fn stream(args: &StreamArgs) -> CliResult {
    let shape = if args.input.random_frames.is_some() {
        let (Some(w), Some(h)) = (args.input.width, args.input.height) else {
            return Err(usage("random frames need --width and --height"));
        };
        Shape::new(args.channels, h as usize, w as usize)
    } else {
        let (Some(w), Some(h)) = (args.input.width, args.input.height) else {
            return Err(usage("event streams need --width and --height"));
        };
        Shape::new(2, h as usize, w as usize)
    };
    if args.input.window.mode == Mode::Sum {
        return Err(usage("frames travel as binary spikes; use --mode binary"));
    }
    let input = args.input.frames(shape)?;
    let mut client = Client::connect(args.addr.as_str(), shape).map_err(runtime)?;
    let mut csv = String::new();
    for (i, frame) in input.frames.iter().enumerate() {
        if args.reset_each {
            client.reset().map_err(runtime)?;
        }
        let list = frame_to_spikelist(frame).map_err(runtime)?;
        let r = client.frame(i as u32, &list).map_err(runtime)?;
        if r.window != i as u32 {
            return Err(runtime(format!("result for window {} arrived at position {i}", r.window)));
        }
        if i == 0 {
            csv.push_str("window,latency_s");
            for k in 0..r.counts.len() {
                let _ = write!(csv, ",e{k}");
            }
            csv.push('\n');
        }
        let _ = write!(csv, "{},{:e}", r.window, r.latency_s);
        for c in &r.counts {
            let _ = write!(csv, ",{c}");
        }
        csv.push('\n');
    }
    client.end().map_err(runtime)?;
    match &args.output {
        Some(p) => {
            write_output(p, &csv)?;
            println!("streamed {} frames", input.frames.len());
        }
        None => print!("{csv}"),
    }
    Ok(())
}
