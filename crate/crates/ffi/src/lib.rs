//! C ABI over the simulator.
//!
//! Models and engines are opaque heap handles created by `npu_*_new`/`npu_model_*`
//! constructors and released with the matching `*_free`. Every fallible call
//! returns an [`NpuStatus`]; on failure a description is kept per thread and
//! can be read with [`npu_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use npusim::engine::{calibrate_activity, Arithmetic, DenseEngine, EventEngine, StepOutput};
use npusim::events::{EventFrame, SpikeCoord, SpikeList};
use npusim::model::{
    fuse_network, load_model, model_stats, parse_model_config, quantize_network, randomize_weights, save_model,
    NetworkSpec, Shape, WeightInit,
};
use npusim::perf::NetworkSummary;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Model = 4,
    Engine = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Which engine a handle runs.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NpuEngineKind {
    /// Dense timestep engine in real arithmetic.
    DenseReal = 0,
    /// Dense timestep engine in fixed point.
    DenseFixed = 1,
    /// Event-driven pipeline (fixed point).
    Event = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NpuShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NpuModelStats {
    pub inputs: u64,
    pub synapses: u64,
    pub kernels: u64,
    pub neurons: u64,
    pub layers: u64,
    pub timesteps: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NpuEnergy {
    pub energy_per_output_j: f64,
    pub energy_per_spike_j: f64,
    pub energy_per_synapse_j: f64,
    pub energy_norm_j: f64,
    pub kernel_computation_index: f64,
}

/// Opaque network handle.
pub struct NpuModel {
    spec: NetworkSpec,
}

enum Runner {
    Dense(DenseEngine),
    Event(EventEngine),
}

/// Opaque engine handle with its own membrane state.
pub struct NpuEngine {
    runner: Runner,
    input: Shape,
    outputs: Vec<Shape>,
    last: Option<StepOutput>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(NpuStatus, String);

type FfiResult = Result<(), Failure>;

fn fail(status: NpuStatus, msg: impl ToString) -> Failure {
    Failure(status, msg.to_string())
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> FfiResult) -> NpuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            NpuStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            NpuStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(NpuStatus::NullPointer, format!("{what} is null")))
}

unsafe fn get_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(NpuStatus::NullPointer, format!("{what} is null")))
}

unsafe fn bytes<'a>(p: *const u8, len: usize, what: &str) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    get(p, what)?;
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn emit<T>(out: *mut *mut T, value: T) -> FfiResult {
    get_mut(out, "output pointer")?;
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Description of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn npu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a NUL-terminated string.
#[no_mangle]
pub extern "C" fn npu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a NUL-terminated text configuration. Weights start at zero.
///
/// # Safety
/// `text` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn npu_model_from_config(text: *const c_char, out: *mut *mut NpuModel) -> NpuStatus {
    guard(|| {
        get(text, "text")?;
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| fail(NpuStatus::Parse, "config is not UTF-8"))?;
        let spec = parse_model_config(text).map_err(|e| fail(NpuStatus::Parse, e))?;
        emit(out, NpuModel { spec })
    })
}

/// Reads a binary model file image.
///
/// # Safety
/// `data` must point to `len` readable bytes and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn npu_model_load(data: *const u8, len: usize, out: *mut *mut NpuModel) -> NpuStatus {
    guard(|| {
        let spec = load_model(bytes(data, len, "data")?).map_err(|e| fail(NpuStatus::Parse, e))?;
        emit(out, NpuModel { spec })
    })
}

/// Serializes the model. `*len` is set to the required size; when `cap` is
/// too small nothing is written and `NPU_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `model` must be a live handle, `buf` writable for `cap` bytes (or null
/// with `cap == 0`) and `len` writable.
#[no_mangle]
pub unsafe extern "C" fn npu_model_save(model: *const NpuModel, buf: *mut u8, cap: usize, len: *mut usize) -> NpuStatus {
    guard(|| {
        let image = save_model(&get(model, "model")?.spec);
        *get_mut(len, "len")? = image.len();
        if cap < image.len() {
            return Err(fail(NpuStatus::BufferTooSmall, format!("need {} bytes", image.len())));
        }
        get_mut(buf, "buf")?;
        ptr::copy_nonoverlapping(image.as_ptr(), buf, image.len());
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn npu_model_free(model: *mut NpuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn npu_model_stats(model: *const NpuModel, out: *mut NpuModelStats) -> NpuStatus {
    guard(|| {
        let spec = &get(model, "model")?.spec;
        let s = model_stats(spec).map_err(|e| fail(NpuStatus::Model, e))?;
        *get_mut(out, "out")? = NpuModelStats {
            inputs: s.inputs as u64,
            synapses: s.synapses as u64,
            kernels: s.kernels as u64,
            neurons: s.neurons as u64,
            layers: spec.layers.len() as u64,
            timesteps: spec.timesteps as u64,
        };
        Ok(())
    })
}

/// Input shape, or with `layer >= 0` the output shape of that layer.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn npu_model_shape(model: *const NpuModel, layer: i64, out: *mut NpuShape) -> NpuStatus {
    guard(|| {
        let spec = &get(model, "model")?.spec;
        let shape = if layer < 0 {
            spec.input_shape
        } else {
            let geoms = spec.geometries().map_err(|e| fail(NpuStatus::Model, e))?;
            geoms
                .get(layer as usize)
                .ok_or_else(|| fail(NpuStatus::InvalidArgument, format!("no layer {layer}")))?
                .output
        };
        *get_mut(out, "out")? = to_c(shape);
        Ok(())
    })
}

fn to_c(s: Shape) -> NpuShape {
    NpuShape {
        channels: s.channels,
        height: s.height,
        width: s.width,
    }
}

/// Replaces all weights with seeded uniform values.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn npu_model_randomize(model: *mut NpuModel, seed: u64) -> NpuStatus {
    guard(|| {
        let spec = &mut get_mut(model, "model")?.spec;
        if spec.is_quantized() {
            return Err(fail(NpuStatus::InvalidArgument, "model is already quantized"));
        }
        randomize_weights(spec, seed, WeightInit::default()).map_err(|e| fail(NpuStatus::Model, e))
    })
}

/// Rescales real weights so about `target` of each layer's neurons fire on
/// `probe`, a binary input frame of `len` bytes in `(channel, y, x)` order.
///
/// # Safety
/// `model` must be a live handle and `probe` readable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn npu_model_calibrate(model: *mut NpuModel, probe: *const u8, len: usize, target: f64) -> NpuStatus {
    guard(|| {
        let spec = &mut get_mut(model, "model")?.spec;
        if !(0.0..=1.0).contains(&target) {
            return Err(fail(NpuStatus::InvalidArgument, "target must be in [0, 1]"));
        }
        let frame = to_frame(spec.input_shape, bytes(probe, len, "probe")?)?;
        calibrate_activity(spec, &frame, target)
            .map(|_| ())
            .map_err(|e| fail(NpuStatus::Engine, e))
    })
}

/// Fuses batch norms and converts the model to fixed point in place.
/// `saturated` (optional) receives the number of clamped parameters.
///
/// # Safety
/// `model` must be a live handle; `saturated` may be null.
#[no_mangle]
pub unsafe extern "C" fn npu_model_quantize(model: *mut NpuModel, saturated: *mut u64) -> NpuStatus {
    guard(|| {
        let m = get_mut(model, "model")?;
        let fused = fuse_network(&m.spec).map_err(|e| fail(NpuStatus::Model, e))?;
        let (q, sat) = quantize_network(&fused).map_err(|e| fail(NpuStatus::Model, e))?;
        m.spec = q;
        if let Some(s) = saturated.as_mut() {
            *s = sat;
        }
        Ok(())
    })
}

fn to_frame(shape: Shape, values: &[u8]) -> Result<EventFrame, Failure> {
    if values.len() != shape.len() {
        return Err(fail(
            NpuStatus::InvalidArgument,
            format!("input has {} values, network expects {} ({shape})", values.len(), shape.len()),
        ));
    }
    let mut frame = EventFrame::zeros(shape, 0);
    frame.values.iter_mut().zip(values).for_each(|(d, &s)| *d = s as u16);
    Ok(frame)
}

/// Creates an engine with zeroed membranes. The model may be freed afterwards.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn npu_engine_new(model: *const NpuModel, kind: NpuEngineKind, out: *mut *mut NpuEngine) -> NpuStatus {
    guard(|| {
        let spec = &get(model, "model")?.spec;
        let engine_err = |e| fail(NpuStatus::Engine, e);
        let runner = match kind {
            NpuEngineKind::DenseReal => Runner::Dense(DenseEngine::new(spec, Arithmetic::Real).map_err(engine_err)?),
            NpuEngineKind::DenseFixed => Runner::Dense(DenseEngine::new(spec, Arithmetic::Fixed).map_err(engine_err)?),
            NpuEngineKind::Event => Runner::Event(EventEngine::new(spec).map_err(engine_err)?),
        };
        let outputs = spec
            .geometries()
            .map_err(|e| fail(NpuStatus::Model, e))?
            .iter()
            .map(|g| g.output)
            .collect();
        emit(
            out,
            NpuEngine {
                runner,
                input: spec.input_shape,
                outputs,
                last: None,
            },
        )
    })
}

/// Advances one timestep on a dense input frame of `len` values in
/// `(channel, y, x)` order. The event engine takes binary frames only.
/// Per-layer spike counts go to `counts` (may be null), which must hold
/// `counts_len >= layers` entries.
///
/// # Safety
/// `engine` must be a live handle, `input` readable for `len` bytes and
/// `counts` writable for `counts_len` entries.
#[no_mangle]
pub unsafe extern "C" fn npu_engine_step(
    engine: *mut NpuEngine,
    input: *const u8,
    len: usize,
    counts: *mut u64,
    counts_len: usize,
) -> NpuStatus {
    guard(|| {
        let e = get_mut(engine, "engine")?;
        let frame = to_frame(e.input, bytes(input, len, "input")?)?;
        if !counts.is_null() && counts_len < e.outputs.len() {
            return Err(fail(
                NpuStatus::BufferTooSmall,
                format!("need room for {} counts", e.outputs.len()),
            ));
        }
        let out = match &mut e.runner {
            Runner::Dense(d) => d.step(&frame),
            Runner::Event(ev) => {
                if !frame.is_binary() {
                    return Err(fail(NpuStatus::InvalidArgument, "event engine input must be binary"));
                }
                let list = npusim::events::frame_to_spikelist(&frame).map_err(|e| fail(NpuStatus::InvalidArgument, e))?;
                ev.step(&list, None)
            }
        }
        .map_err(|e| fail(NpuStatus::Engine, e))?;
        if !counts.is_null() {
            let dst = slice::from_raw_parts_mut(counts, counts_len);
            dst.iter_mut().zip(out.counts()).for_each(|(d, c)| *d = c);
        }
        e.last = Some(out);
        Ok(())
    })
}

/// Writes the last step's binary output map of `layer` (one byte per
/// neuron, `(channel, y, x)` order) into `buf`.
///
/// # Safety
/// `engine` must be a live handle and `buf` writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn npu_engine_output(engine: *const NpuEngine, layer: usize, buf: *mut u8, len: usize) -> NpuStatus {
    guard(|| {
        let e = get(engine, "engine")?;
        let shape = *e
            .outputs
            .get(layer)
            .ok_or_else(|| fail(NpuStatus::InvalidArgument, format!("no layer {layer}")))?;
        if len < shape.len() {
            return Err(fail(NpuStatus::BufferTooSmall, format!("need {} bytes", shape.len())));
        }
        get_mut(buf, "buf")?;
        let dst = slice::from_raw_parts_mut(buf, len);
        dst[..shape.len()].fill(0);
        let empty = SpikeList::default();
        let spikes = e.last.as_ref().map_or(&empty, |o| &o.spikes[layer]);
        for &SpikeCoord { c, y, x } in &spikes.entries {
            dst[shape.index(c as usize, y as usize, x as usize)] = 1;
        }
        Ok(())
    })
}

/// Zeroes every membrane potential and the timestep counter.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn npu_engine_reset(engine: *mut NpuEngine) -> NpuStatus {
    guard(|| {
        let e = get_mut(engine, "engine")?;
        match &mut e.runner {
            Runner::Dense(d) => d.reset(),
            Runner::Event(ev) => ev.reset(),
        }
        e.last = None;
        Ok(())
    })
}

/// Releases an engine. Null is ignored.
///
/// # Safety
/// `engine` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn npu_engine_free(engine: *mut NpuEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// `spikes / (neurons * timesteps) * 100`; 0 when either count is 0.
#[no_mangle]
pub extern "C" fn npu_activity_percent(spikes: u64, neurons: u64, timesteps: u64) -> f64 {
    npusim::model::activity_percent(spikes, neurons, timesteps as usize)
}

/// Energy figures of one inference.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn npu_energy(
    latency_s: f64,
    power_w: f64,
    synapses: u64,
    kernels: u64,
    spikes: u64,
    timesteps: u64,
    out: *mut NpuEnergy,
) -> NpuStatus {
    guard(|| {
        let summary = NetworkSummary {
            name: String::new(),
            inputs: 0,
            timesteps: timesteps as usize,
            activity_percent: 0.0,
            synapses,
            total_spikes: spikes,
            kernels,
            latency_s,
            power_w,
        };
        let e = summary.energy().map_err(|e| fail(NpuStatus::InvalidArgument, e))?;
        *get_mut(out, "out")? = NpuEnergy {
            energy_per_output_j: e.energy_per_output_j,
            energy_per_spike_j: e.energy_per_spike_j,
            energy_per_synapse_j: e.energy_per_synapse_j,
            energy_norm_j: e.energy_norm_j,
            kernel_computation_index: e.kernel_computation_index,
        };
        Ok(())
    })
}
