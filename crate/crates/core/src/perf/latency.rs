use std::fmt::Write as _;

use super::{HardwareConfig, PerfError};
use crate::engine::SpikeTrace;
use crate::model::{ConvGeometry, NetworkSpec, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTiming {
    pub npus: u64,
    pub spikes: u64,
    pub updates: u64,
    pub busy_cycles: u64,
    /// Summed time spikes spent queued before service.
    pub wait_cycles: u64,
    pub busy_s: f64,
    pub wait_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub clock_hz: f64,
    pub layers: Vec<LayerTiming>,
    /// Completion of the last output event.
    pub end_to_end_cycles: u64,
    pub end_to_end_s: f64,
    /// Completion of each timestep, measured from its input becoming available.
    pub per_timestep_s: Vec<f64>,
    /// Layer with the largest busy time (lowest index on ties).
    pub bottleneck: usize,
    pub readout_cycles: u64,
}

impl LatencyReport {
    pub fn busy_s(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.busy_s).collect()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>5} {:>5} {:>10} {:>12} {:>14} {:>14}",
            "layer", "npus", "spikes_in", "updates", "busy_s", "wait_s"
        );
        for (i, l) in self.layers.iter().enumerate() {
            let mark = if i == self.bottleneck { " *" } else { "" };
            let _ = writeln!(
                s,
                "{:>5} {:>5} {:>10} {:>12} {:>14.6e} {:>14.6e}{mark}",
                i, l.npus, l.spikes, l.updates, l.busy_s, l.wait_s
            );
        }
        let _ = writeln!(s, "end-to-end {:.6e} s ({} cycles)", self.end_to_end_s, self.end_to_end_cycles);
        let _ = writeln!(s, "bottleneck layer {}", self.bottleneck);
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,npus,spikes_in,updates,busy_cycles,wait_cycles,busy_s,wait_s\n");
        for (i, l) in self.layers.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{},{},{},{},{:e},{:e}",
                l.npus, l.spikes, l.updates, l.busy_cycles, l.wait_cycles, l.busy_s, l.wait_s
            );
        }
        s
    }
}

fn div_ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

struct Spike {
    raster: u64,
    updates: u64,
}

/// Buckets the trace per `[layer][timestep]`, checking every entry against the network.
fn bucket(trace: &SpikeTrace, geoms: &[ConvGeometry]) -> Result<Vec<Vec<Vec<Spike>>>, PerfError> {
    let layers = geoms.len();
    if trace.layers != layers {
        return Err(PerfError::TraceMismatch(format!(
            "trace has {} layers, network {layers}",
            trace.layers
        )));
    }
    let timesteps = trace.timesteps;
    let mut buckets: Vec<Vec<Vec<Spike>>> = (0..=layers).map(|_| (0..timesteps).map(|_| Vec::new()).collect()).collect();
    for (i, e) in trace.entries.iter().enumerate() {
        let l = e.layer as usize;
        let t = e.timestep as usize;
        if l > layers || t >= timesteps {
            return Err(PerfError::TraceMismatch(format!("entry {i}: layer {l}, timestep {t} out of range")));
        }
        let shape: Shape = if l < layers { geoms[l].input } else { geoms[layers - 1].output };
        let (c, y, x) = (e.source.c as usize, e.source.y as usize, e.source.x as usize);
        if c >= shape.channels || y >= shape.height || x >= shape.width {
            return Err(PerfError::TraceMismatch(format!("entry {i}: spike ({c}, {y}, {x}) outside {shape}")));
        }
        let expected = if l < layers { geoms[l].overlap_count(y, x) } else { 0 };
        if e.updates as usize != expected {
            return Err(PerfError::TraceMismatch(format!(
                "entry {i}: {} updates, geometry implies {expected}",
                e.updates
            )));
        }
        let raster = shape.index(c, y, x) as u64;
        let list = &mut buckets[l][t];
        if list.last().is_some_and(|prev: &Spike| prev.raster >= raster) {
            return Err(PerfError::TraceMismatch(format!("entry {i}: not in raster order")));
        }
        list.push(Spike {
            raster,
            updates: e.updates as u64,
        });
    }
    Ok(buckets)
}

/// Replays a spike trace through the layer pipeline.
///
/// Every layer is a server with an unbounded FIFO. A spike costs
/// `ceil((updates * cycles_per_update + overhead) / npus)` cycles; the
/// timestep barrier costs `ceil(neurons * cycles_per_fire / npus)` and starts
/// once the stage has drained its queue and the upstream barrier of the same
/// timestep has finished. During a barrier, neuron `k` in raster order
/// leaves at `start + ceil((k + 1) * cycles_per_fire / npus)`, which is when
/// its spike reaches the next stage.
pub fn simulate_latency(trace: &SpikeTrace, spec: &NetworkSpec, hw: &HardwareConfig) -> Result<LatencyReport, PerfError> {
    let npus = hw.npus_for(spec)?;
    let geoms = spec.geometries().map_err(|e| PerfError::TraceMismatch(e.to_string()))?;
    let buckets = bucket(trace, &geoms)?;
    let layers = geoms.len();
    let timesteps = trace.timesteps;
    let period = (hw.input_period_s * hw.clock_hz).round() as u64;
    let cpf = hw.cycles_per_fire;
    let extract = spec.extraction_layers();

    let mut free = vec![0u64; layers];
    let mut busy = vec![0u64; layers];
    let mut wait = vec![0u64; layers];
    let mut spikes = vec![0u64; layers];
    let mut updates = vec![0u64; layers];
    let mut readout_free = 0u64;
    let mut readout_busy = 0u64;
    let mut per_timestep = Vec::with_capacity(timesteps);
    let mut end = 0u64;

    for t in 0..timesteps {
        let ready = t as u64 * period;
        // (barrier start, barrier end) of the previous layer at this timestep
        let mut upstream: Option<(u64, u64)> = None;
        let mut done = ready;
        let mut readout: Vec<u64> = Vec::new();
        for l in 0..layers {
            let n = npus[l];
            let arrival = |raster: u64| match upstream {
                None => ready,
                Some((start, _)) => start + div_ceil((raster + 1) * cpf, npus[l - 1]),
            };
            for s in &buckets[l][t] {
                let at = arrival(s.raster);
                let start = free[l].max(at);
                let cost = div_ceil(s.updates * hw.cycles_per_update + hw.cycles_per_spike_overhead, n);
                wait[l] += start - at;
                free[l] = start + cost;
                busy[l] += cost;
                spikes[l] += 1;
                updates[l] += s.updates;
            }
            let gate = upstream.map_or(ready, |(_, e)| e);
            let start = free[l].max(gate);
            let cost = div_ceil(geoms[l].output.len() as u64 * cpf, n);
            free[l] = start + cost;
            busy[l] += cost;
            upstream = Some((start, start + cost));
            done = start + cost;
            if hw.readout_cycles_per_spike > 0 && extract.contains(&l) {
                let out = &buckets[l + 1][t];
                readout.extend(out.iter().map(|s| start + div_ceil((s.raster + 1) * cpf, n)));
            }
        }
        readout.sort_unstable();
        for at in readout {
            let start = readout_free.max(at);
            readout_free = start + hw.readout_cycles_per_spike;
            readout_busy += hw.readout_cycles_per_spike;
            done = done.max(readout_free);
        }
        per_timestep.push(hw.seconds(done - ready));
        end = end.max(done);
    }

    let bottleneck = busy
        .iter()
        .enumerate()
        .fold(0, |best, (i, &b)| if b > busy[best] { i } else { best });
    Ok(LatencyReport {
        clock_hz: hw.clock_hz,
        layers: (0..layers)
            .map(|l| LayerTiming {
                npus: npus[l],
                spikes: spikes[l],
                updates: updates[l],
                busy_cycles: busy[l],
                wait_cycles: wait[l],
                busy_s: hw.seconds(busy[l]),
                wait_s: hw.seconds(wait[l]),
            })
            .collect(),
        end_to_end_cycles: end,
        end_to_end_s: hw.seconds(end),
        per_timestep_s: per_timestep,
        bottleneck,
        readout_cycles: readout_busy,
    })
}

/// Finds the per-spike overhead whose simulated latency is closest to
/// `target_s`, all other parameters unchanged. Latency is nondecreasing in
/// the overhead, so a bisection suffices.
pub fn fit_spike_overhead(
    trace: &SpikeTrace,
    spec: &NetworkSpec,
    hw: &HardwareConfig,
    target_s: f64,
) -> Result<(HardwareConfig, LatencyReport), PerfError> {
    let run = |overhead: u64| {
        let cfg = HardwareConfig {
            cycles_per_spike_overhead: overhead,
            ..hw.clone()
        };
        simulate_latency(trace, spec, &cfg).map(|r| (cfg, r))
    };
    let (mut lo, mut hi) = (0u64, 1u64);
    let base = run(0)?;
    if base.1.end_to_end_s >= target_s || trace.entries.is_empty() {
        return Ok(base);
    }
    while run(hi)?.1.end_to_end_s < target_s {
        lo = hi;
        hi *= 2;
        if hi > 1 << 40 {
            return run(lo);
        }
    }
    // invariant: latency(lo) < target <= latency(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if run(mid)?.1.end_to_end_s < target_s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (run(lo)?, run(hi)?);
    if (target_s - a.1.end_to_end_s) <= (b.1.end_to_end_s - target_s) {
        Ok(a)
    } else {
        Ok(b)
    }
}
