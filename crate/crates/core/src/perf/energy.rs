use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{HardwareConfig, PerfError};
use crate::model::ModelStats;

/// Energy metrics of one inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// `power * latency`
    pub energy_per_output_j: f64,
    pub energy_per_spike_j: f64,
    pub energy_per_synapse_j: f64,
    /// Per synapse and per timestep.
    pub energy_norm_j: f64,
    /// `total_spikes * kernels`
    pub kernel_computation_index: f64,
}

impl EnergyReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "energy/output   {:.6e} J", self.energy_per_output_j);
        let _ = writeln!(s, "energy/spike    {:.6e} J", self.energy_per_spike_j);
        let _ = writeln!(s, "energy/synapse  {:.6e} J", self.energy_per_synapse_j);
        let _ = writeln!(s, "energy norm     {:.6e} J", self.energy_norm_j);
        let _ = writeln!(s, "kernel index    {:.0}", self.kernel_computation_index);
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "energy_per_output_j,energy_per_spike_j,energy_per_synapse_j,energy_norm_j,kernel_computation_index\n{:e},{:e},{:e},{:e},{}\n",
            self.energy_per_output_j,
            self.energy_per_spike_j,
            self.energy_per_synapse_j,
            self.energy_norm_j,
            self.kernel_computation_index
        )
    }
}

fn energy(
    latency_s: f64,
    power_w: f64,
    synapses: u64,
    kernels: u64,
    total_spikes: u64,
    timesteps: usize,
) -> Result<EnergyReport, PerfError> {
    if !(latency_s > 0.0) {
        return Err(PerfError::ZeroDenominator("latency"));
    }
    if !(power_w > 0.0) {
        return Err(PerfError::ZeroDenominator("dynamic power"));
    }
    if total_spikes == 0 {
        return Err(PerfError::ZeroDenominator("total spikes"));
    }
    if synapses == 0 {
        return Err(PerfError::ZeroDenominator("synapse count"));
    }
    if timesteps == 0 {
        return Err(PerfError::ZeroDenominator("timesteps"));
    }
    let e = power_w * latency_s;
    let per_synapse = e / synapses as f64;
    Ok(EnergyReport {
        energy_per_output_j: e,
        energy_per_spike_j: e / total_spikes as f64,
        energy_per_synapse_j: per_synapse,
        energy_norm_j: per_synapse / timesteps as f64,
        kernel_computation_index: total_spikes as f64 * kernels as f64,
    })
}

pub fn energy_report(
    latency_s: f64,
    hw: &HardwareConfig,
    stats: &ModelStats,
    total_spikes: u64,
    timesteps: usize,
) -> Result<EnergyReport, PerfError> {
    energy(
        latency_s,
        hw.dynamic_power_w,
        stats.synapses as u64,
        stats.kernels as u64,
        total_spikes,
        timesteps,
    )
}

/// Headline figures of one network run, as compared across networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub name: String,
    pub inputs: u64,
    pub timesteps: usize,
    pub activity_percent: f64,
    pub synapses: u64,
    pub total_spikes: u64,
    pub kernels: u64,
    pub latency_s: f64,
    pub power_w: f64,
}

impl NetworkSummary {
    /// Builds a summary with activity computed from the model's neuron count.
    pub fn from_run(
        name: &str,
        stats: &ModelStats,
        total_spikes: u64,
        timesteps: usize,
        latency_s: f64,
        power_w: f64,
    ) -> Self {
        NetworkSummary {
            name: name.to_string(),
            inputs: stats.inputs as u64,
            timesteps,
            activity_percent: stats.activity_percent(total_spikes, timesteps),
            synapses: stats.synapses as u64,
            total_spikes,
            kernels: stats.kernels as u64,
            latency_s,
            power_w,
        }
    }

    pub fn energy(&self) -> Result<EnergyReport, PerfError> {
        energy(
            self.latency_s,
            self.power_w,
            self.synapses,
            self.kernels,
            self.total_spikes,
            self.timesteps,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `a / b`
    pub ratio: f64,
}

impl RatioRow {
    fn new(metric: &str, a: f64, b: f64) -> Self {
        RatioRow {
            metric: metric.to_string(),
            a,
            b,
            ratio: a / b,
        }
    }
}

/// Side-by-side ratios of two networks, `a` over `b`.
pub fn compare_networks(a: &NetworkSummary, b: &NetworkSummary) -> Result<Vec<RatioRow>, PerfError> {
    let (ea, eb) = (a.energy()?, b.energy()?);
    Ok(vec![
        RatioRow::new("inputs", a.inputs as f64, b.inputs as f64),
        RatioRow::new("timesteps", a.timesteps as f64, b.timesteps as f64),
        RatioRow::new("activity_percent", a.activity_percent, b.activity_percent),
        RatioRow::new("synapses", a.synapses as f64, b.synapses as f64),
        RatioRow::new("spikes", a.total_spikes as f64, b.total_spikes as f64),
        RatioRow::new("kernels", a.kernels as f64, b.kernels as f64),
        RatioRow::new("latency_s", a.latency_s, b.latency_s),
        RatioRow::new("power_w", a.power_w, b.power_w),
        RatioRow::new("energy_j", ea.energy_per_output_j, eb.energy_per_output_j),
        RatioRow::new("energy_per_spike_j", ea.energy_per_spike_j, eb.energy_per_spike_j),
        RatioRow::new("energy_norm_j", ea.energy_norm_j, eb.energy_norm_j),
        RatioRow::new(
            "kernel_computation_index",
            ea.kernel_computation_index,
            eb.kernel_computation_index,
        ),
    ])
}

pub fn ratio_table(a: &NetworkSummary, b: &NetworkSummary, rows: &[RatioRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<26} {:>14} {:>14} {:>10}", "metric", a.name, b.name, "ratio");
    for r in rows {
        let _ = writeln!(s, "{:<26} {:>14.6e} {:>14.6e} {:>10.2}", r.metric, r.a, r.b, r.ratio);
    }
    s
}

pub fn ratio_csv(rows: &[RatioRow]) -> String {
    let mut s = String::from("metric,a,b,ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e},{:e},{}", r.metric, r.a, r.b, r.ratio);
    }
    s
}
