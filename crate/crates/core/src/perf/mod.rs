//! Cycle-level latency model of the layer pipeline and the energy metrics
//! derived from it.
//!
//! Cycle costs are free parameters. [`fit_spike_overhead`] searches the
//! per-spike overhead that makes a trace hit a target latency, which is how
//! the defaults can be calibrated against a measured run.

mod energy;
mod latency;

pub use energy::{compare_networks, energy_report, ratio_csv, ratio_table, EnergyReport, NetworkSummary, RatioRow};
pub use latency::{fit_spike_overhead, simulate_latency, LatencyReport, LayerTiming};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::NetworkSpec;

#[derive(Debug, Error, PartialEq)]
pub enum PerfError {
    #[error("invalid hardware config: {0}")]
    Config(String),
    #[error("trace does not match the network: {0}")]
    TraceMismatch(String),
    #[error("{0} must be positive")]
    ZeroDenominator(&'static str),
    #[error("hardware config: {0}")]
    Parse(String),
}

/// Timing and power parameters of the accelerator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareConfig {
    pub clock_hz: f64,
    /// Cycles per membrane update.
    pub cycles_per_update: u64,
    /// Fixed cycles per received spike (address decode, queue pop).
    pub cycles_per_spike_overhead: u64,
    /// Cycles per neuron at the timestep barrier.
    pub cycles_per_fire: u64,
    /// NPUs per layer; empty means "take `npu_count` from the network".
    pub npu_per_layer: Vec<u64>,
    pub dynamic_power_w: f64,
    /// Seconds between consecutive input frames; 0 means all frames are ready at once.
    pub input_period_s: f64,
    /// Cycles to ship one extracted spike off chip; 0 disables readout.
    pub readout_cycles_per_spike: u64,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        HardwareConfig {
            clock_hz: 100e6,
            cycles_per_update: 1,
            cycles_per_spike_overhead: 0,
            cycles_per_fire: 1,
            npu_per_layer: Vec::new(),
            dynamic_power_w: 0.7,
            input_period_s: 0.0,
            readout_cycles_per_spike: 0,
        }
    }
}

impl HardwareConfig {
    pub fn from_json(text: &str) -> Result<Self, PerfError> {
        let hw: HardwareConfig = serde_json::from_str(text).map_err(|e| PerfError::Parse(e.to_string()))?;
        hw.check()?;
        Ok(hw)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }

    pub fn check(&self) -> Result<(), PerfError> {
        if !(self.clock_hz > 0.0) || !self.clock_hz.is_finite() {
            return Err(PerfError::Config(format!("clock_hz {} must be positive", self.clock_hz)));
        }
        if self.cycles_per_update == 0 {
            return Err(PerfError::Config("cycles_per_update must be positive".into()));
        }
        if self.npu_per_layer.contains(&0) {
            return Err(PerfError::Config("npu_per_layer entries must be positive".into()));
        }
        if !(self.dynamic_power_w >= 0.0) || !self.dynamic_power_w.is_finite() {
            return Err(PerfError::Config("dynamic_power_w must be nonnegative".into()));
        }
        if !(self.input_period_s >= 0.0) || !self.input_period_s.is_finite() {
            return Err(PerfError::Config("input_period_s must be nonnegative".into()));
        }
        Ok(())
    }

    /// Checks the config and resolves the NPU count of every layer of `spec`.
    pub fn npus_for(&self, spec: &NetworkSpec) -> Result<Vec<u64>, PerfError> {
        self.check()?;
        if self.npu_per_layer.is_empty() {
            return Ok(spec.layers.iter().map(|l| l.npu_count.max(1) as u64).collect());
        }
        if self.npu_per_layer.len() != spec.layers.len() {
            return Err(PerfError::Config(format!(
                "npu_per_layer has {} entries for {} layers",
                self.npu_per_layer.len(),
                spec.layers.len()
            )));
        }
        Ok(self.npu_per_layer.clone())
    }

    pub fn seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / self.clock_hz
    }
}
