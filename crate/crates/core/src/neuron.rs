//! IF and LIF membrane dynamics with hard reset to zero.
//!
//! One call to a step function is one timestep: charge, compare against the
//! threshold (`>=`), then reset to 0 on a spike. PLIF neurons are LIF with
//! their learned leak frozen.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fixedpoint::{mul_shift, quantize_value, FixedFormat, FixedValue, SaturationCounter};

/// Membrane potential after a spike.
pub const V_RESET: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NeuronKind {
    If,
    Lif,
}

/// How the LIF leak is applied during the charge phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum LeakForm {
    /// `h = v + (x - v) / tau`
    #[default]
    DecayInput,
    /// `h = v / tau + x`
    ShiftLeak,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NeuronError {
    #[error("LIF time constant must be > 1, got {0}")]
    Tau(f64),
    #[error("threshold must be > 0, got {0}")]
    Threshold(f64),
    #[error("leak reciprocal 1/{tau} underflows to zero in {format}")]
    LeakUnderflow { tau: f64, format: FixedFormat },
    #[error("threshold {vth} is not representable as a positive value in {format}")]
    ThresholdUnderflow { vth: f64, format: FixedFormat },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub kind: NeuronKind,
    /// Leak time constant; ignored by IF.
    pub tau: f64,
    pub v_threshold: f64,
    pub leak: LeakForm,
}

impl NeuronParams {
    pub fn integrate_and_fire(v_threshold: f64) -> Self {
        NeuronParams {
            kind: NeuronKind::If,
            tau: 1.0,
            v_threshold,
            leak: LeakForm::DecayInput,
        }
    }

    pub fn leaky(tau: f64, v_threshold: f64, leak: LeakForm) -> Self {
        NeuronParams {
            kind: NeuronKind::Lif,
            tau,
            v_threshold,
            leak,
        }
    }

    pub fn validate(&self) -> Result<(), NeuronError> {
        if !(self.v_threshold > 0.0) {
            return Err(NeuronError::Threshold(self.v_threshold));
        }
        if self.kind == NeuronKind::Lif && !(self.tau > 1.0) {
            return Err(NeuronError::Tau(self.tau));
        }
        Ok(())
    }

    /// Real-arithmetic step: returns `(fired, v')`.
    pub fn step(&self, v: f64, x: f64) -> (bool, f64) {
        let h = match (self.kind, self.leak) {
            (NeuronKind::If, _) => v + x,
            (NeuronKind::Lif, LeakForm::DecayInput) => v + (x - v) / self.tau,
            (NeuronKind::Lif, LeakForm::ShiftLeak) => v / self.tau + x,
        };
        if h >= self.v_threshold {
            (true, V_RESET)
        } else {
            (false, h)
        }
    }
}

impl Default for NeuronParams {
    fn default() -> Self {
        NeuronParams::leaky(2.0, 1.0, LeakForm::DecayInput)
    }
}

impl fmt::Display for NeuronParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NeuronKind::If => write!(f, "if vth={}", self.v_threshold),
            NeuronKind::Lif => {
                let leak = match self.leak {
                    LeakForm::DecayInput => "decay",
                    LeakForm::ShiftLeak => "shift",
                };
                write!(f, "lif tau={} vth={} leak={}", self.tau, self.v_threshold, leak)
            }
        }
    }
}

/// Neuron parameters lowered to a potential format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedNeuron {
    pub kind: NeuronKind,
    pub leak: LeakForm,
    pub threshold: FixedValue,
    /// `floor(2^n / tau)`; `None` for IF.
    pub inv_tau: Option<FixedValue>,
}

/// Quantizes the threshold and the leak reciprocal into `fmt`.
pub fn quantize_neuron(p: &NeuronParams, fmt: FixedFormat) -> Result<FixedNeuron, NeuronError> {
    p.validate()?;
    let threshold = quantize_value(p.v_threshold, fmt);
    if threshold.raw() <= 0 {
        return Err(NeuronError::ThresholdUnderflow {
            vth: p.v_threshold,
            format: fmt,
        });
    }
    let inv_tau = match p.kind {
        NeuronKind::If => None,
        NeuronKind::Lif => {
            let r = quantize_value(1.0 / p.tau, fmt);
            if r.raw() == 0 {
                return Err(NeuronError::LeakUnderflow { tau: p.tau, format: fmt });
            }
            Some(r)
        }
    };
    Ok(FixedNeuron {
        kind: p.kind,
        leak: p.leak,
        threshold,
        inv_tau,
    })
}

impl FixedNeuron {
    pub fn format(&self) -> FixedFormat {
        self.threshold.format()
    }

    /// Fixed-point step on raw potentials in [`Self::format`].
    ///
    /// Each phase (difference, leak product, sum) is floored and clamped on
    /// its own. Saturations are added to `sat`.
    #[inline]
    pub fn step_raw(&self, v: i64, x: i64, sat: &mut SaturationCounter) -> (bool, i64) {
        let fmt = self.format();
        let h = match (self.kind, self.inv_tau) {
            (NeuronKind::Lif, Some(r)) => match self.leak {
                LeakForm::DecayInput => {
                    let d = sat.clamp(fmt, x as i128 - v as i128);
                    let m = sat.clamp(fmt, mul_shift(d, r.raw(), fmt.fraction_bits()));
                    sat.clamp(fmt, v as i128 + m as i128)
                }
                LeakForm::ShiftLeak => {
                    let m = sat.clamp(fmt, mul_shift(v, r.raw(), fmt.fraction_bits()));
                    sat.clamp(fmt, m as i128 + x as i128)
                }
            },
            _ => sat.clamp(fmt, v as i128 + x as i128),
        };
        if h >= self.threshold.raw() {
            (true, 0)
        } else {
            (false, h)
        }
    }

    pub fn step(&self, v: FixedValue, x: FixedValue) -> (bool, FixedValue) {
        let fmt = self.format();
        assert_eq!(v.format(), fmt, "potential format mismatch");
        assert_eq!(x.format(), fmt, "input format mismatch");
        let (fired, raw) = self.step_raw(v.raw(), x.raw(), &mut SaturationCounter::new());
        (fired, FixedValue::from_raw(raw, fmt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::{dequantize, quantize_value};
    use proptest::prelude::*;

    fn lif2() -> NeuronParams {
        NeuronParams::leaky(2.0, 1.0, LeakForm::DecayInput)
    }

    #[test]
    fn real_step_examples() {
        let if1 = NeuronParams::integrate_and_fire(1.0);
        assert_eq!(if1.step(0.0, 0.0), (false, 0.0));
        assert_eq!(if1.step(0.6, 0.5), (true, 0.0));
        assert_eq!(lif2().step(0.0, 1.0), (false, 0.5));
        assert_eq!(lif2().step(0.5, 1.0), (false, 0.75));
        let shift = NeuronParams::leaky(2.0, 1.0, LeakForm::ShiftLeak);
        assert_eq!(shift.step(0.5, 0.5), (false, 0.75));
    }

    #[test]
    fn decay_input_converges_to_input() {
        let p = NeuronParams::leaky(2.0, 10.0, LeakForm::DecayInput);
        let mut v = 0.0;
        for _ in 0..60 {
            v = p.step(v, 1.0).1;
        }
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_boundary_fires() {
        let p = NeuronParams::integrate_and_fire(1.0);
        assert_eq!(p.step(0.25, 0.75), (true, 0.0));
        let fx = quantize_neuron(&p, FixedFormat::Q8_8).unwrap();
        let mut sat = SaturationCounter::new();
        assert_eq!(fx.step_raw(64, 192, &mut sat), (true, 0));
        assert_eq!(fx.step_raw(64, 191, &mut sat), (false, 255));
    }

    #[test]
    fn quantize_neuron_examples() {
        let fx = quantize_neuron(&lif2(), FixedFormat::Q8_8).unwrap();
        assert_eq!(fx.threshold.raw(), 256);
        assert_eq!(fx.inv_tau.unwrap().raw(), 128);
        let slow = NeuronParams::leaky((20f64).exp2(), 1.0, LeakForm::DecayInput);
        assert!(matches!(
            quantize_neuron(&slow, FixedFormat::Q8_8),
            Err(NeuronError::LeakUnderflow { .. })
        ));
        let bad = NeuronParams::leaky(1.0, 1.0, LeakForm::DecayInput);
        assert!(matches!(quantize_neuron(&bad, FixedFormat::Q8_8), Err(NeuronError::Tau(_))));
        let tiny = NeuronParams::integrate_and_fire(1e-4);
        assert!(quantize_neuron(&tiny, FixedFormat::Q8_8).is_err());
    }

    #[test]
    fn fixed_lif_matches_worked_example() {
        let fx = quantize_neuron(&lif2(), FixedFormat::Q8_8).unwrap();
        let mut sat = SaturationCounter::new();
        assert_eq!(fx.step_raw(0, 256, &mut sat), (false, 128));
        assert_eq!(fx.step_raw(128, 256, &mut sat), (false, 192));
    }

    /// Real step with an explicit floor-and-clamp after every phase.
    fn phased_oracle(p: &NeuronParams, fmt: FixedFormat, v: f64, x: f64) -> (bool, f64) {
        let q = |r: f64| dequantize(quantize_value(r, fmt));
        let vth = q(p.v_threshold);
        let h = match (p.kind, p.leak) {
            (NeuronKind::If, _) => q(v + x),
            (NeuronKind::Lif, LeakForm::DecayInput) => {
                let inv = q(1.0 / p.tau);
                let d = q(x - v);
                q(v + q(d * inv))
            }
            (NeuronKind::Lif, LeakForm::ShiftLeak) => {
                let inv = q(1.0 / p.tau);
                q(q(v * inv) + x)
            }
        };
        if h >= vth {
            (true, 0.0)
        } else {
            (false, h)
        }
    }

    fn params_strategy() -> impl Strategy<Value = NeuronParams> {
        (0..3u8, 1.05f64..16.0, 0.1f64..8.0).prop_map(|(k, tau, vth)| match k {
            0 => NeuronParams::integrate_and_fire(vth),
            1 => NeuronParams::leaky(tau, vth, LeakForm::DecayInput),
            _ => NeuronParams::leaky(tau, vth, LeakForm::ShiftLeak),
        })
    }

    proptest! {
        #[test]
        fn fixed_step_equals_phased_real_step(
            p in params_strategy(),
            v in -32768i64..=32767,
            x in -32768i64..=32767,
        ) {
            let fmt = FixedFormat::Q8_8;
            let fx = quantize_neuron(&p, fmt).unwrap();
            let (fired, raw) = fx.step_raw(v, x, &mut SaturationCounter::new());
            let (ofired, oh) = phased_oracle(&p, fmt, v as f64 / 256.0, x as f64 / 256.0);
            prop_assert_eq!(fired, ofired);
            prop_assert_eq!(raw as f64 / 256.0, oh);
        }

        #[test]
        fn hard_reset_on_fire(p in params_strategy(), v in -10.0f64..10.0, x in -10.0f64..10.0) {
            let (fired, v2) = p.step(v, x);
            if fired { prop_assert_eq!(v2, 0.0); }
            let fx = quantize_neuron(&p, FixedFormat::Q8_8).unwrap();
            let (ffired, fv) = fx.step_raw((v * 256.0) as i64, (x * 256.0) as i64, &mut SaturationCounter::new());
            if ffired { prop_assert_eq!(fv, 0); }
        }

        #[test]
        fn if_monotone_under_nonnegative_input(
            vth in 0.5f64..20.0,
            inputs in proptest::collection::vec(0.0f64..2.0, 1..40),
        ) {
            let p = NeuronParams::integrate_and_fire(vth);
            let mut v = 0.0;
            for x in inputs {
                let (fired, next) = p.step(v, x);
                if !fired { prop_assert!(next >= v); }
                v = next;
            }
        }

        #[test]
        fn lif_decays_toward_zero(tau in 1.05f64..50.0, v in -100.0f64..100.0, shift in any::<bool>()) {
            let leak = if shift { LeakForm::ShiftLeak } else { LeakForm::DecayInput };
            let p = NeuronParams::leaky(tau, 1e9, leak);
            let (_, next) = p.step(v, 0.0);
            prop_assert!(next.abs() <= v.abs());
            prop_assert!(next == 0.0 || next.signum() == v.signum());
        }
    }
}
