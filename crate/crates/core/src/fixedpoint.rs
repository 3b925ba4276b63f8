//! Qm,n fixed-point scalars and tensors.
//!
//! A [`FixedFormat`] with `integer_bits = m` (sign included) and
//! `fraction_bits = n` stores a real value `r` as the two's complement
//! integer `raw = floor(r * 2^n)`, saturated to `m + n` bits. All arithmetic
//! saturates instead of wrapping, and every right shift is arithmetic
//! (rounds toward negative infinity).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatError {
    #[error("fixed-point width must be between 2 and 64 bits, got q{0}.{1}")]
    Width(u32, u32),
    #[error("fixed-point format needs at least one integer (sign) bit")]
    NoSignBit,
}

/// Qm,n format descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FixedFormat {
    integer_bits: u8,
    fraction_bits: u8,
}

impl FixedFormat {
    /// 16-bit Q8,8, the deployment format of the accelerator.
    pub const Q8_8: FixedFormat = FixedFormat {
        integer_bits: 8,
        fraction_bits: 8,
    };

    pub fn new(integer_bits: u32, fraction_bits: u32) -> Result<Self, FormatError> {
        let total = integer_bits + fraction_bits;
        if !(2..=64).contains(&total) {
            return Err(FormatError::Width(integer_bits, fraction_bits));
        }
        if integer_bits == 0 {
            return Err(FormatError::NoSignBit);
        }
        Ok(FixedFormat {
            integer_bits: integer_bits as u8,
            fraction_bits: fraction_bits as u8,
        })
    }

    pub fn integer_bits(self) -> u32 {
        self.integer_bits as u32
    }

    pub fn fraction_bits(self) -> u32 {
        self.fraction_bits as u32
    }

    pub fn total_bits(self) -> u32 {
        self.integer_bits() + self.fraction_bits()
    }

    pub fn min_raw(self) -> i64 {
        -(1i128 << (self.total_bits() - 1)) as i64
    }

    pub fn max_raw(self) -> i64 {
        ((1i128 << (self.total_bits() - 1)) - 1) as i64
    }

    /// Smallest representable real value.
    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.resolution()
    }

    /// Largest representable real value, `2^(m-1) - 2^(-n)`.
    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.resolution()
    }

    /// Weight of one raw unit, `2^(-n)`.
    pub fn resolution(self) -> f64 {
        (-(self.fraction_bits() as f64)).exp2()
    }

    /// Clamps a wide intermediate into range; the flag reports saturation.
    pub fn clamp_wide(self, wide: i128) -> (i64, bool) {
        let (lo, hi) = (self.min_raw() as i128, self.max_raw() as i128);
        if wide > hi {
            (hi as i64, true)
        } else if wide < lo {
            (lo as i64, true)
        } else {
            (wide as i64, false)
        }
    }

    pub fn contains_raw(self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }
}

impl Default for FixedFormat {
    fn default() -> Self {
        FixedFormat::Q8_8
    }
}

impl fmt::Display for FixedFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q{},{}", self.integer_bits, self.fraction_bits)
    }
}

/// Counts saturation events across a computation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaturationCounter {
    pub count: u64,
}

impl SaturationCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Clamps `wide` into `fmt`, counting one event if it saturated.
    #[inline]
    pub fn clamp(&mut self, fmt: FixedFormat, wide: i128) -> i64 {
        let (raw, saturated) = fmt.clamp_wide(wide);
        self.count += saturated as u64;
        raw
    }
}

/// A single fixed-point number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedValue {
    raw: i64,
    format: FixedFormat,
}

impl FixedValue {
    /// Builds a value from its raw integer, saturating if it does not fit.
    pub fn from_raw(raw: i64, format: FixedFormat) -> Self {
        let (raw, _) = format.clamp_wide(raw as i128);
        FixedValue { raw, format }
    }

    pub fn zero(format: FixedFormat) -> Self {
        FixedValue { raw: 0, format }
    }

    pub fn raw(self) -> i64 {
        self.raw
    }

    pub fn format(self) -> FixedFormat {
        self.format
    }

    pub fn to_f64(self) -> f64 {
        dequantize(self)
    }
}

impl fmt::Display for FixedValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} raw {})", self.to_f64(), self.format, self.raw)
    }
}

/// `floor(x * 2^n)` clamped to the format. NaN maps to zero and counts as saturation.
pub fn quantize_value_counted(x: f64, fmt: FixedFormat, sat: &mut SaturationCounter) -> FixedValue {
    let scaled = (x * (fmt.fraction_bits() as f64).exp2()).floor();
    let raw = if scaled.is_nan() {
        sat.count += 1;
        0
    } else if scaled < fmt.min_raw() as f64 {
        sat.count += 1;
        fmt.min_raw()
    } else if scaled >= ((fmt.total_bits() - 1) as f64).exp2() {
        // 2^(bits-1) is exact in f64 while max_raw may not be.
        sat.count += 1;
        fmt.max_raw()
    } else {
        scaled as i64
    };
    FixedValue { raw, format: fmt }
}

pub fn quantize_value(x: f64, fmt: FixedFormat) -> FixedValue {
    quantize_value_counted(x, fmt, &mut SaturationCounter::new())
}

/// Exact for formats up to 53 significant bits.
pub fn dequantize(v: FixedValue) -> f64 {
    v.raw as f64 * v.format.resolution()
}

fn check_same(a: FixedValue, b: FixedValue) {
    assert_eq!(
        a.format, b.format,
        "fixed-point operands must share a format ({} vs {})",
        a.format, b.format
    );
}

pub fn sat_add(a: FixedValue, b: FixedValue) -> FixedValue {
    sat_add_counted(a, b, &mut SaturationCounter::new())
}

pub fn sat_add_counted(a: FixedValue, b: FixedValue, sat: &mut SaturationCounter) -> FixedValue {
    check_same(a, b);
    let raw = sat.clamp(a.format, a.raw as i128 + b.raw as i128);
    FixedValue { raw, format: a.format }
}

pub fn sat_sub(a: FixedValue, b: FixedValue) -> FixedValue {
    check_same(a, b);
    let (raw, _) = a.format.clamp_wide(a.raw as i128 - b.raw as i128);
    FixedValue { raw, format: a.format }
}

pub fn sat_mul(a: FixedValue, b: FixedValue) -> FixedValue {
    sat_mul_counted(a, b, &mut SaturationCounter::new())
}

/// Double-width product, arithmetic right shift by `n`, then clamp.
pub fn sat_mul_counted(a: FixedValue, b: FixedValue, sat: &mut SaturationCounter) -> FixedValue {
    check_same(a, b);
    let raw = sat.clamp(a.format, mul_shift(a.raw, b.raw, a.format.fraction_bits()));
    FixedValue { raw, format: a.format }
}

#[inline]
pub(crate) fn mul_shift(a: i64, b: i64, shift: u32) -> i128 {
    (a as i128 * b as i128) >> shift
}

/// Re-expresses a raw value with `from_frac` fraction bits in `to`, flooring
/// when bits are dropped and saturating at the destination range.
#[inline]
pub fn rescale_raw(wide: i128, from_frac: u32, to: FixedFormat, sat: &mut SaturationCounter) -> i64 {
    let to_frac = to.fraction_bits();
    let shifted = if to_frac >= from_frac {
        let shift = to_frac - from_frac;
        wide.checked_mul(1i128 << shift).unwrap_or(if wide < 0 { i128::MIN } else { i128::MAX })
    } else {
        wide >> (from_frac - to_frac)
    };
    sat.clamp(to, shifted)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("tensor data length {len} does not match shape {shape:?}")]
    ShapeMismatch { shape: Vec<usize>, len: usize },
    #[error("raw value {raw} does not fit in {format}")]
    OutOfRange { raw: i64, format: FixedFormat },
}

/// Dense row-major tensor of raw fixed-point values sharing one format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedTensor {
    shape: Vec<usize>,
    data: Vec<i64>,
    format: FixedFormat,
}

impl FixedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<i64>, format: FixedFormat) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::ShapeMismatch { shape, len: data.len() });
        }
        if let Some(&raw) = data.iter().find(|&&r| !format.contains_raw(r)) {
            return Err(TensorError::OutOfRange { raw, format });
        }
        Ok(FixedTensor { shape, data, format })
    }

    pub fn zeros(shape: Vec<usize>, format: FixedFormat) -> Self {
        let len = shape.iter().product();
        FixedTensor {
            shape,
            data: vec![0; len],
            format,
        }
    }

    pub fn quantize(shape: Vec<usize>, values: &[f64], format: FixedFormat) -> Result<Self, TensorError> {
        let mut sat = SaturationCounter::new();
        Self::quantize_counted(shape, values, format, &mut sat)
    }

    pub fn quantize_counted(
        shape: Vec<usize>,
        values: &[f64],
        format: FixedFormat,
        sat: &mut SaturationCounter,
    ) -> Result<Self, TensorError> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(TensorError::ShapeMismatch { shape, len: values.len() });
        }
        let data = values
            .iter()
            .map(|&x| quantize_value_counted(x, format, sat).raw())
            .collect();
        Ok(FixedTensor { shape, data, format })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn format(&self) -> FixedFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, index: usize) -> FixedValue {
        FixedValue {
            raw: self.data[index],
            format: self.format,
        }
    }

    pub fn dequantize(&self) -> Vec<f64> {
        let res = self.format.resolution();
        self.data.iter().map(|&r| r as f64 * res).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(raw: i64) -> FixedValue {
        FixedValue::from_raw(raw, FixedFormat::Q8_8)
    }

    #[test]
    fn format_bounds() {
        assert!(FixedFormat::new(1, 0).is_err());
        assert!(FixedFormat::new(40, 25).is_err());
        assert!(FixedFormat::new(0, 8).is_err());
        let f = FixedFormat::new(32, 32).unwrap();
        assert_eq!(f.min_raw(), i64::MIN);
        assert_eq!(f.max_raw(), i64::MAX);
        let q88 = FixedFormat::Q8_8;
        assert_eq!((q88.min_raw(), q88.max_raw()), (-32768, 32767));
        assert_eq!(q88.min_value(), -128.0);
        assert_eq!(q88.max_value(), 128.0 - 1.0 / 256.0);
    }

    #[test]
    fn quantize_points() {
        let f = FixedFormat::Q8_8;
        assert_eq!(quantize_value(0.5, f).raw(), 128);
        assert_eq!(quantize_value(1.0, f).raw(), 256);
        // floor(-76.8)
        assert_eq!(quantize_value(-0.3, f).raw(), -77);
        assert_eq!(quantize_value(200.0, f).raw(), 32767);
        assert_eq!(quantize_value(-200.0, f).raw(), -32768);
    }

    #[test]
    fn quantize_counts_saturation() {
        let mut sat = SaturationCounter::new();
        quantize_value_counted(200.0, FixedFormat::Q8_8, &mut sat);
        quantize_value_counted(1.0, FixedFormat::Q8_8, &mut sat);
        quantize_value_counted(f64::NAN, FixedFormat::Q8_8, &mut sat);
        assert_eq!(sat.count, 2);
    }

    #[test]
    fn quantize_wide_format_saturates_exactly() {
        let f = FixedFormat::new(32, 32).unwrap();
        assert_eq!(quantize_value(1e30, f).raw(), i64::MAX);
        assert_eq!(quantize_value(-1e30, f).raw(), i64::MIN);
        assert_eq!(quantize_value(-0.5, f).raw(), -(1i64 << 31));
    }

    #[test]
    fn dequantize_points() {
        assert_eq!(dequantize(q(128)), 0.5);
        assert_eq!(dequantize(q(0)), 0.0);
        assert_eq!(dequantize(q(-77)), -0.30078125);
    }

    #[test]
    fn add_points() {
        assert_eq!(sat_add(q(100), q(28)).raw(), 128);
        assert_eq!(sat_add(q(32767), q(1)).raw(), 32767);
        assert_eq!(sat_add(q(-32768), q(-1)).raw(), -32768);
        let mut sat = SaturationCounter::new();
        sat_add_counted(q(32767), q(1), &mut sat);
        assert_eq!(sat.count, 1);
    }

    #[test]
    fn mul_points() {
        assert_eq!(sat_mul(q(256), q(256)).raw(), 256);
        assert_eq!(sat_mul(q(128), q(128)).raw(), 64);
        assert_eq!(sat_mul(q(-128), q(128)).raw(), -64);
        // -1/256 * 0.5 floors to -1/256, not 0
        assert_eq!(sat_mul(q(-1), q(128)).raw(), -1);
        assert_eq!(sat_mul(q(32767), q(32767)).raw(), 32767);
    }

    #[test]
    #[should_panic(expected = "share a format")]
    fn mixed_formats_panic() {
        let other = FixedFormat::new(4, 12).unwrap();
        sat_add(q(1), FixedValue::from_raw(1, other));
    }

    #[test]
    fn rescale_floors_and_saturates() {
        let mut sat = SaturationCounter::new();
        let q412 = FixedFormat::new(4, 12).unwrap();
        // -1/4096 expressed in 8 fraction bits floors to -1/256
        assert_eq!(rescale_raw(-1, 12, FixedFormat::Q8_8, &mut sat), -1);
        assert_eq!(rescale_raw(256, 8, q412, &mut sat), 4096);
        assert_eq!(sat.count, 0);
        assert_eq!(rescale_raw(256 * 100, 8, q412, &mut sat), q412.max_raw());
        assert_eq!(sat.count, 1);
    }

    #[test]
    fn tensor_invariants() {
        assert!(FixedTensor::new(vec![2, 2], vec![0; 3], FixedFormat::Q8_8).is_err());
        assert!(FixedTensor::new(vec![1], vec![40000], FixedFormat::Q8_8).is_err());
        let t = FixedTensor::quantize(vec![3], &[0.5, -0.3, 300.0], FixedFormat::Q8_8).unwrap();
        assert_eq!(t.data(), &[128, -77, 32767]);
        assert_eq!(t.get(1).raw(), -77);
        assert_eq!(t.dequantize()[0], 0.5);
    }
}
