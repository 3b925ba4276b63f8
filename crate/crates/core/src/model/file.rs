//! Binary model container.
//!
//! ```text
//! "SNNW" | version: u16 | layers: u16 | header_len: u32 | header: utf-8 config text
//! per layer:
//!   flags: u8 (1 = weight, 2 = bias, 4 = batch norm)
//!   [tensor weight] [tensor bias]
//!   [batch norm: channels u32, epsilon f64, gamma, beta, mean, variance as f64 x channels]
//! tensor:
//!   dtype: u8 (0 = f32, 1 = f64, 2 = fixed) [fixed: integer_bits u8, fraction_bits u8]
//!   ndims: u8, dims: u32 x ndims, payload
//! ```
//!
//! All integers and floats are little-endian. Fixed payloads use the
//! smallest of i8/i16/i32/i64 that holds the format. Real tensors are
//! written as f64 so that saving is lossless.

use super::{config, BatchNormParams, LayerWeights, ModelError, NetworkSpec, RealTensor, Tensor};
use crate::fixedpoint::{FixedFormat, FixedTensor};

pub const MODEL_MAGIC: &[u8; 4] = b"SNNW";
pub const FORMAT_VERSION: u16 = 1;

const HAS_WEIGHT: u8 = 1;
const HAS_BIAS: u8 = 2;
const HAS_BN: u8 = 4;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;
const DTYPE_FIXED: u8 = 2;

fn raw_width(fmt: FixedFormat) -> usize {
    match fmt.total_bits() {
        0..=8 => 1,
        9..=16 => 2,
        17..=32 => 4,
        _ => 8,
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    let dims = t.shape();
    match t {
        Tensor::Real(_) => out.push(DTYPE_F64),
        Tensor::Fixed(f) => {
            out.push(DTYPE_FIXED);
            out.push(f.format().integer_bits() as u8);
            out.push(f.format().fraction_bits() as u8);
        }
    }
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match t {
        Tensor::Real(r) => r.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Tensor::Fixed(f) => {
            let width = raw_width(f.format());
            for &raw in f.data() {
                out.extend_from_slice(&raw.to_le_bytes()[..width]);
            }
        }
    }
}

pub fn save_model(spec: &NetworkSpec) -> Vec<u8> {
    let header = config::to_config_text(spec);
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.layers.len() as u16).to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let empty = LayerWeights::default();
    for (i, layer) in spec.layers.iter().enumerate() {
        let w = spec.weights.get(i).unwrap_or(&empty);
        let mut flags = 0;
        if w.weight.is_some() {
            flags |= HAS_WEIGHT;
        }
        if w.bias.is_some() {
            flags |= HAS_BIAS;
        }
        if layer.batchnorm.is_some() {
            flags |= HAS_BN;
        }
        out.push(flags);
        if let Some(t) = &w.weight {
            put_tensor(&mut out, t);
        }
        if let Some(t) = &w.bias {
            put_tensor(&mut out, t);
        }
        if let Some(bn) = &layer.batchnorm {
            out.extend_from_slice(&(bn.channels() as u32).to_le_bytes());
            out.extend_from_slice(&bn.epsilon.to_le_bytes());
            for v in [&bn.gamma, &bn.beta, &bn.mean, &bn.variance] {
                v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.buf.len() < n {
            return Err(ModelError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        let bytes = self.take(n.checked_mul(8).ok_or(ModelError::Truncated)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn tensor(&mut self) -> Result<Tensor, ModelError> {
        let dtype = self.u8()?;
        let fixed = if dtype == DTYPE_FIXED {
            let m = self.u8()? as u32;
            let n = self.u8()? as u32;
            Some(FixedFormat::new(m, n)?)
        } else {
            None
        };
        let ndims = self.u8()? as usize;
        let shape = (0..ndims)
            .map(|_| self.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| ModelError::Corrupt("tensor size overflows".into()))?;
        match (dtype, fixed) {
            (DTYPE_F32, _) => {
                let bytes = self.take(len.checked_mul(4).ok_or(ModelError::Truncated)?)?;
                let data = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    .collect();
                Ok(Tensor::Real(RealTensor { shape, data }))
            }
            (DTYPE_F64, _) => {
                let data = self.f64s(len)?;
                Ok(Tensor::Real(RealTensor { shape, data }))
            }
            (DTYPE_FIXED, Some(fmt)) => {
                let width = raw_width(fmt);
                let bytes = self.take(len.checked_mul(width).ok_or(ModelError::Truncated)?)?;
                let data = bytes
                    .chunks_exact(width)
                    .map(|c| {
                        let mut wide = [0u8; 8];
                        wide[..width].copy_from_slice(c);
                        // sign-extend from the stored width
                        let shift = 64 - 8 * width as u32;
                        (i64::from_le_bytes(wide) << shift) >> shift
                    })
                    .collect();
                Ok(Tensor::Fixed(FixedTensor::new(shape, data, fmt)?))
            }
            _ => Err(ModelError::Corrupt(format!("unknown tensor dtype {dtype}"))),
        }
    }
}

pub fn load_model(bytes: &[u8]) -> Result<NetworkSpec, ModelError> {
    let mut r = Reader { buf: bytes };
    if bytes.len() < 4 {
        return Err(if MODEL_MAGIC.starts_with(bytes) { ModelError::Truncated } else { ModelError::BadMagic });
    }
    if r.take(4)? != MODEL_MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let layer_count = r.u16()? as usize;
    let header_len = r.u32()? as usize;
    let header = std::str::from_utf8(r.take(header_len)?)
        .map_err(|e| ModelError::Corrupt(format!("header is not utf-8: {e}")))?;
    let mut spec = config::parse_model_config(header)?;
    if spec.layers.len() != layer_count {
        return Err(ModelError::Corrupt(format!(
            "header declares {} layers, container {layer_count}",
            spec.layers.len()
        )));
    }
    for i in 0..layer_count {
        let flags = r.u8()?;
        if flags & !(HAS_WEIGHT | HAS_BIAS | HAS_BN) != 0 {
            return Err(ModelError::Corrupt(format!("layer {i}: unknown flags {flags:#x}")));
        }
        let weight = if flags & HAS_WEIGHT != 0 { Some(r.tensor()?) } else { None };
        let bias = if flags & HAS_BIAS != 0 { Some(r.tensor()?) } else { None };
        spec.layers[i].has_bias = bias.is_some();
        spec.weights[i] = LayerWeights { weight, bias };
        if flags & HAS_BN != 0 {
            let channels = r.u32()? as usize;
            let epsilon = r.f64()?;
            let gamma = r.f64s(channels)?;
            let beta = r.f64s(channels)?;
            let mean = r.f64s(channels)?;
            let variance = r.f64s(channels)?;
            spec.layers[i].batchnorm = Some(BatchNormParams {
                gamma,
                beta,
                mean,
                variance,
                epsilon,
            });
        }
    }
    if !r.buf.is_empty() {
        return Err(ModelError::Corrupt(format!("{} trailing bytes", r.buf.len())));
    }
    spec.validate()?;
    Ok(spec)
}
