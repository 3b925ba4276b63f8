//! Folding an input-side batch normalization into the following convolution.
//!
//! With `s_c = gamma_c / sqrt(var_c + eps)` and `t_c = beta_c - mean_c * s_c`,
//! `conv(W, bn(x)) + b = conv(W', x) + b'` where `W'[o,c,..] = W[o,c,..] * s_c`
//! and `b'[o] = b[o] + sum_c t_c * sum_k W[o,c,k]`. The identity is exact for
//! unpadded windows; zero padding is applied after normalization, so border
//! outputs of a padded layer differ by the missing `t_c` taps.
//!
//! The conv-then-BN placement folds as `W'[o] = W[o] * s_o`,
//! `b'[o] = b[o] * s_o + t_o`; it is not needed by the reference networks.

use super::{LayerSpec, LayerWeights, ModelError, NetworkSpec, RealTensor, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct FusedConv {
    pub weight: RealTensor,
    pub bias: RealTensor,
}

fn real(t: &Tensor, layer: usize, what: &str) -> Result<RealTensor, ModelError> {
    match t {
        Tensor::Real(r) => Ok(r.clone()),
        Tensor::Fixed(_) => Err(ModelError::BatchNorm {
            layer,
            message: format!("{what} already quantized; fuse before quantizing"),
        }),
    }
}

/// Fuses `layer.batchnorm` into the layer's weights. `index` is used in errors.
pub fn fuse_batchnorm(layer: &LayerSpec, weights: &LayerWeights, index: usize) -> Result<FusedConv, ModelError> {
    let err = |message: String| ModelError::BatchNorm { layer: index, message };
    let bn = layer.batchnorm.as_ref().ok_or_else(|| err("layer has no batch norm".into()))?;
    let w = weights
        .weight
        .as_ref()
        .ok_or_else(|| err("layer has no weights".into()))
        .and_then(|t| real(t, index, "weight"))?;
    let [out_ch, in_ch, kh, kw] = w.shape[..] else {
        return Err(err(format!("expected a 4-d weight, got {:?}", w.shape)));
    };
    if bn.channels() != in_ch {
        return Err(err(format!("{} channels, weight has {in_ch} input channels", bn.channels())));
    }
    let affine = bn.affine().map_err(err)?;
    let mut bias = match &weights.bias {
        Some(b) => real(b, index, "bias")?,
        None => RealTensor::zeros(vec![out_ch]),
    };
    let taps = kh * kw;
    let mut fused = w.clone();
    for o in 0..out_ch {
        for (c, &(scale, shift)) in affine.iter().enumerate() {
            let start = (o * in_ch + c) * taps;
            let window = &mut fused.data[start..start + taps];
            let tap_sum: f64 = window.iter().sum();
            bias.data[o] += shift * tap_sum;
            window.iter_mut().for_each(|v| *v *= scale);
        }
    }
    Ok(FusedConv { weight: fused, bias })
}

/// Returns a copy of `spec` with every batch norm folded away.
pub fn fuse_network(spec: &NetworkSpec) -> Result<NetworkSpec, ModelError> {
    let mut out = spec.clone();
    for (i, (layer, weights)) in out.layers.iter_mut().zip(out.weights.iter_mut()).enumerate() {
        if layer.batchnorm.is_none() {
            continue;
        }
        let fused = fuse_batchnorm(layer, weights, i)?;
        weights.weight = Some(Tensor::Real(fused.weight));
        weights.bias = Some(Tensor::Real(fused.bias));
        layer.has_bias = true;
        layer.batchnorm = None;
    }
    Ok(out)
}
