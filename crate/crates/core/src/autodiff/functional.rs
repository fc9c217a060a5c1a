//! Stateless tensor functions shared by the graph primitives and by callers
//! that only need forward values.

use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Epsilon added to the variance in [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Splits `shape` around `axis` into `(outer, extent, inner)` so that element
/// `(o, i, j)` lives at `o * extent * inner + i * inner + j`.
pub(crate) fn axis_dims(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
///
/// Panics if `axis` is not a valid axis of `logits`.
pub fn softmax(logits: &Tensor, axis: usize) -> Tensor {
    assert!(
        axis < logits.rank(),
        "softmax axis {axis} on shape {:?}",
        logits.shape()
    );
    let (outer, n, inner) = axis_dims(logits.shape(), axis);
    let src = logits.data();
    let mut out = logits.clone();
    let dst = out.data_mut();
    for o in 0..outer {
        for j in 0..inner {
            let idx = |i: usize| o * n * inner + i * inner + j;
            let max = (0..n).map(|i| src[idx(i)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in 0..n {
                let e = (src[idx(i)] - max).exp();
                dst[idx(i)] = e;
                total += e;
            }
            for i in 0..n {
                dst[idx(i)] /= total;
            }
        }
    }
    out
}

/// Log-softmax along the last axis.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let axis = logits.rank().saturating_sub(1);
    let mut out = logits.clone();
    if logits.rank() == 0 {
        out.data_mut()[0] = 0.0;
        return out;
    }
    let n = logits.shape()[axis];
    for chunk in out.data_mut().chunks_mut(n) {
        let lse = log_sum_exp(chunk);
        for v in chunk.iter_mut() {
            *v -= lse;
        }
    }
    out
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Layer normalization over the last axis with per-feature gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let Some(&n) = x.shape().last() else {
        return shape_err("layer_norm", "input has no feature axis");
    };
    if gain.shape() != [n] || bias.shape() != [n] {
        return shape_err(
            "layer_norm",
            format!("gain {:?} and bias {:?} must both be [{n}]", gain.shape(), bias.shape()),
        );
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let (mean, inv) = norm_stats(row);
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain.data()[k] + bias.data()[k];
        }
    }
    Ok(out)
}

/// Mean and reciprocal standard deviation (with epsilon) of a feature row.
pub(crate) fn norm_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
