//! Value-level primitives shared by the learned components.

use super::matrix::{dot, norm, Matrix};
use crate::error::{Error, Result};

/// Norms below this are treated as zero by [`cosine_similarity`].
pub const COSINE_ZERO_NORM: f64 = 1e-12;

/// LayerNorm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("softmax input must be finite"));
    }
    Ok(softmax_unchecked(x))
}

pub(crate) fn softmax_unchecked(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity; `0` when either vector has (near) zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_ZERO_NORM || nb < COSINE_ZERO_NORM {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Sinusoidal positional encoding for positions `0..n`.
///
/// `PE(pos, 2i) = sin(pos / 10000^(2i/d))`, `PE(pos, 2i+1) = cos(same)`.
pub fn sinusoidal_pe(n: usize, dim: usize) -> Result<Matrix> {
    if dim % 2 != 0 {
        return Err(Error::invalid(format!(
            "positional encoding needs an even dimension, got {dim}"
        )));
    }
    let mut pe = Matrix::zeros(n, dim);
    for pos in 0..n {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf((2 * i) as f64 / dim as f64);
            pe.set(pos, 2 * i, angle.sin());
            pe.set(pos, 2 * i + 1, angle.cos());
        }
    }
    Ok(pe)
}

/// Row-wise LayerNorm with per-column gain and bias.
pub fn layer_norm_rows(x: &Matrix, gain: &[f64], bias: &[f64]) -> Result<Matrix> {
    if gain.len() != x.cols() || bias.len() != x.cols() {
        return Err(Error::shape("layer norm parameters do not match width"));
    }
    let mut out = x.clone();
    let n = x.cols() as f64;
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for (c, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) * inv * gain[c] + bias[c];
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
