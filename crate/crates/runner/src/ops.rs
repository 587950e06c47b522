//! Floating-point operators that stay in fp32 regardless of the linear
//! path: RMSNorm, SiLU, softmax, rotary embeddings and GQA attention.

use lutllm_core::Matrix;
use lutllm_perf::AttentionShape;

use crate::error::{Result, RunnerError};

/// `x / rms(x) * gain`, row by row.
pub fn rms_norm(x: &Matrix, gain: &[f32], eps: f32) -> Result<Matrix> {
    if gain.len() != x.cols() {
        return Err(RunnerError::Shape(format!("norm gain has {} entries for width {}", gain.len(), x.cols())));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let ms = row.iter().map(|v| v * v).sum::<f32>() / row.len() as f32;
        let inv = 1.0 / (ms + eps).sqrt();
        for (v, g) in row.iter_mut().zip(gain) {
            *v = *v * inv * g;
        }
    }
    Ok(out)
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

/// Numerically stable softmax in place.
pub fn softmax(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Rotates every `head_dim` chunk of each row by its absolute position
/// `start + row`, rotate-half convention: pairs are `(i, i + d/2)` with
/// frequency `base^(-2i/d)`.
pub fn apply_rope(x: &mut Matrix, head_dim: usize, start: usize, base: f64) -> Result<()> {
    if head_dim == 0 || !head_dim.is_multiple_of(2) || !x.cols().is_multiple_of(head_dim) {
        return Err(RunnerError::Shape(format!("rope needs an even head_dim dividing {}, got {head_dim}", x.cols())));
    }
    let half = head_dim / 2;
    let inv_freq: Vec<f64> = (0..half).map(|i| base.powf(-2.0 * i as f64 / head_dim as f64)).collect();
    for r in 0..x.rows() {
        let pos = (start + r) as f64;
        let (sin, cos): (Vec<f32>, Vec<f32>) = inv_freq
            .iter()
            .map(|f| {
                let a = pos * f;
                (a.sin() as f32, a.cos() as f32)
            })
            .unzip();
        for head in x.row_mut(r).chunks_exact_mut(head_dim) {
            let (lo, hi) = head.split_at_mut(half);
            for i in 0..half {
                let (a, b) = (lo[i], hi[i]);
                lo[i] = a * cos[i] - b * sin[i];
                hi[i] = a * sin[i] + b * cos[i];
            }
        }
    }
    Ok(())
}

/// `O_i = softmax(Q_i K_{i/g}^T / sqrt(d)) V_{i/g}` for every query head.
///
/// `q` is `L x h*d`, `k` and `v` are `kv_len x (h/g)*d`. Query row `r` sits
/// at absolute position `q_start + r` and sees keys `0..=q_start + r`, which
/// covers both the causal prefill and a decode step (`q_start = kv_len - 1`).
/// Each query row is computed the same way whichever stage it belongs to.
pub fn attention_forward(q: &Matrix, k: &Matrix, v: &Matrix, shape: AttentionShape, q_start: usize) -> Result<Matrix> {
    let AttentionShape { heads, kv_heads, head_dim: d } = shape;
    if kv_heads == 0 || heads % kv_heads != 0 {
        return Err(RunnerError::Shape(format!("{kv_heads} KV heads cannot serve {heads} query heads")));
    }
    if q.cols() != heads * d || k.cols() != kv_heads * d || v.cols() != kv_heads * d {
        return Err(RunnerError::Shape(format!(
            "Q is {}x{}, K {}x{}, V {}x{} for {heads} heads of {d} and {kv_heads} KV heads",
            q.rows(),
            q.cols(),
            k.rows(),
            k.cols(),
            v.rows(),
            v.cols()
        )));
    }
    if k.rows() != v.rows() || q_start + q.rows() > k.rows() {
        return Err(RunnerError::Shape(format!(
            "{} queries from position {q_start} need {} keys, have K {} / V {}",
            q.rows(),
            q_start + q.rows(),
            k.rows(),
            v.rows()
        )));
    }
    let group = heads / kv_heads;
    let scale = 1.0 / (d as f32).sqrt();
    let mut out = Matrix::zeros(q.rows(), heads * d);
    let mut scores = Vec::with_capacity(k.rows());
    for r in 0..q.rows() {
        let visible = q_start + r + 1;
        for h in 0..heads {
            let kvh = h / group;
            let qh = &q.row(r)[h * d..(h + 1) * d];
            scores.clear();
            for j in 0..visible {
                let kh = &k.row(j)[kvh * d..(kvh + 1) * d];
                let mut s = 0f32;
                for (a, b) in qh.iter().zip(kh) {
                    s += a * b;
                }
                scores.push(s * scale);
            }
            softmax(&mut scores);
            let o = &mut out.row_mut(r)[h * d..(h + 1) * d];
            for (j, p) in scores.iter().enumerate() {
                let vh = &v.row(j)[kvh * d..(kvh + 1) * d];
                for (acc, x) in o.iter_mut().zip(vh) {
                    *acc += p * x;
                }
            }
        }
    }
    Ok(out)
}
