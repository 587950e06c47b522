//! fp32 operators against straightforward f64 reference loops.

use lutllm_core::Matrix;
use lutllm_perf::{AttentionShape, ModelConfig};
use lutllm_runner::{attention_forward, ffn_forward, softmax, Linear, TransformerWeights, DEFAULT_GAIN};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Per-head loop: head `h` reads KV head `h / g`; query `r` sees keys up to
/// `start + r`.
fn naive_attention(q: &Matrix, k: &Matrix, v: &Matrix, heads: usize, kv_heads: usize, d: usize, start: usize) -> Vec<f64> {
    let g = heads / kv_heads;
    let mut out = vec![0f64; q.rows() * heads * d];
    for r in 0..q.rows() {
        for h in 0..heads {
            let kh = h / g;
            let n = start + r + 1;
            let scores: Vec<f64> = (0..n)
                .map(|j| (0..d).map(|i| q.get(r, h * d + i) as f64 * k.get(j, kh * d + i) as f64).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = w.iter().sum();
            for i in 0..d {
                out[(r * heads + h) * d + i] = (0..n).map(|j| w[j] / z * v.get(j, kh * d + i) as f64).sum();
            }
        }
    }
    out
}

#[test]
fn attention_matches_per_head_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (heads, kv_heads, d) in [(2, 1, 4), (4, 2, 8), (8, 2, 32), (3, 3, 6)] {
        for (rows, start) in [(5, 0), (1, 6), (3, 4)] {
            let kv_len = start + rows;
            let q = random_matrix(rows, heads * d, &mut rng);
            let k = random_matrix(kv_len, kv_heads * d, &mut rng);
            let v = random_matrix(kv_len, kv_heads * d, &mut rng);
            let shape = AttentionShape { heads, kv_heads, head_dim: d };
            let got = attention_forward(&q, &k, &v, shape, start).unwrap();
            let want = naive_attention(&q, &k, &v, heads, kv_heads, d, start);
            for (a, b) in got.as_slice().iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-5, "{a} vs {b} at h={heads} g={}", heads / kv_heads);
            }
        }
    }
}

#[test]
fn causal_mask_ignores_future_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let shape = AttentionShape { heads: 4, kv_heads: 2, head_dim: 4 };
    let q = random_matrix(4, 16, &mut rng);
    let k = random_matrix(4, 8, &mut rng);
    let v = random_matrix(4, 8, &mut rng);
    let full = attention_forward(&q, &k, &v, shape, 0).unwrap();
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    k2.row_mut(3).fill(9.0);
    v2.row_mut(3).fill(-9.0);
    let changed = attention_forward(&q, &k2, &v2, shape, 0).unwrap();
    for r in 0..3 {
        assert_eq!(full.row(r), changed.row(r));
    }
    assert_ne!(full.row(3), changed.row(3));
}

fn tiny() -> ModelConfig {
    ModelConfig {
        name: "tiny".into(),
        hidden: 16,
        heads: 4,
        kv_group: 2,
        head_dim: 4,
        ffn_hidden: 24,
        layers: 1,
        vocab: 32,
        rope_base: 10000.0,
        norm_eps: 1e-6,
    }
}

fn dense(lin: &Linear) -> &Matrix {
    match lin {
        Linear::Dense(w) => w,
        Linear::Quantized(_) => panic!("dense expected"),
    }
}

#[test]
fn ffn_matches_naive_oracle() {
    let model = TransformerWeights::random(&tiny(), 3, 1.0).unwrap();
    let layer = &model.layers[0];
    let (w1, w2, w3) = (dense(&layer.linears[4]), dense(&layer.linears[5]), dense(&layer.linears[6]));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_matrix(6, 16, &mut rng);
    let got = ffn_forward(&x, layer).unwrap();
    for r in 0..x.rows() {
        let dot = |w: &Matrix, m: usize, input: &[f64]| -> f64 { input.iter().enumerate().map(|(i, a)| a * w.get(m, i) as f64).sum() };
        let xr: Vec<f64> = x.row(r).iter().map(|&a| a as f64).collect();
        let mid: Vec<f64> = (0..24)
            .map(|m| {
                let a = dot(w1, m, &xr);
                a / (1.0 + (-a).exp()) * dot(w2, m, &xr)
            })
            .collect();
        for c in 0..16 {
            let want = dot(w3, c, &mid);
            assert!((got.get(r, c) as f64 - want).abs() < 1e-5, "{} vs {want}", got.get(r, c));
        }
    }
}

#[test]
fn ffn_of_zero_is_zero() {
    let model = TransformerWeights::random(&ModelConfig::desk(), 1, DEFAULT_GAIN).unwrap();
    let y = ffn_forward(&Matrix::zeros(3, 256), &model.layers[0]).unwrap();
    assert!(y.as_slice().iter().all(|&v| v == 0.0));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(grid in prop::collection::vec(-1920i32..1920, 1..64), shift in -50i32..50) {
        // scores on a 1/64 grid so that adding an integer shift is exact
        let row: Vec<f32> = grid.iter().map(|&g| g as f32 / 64.0).collect();
        let shift = shift as f32;
        let mut a = row.clone();
        softmax(&mut a);
        prop_assert!((a.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        let mut b: Vec<f32> = row.iter().map(|x| x + shift).collect();
        softmax(&mut b);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_ignores_a_constant_score_offset(seed in 0u64..1000, rows in 1usize..5) {
        // a query component along a direction every key shares adds the same
        // amount to every score of the row
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = AttentionShape { heads: 2, kv_heads: 1, head_dim: 4 };
        let q = random_matrix(rows, 8, &mut rng);
        let mut k = random_matrix(rows, 4, &mut rng);
        for j in 0..rows {
            k.set(j, 3, 1.0);
        }
        let v = random_matrix(rows, 4, &mut rng);
        let mut q2 = q.clone();
        for r in 0..rows {
            q2.set(r, 3, q.get(r, 3) + 2.5);
            q2.set(r, 7, q.get(r, 7) - 1.5);
        }
        let a = attention_forward(&q, &k, &v, shape, 0).unwrap();
        let b = attention_forward(&q2, &k, &v, shape, 0).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-5);
    }
}
