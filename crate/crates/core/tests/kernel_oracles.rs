//! Lookup-table construction and matmul paths against naive loop oracles.

use lutllm_core::{
    build_lut1d, build_lut2d, coquant_accumulators, dense_matmul, dequantize_acc, matmul_activation_vq,
    matmul_coquant, matmul_weight_vq, quantize_table_int8, reconstruct, Codebook, Container, GroupLayout,
    Matrix, QuantizedLinear, SchemeConfig, SchemeKind, TableData, Tables,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0f32..1.0))
}

fn random_codebook(rng: &mut ChaCha8Rng, c: usize, v: usize) -> Codebook {
    Codebook::new(v, (0..c * v).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn naive_matmul(x: &Matrix, w: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    for l in 0..x.rows() {
        for m in 0..w.rows() {
            out.push((0..x.cols()).map(|d| x.get(l, d) as f64 * w.get(m, d) as f64).sum());
        }
    }
    out
}

/// max |a - b| <= tol * max(1, max |b|)
fn close_rel(a: &[f32], b: &[f64], tol: f64) -> bool {
    let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(&x, &y)| (x as f64 - y).abs() <= tol * scale)
}

fn snap(x: &Matrix, cbs: &[Codebook]) -> Matrix {
    let v = cbs[0].vector_len();
    Matrix::from_fn(x.rows(), x.cols(), |l, c| {
        let cb = &cbs[c / v];
        cb.centroid(cb.nearest(x.vector(l, c / v, v)))[c % v]
    })
}

#[test]
fn dense_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_matrix(&mut rng, 3, 4);
    let w = random_matrix(&mut rng, 5, 4);
    let y = dense_matmul(&x, &w).unwrap();
    for l in 0..3 {
        for m in 0..5 {
            let mut acc = 0f32;
            for d in 0..4 {
                acc += x.get(l, d) * w.get(m, d);
            }
            assert_eq!(y.get(l, m), acc);
        }
    }
}

#[test]
fn lut1d_matches_naive_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let w = random_matrix(&mut rng, 4, 4);
    let cbs: Vec<Codebook> = (0..2).map(|_| random_codebook(&mut rng, 3, 2)).collect();
    let lut = build_lut1d(&w, &cbs).unwrap();
    let t = lut.data.to_f32();
    assert_eq!(t.len(), 4 * 2 * 3);
    for m in 0..4 {
        for s in 0..2 {
            for j in 0..3 {
                let c = cbs[s].centroid(j);
                let want = w.get(m, 2 * s) * c[0] + w.get(m, 2 * s + 1) * c[1];
                assert_eq!(t[lut.offset(m, s) + j], want);
            }
        }
    }
}

#[test]
fn lut2d_matches_naive_dot_products() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layout = GroupLayout::new(2, 2, 2, 2).unwrap();
    let act = random_codebook(&mut rng, 4, 2);
    let wcb = random_codebook(&mut rng, 2, 2);
    let lut = build_lut2d(std::slice::from_ref(&wcb), std::slice::from_ref(&act), &layout).unwrap();
    let t = lut.data.to_f32();
    assert_eq!(t.len(), 8);
    for i in 0..4 {
        for j in 0..2 {
            let (a, b) = (act.centroid(i), wcb.centroid(j));
            assert_eq!(t[lut.row_offset(0, i) + j], a[0] * b[0] + a[1] * b[1]);
        }
    }
}

#[test]
fn int8_symmetric_table_round_trip() {
    let vals = [-1.0f32, 0.0, 1.0];
    let t = quantize_table_int8(&vals).unwrap();
    for (i, &x) in vals.iter().enumerate() {
        let deq = t.scale as f64 * (t.q[i] as f64 - t.zero_point as f64);
        assert!((deq - x as f64).abs() <= t.scale as f64 / 2.0);
    }
}

#[test]
fn weight_vq_is_reconstruct_then_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w = random_matrix(&mut rng, 16, 8);
    let x = random_matrix(&mut rng, 5, 8);
    let cfg = SchemeConfig::new(SchemeKind::WeightVq, 8, 2, 4, 1);
    let q = QuantizedLinear::quantize(&w, None, &cfg, 9).unwrap();
    // gather oracle
    let idx = q.weight_indices.as_ref().unwrap();
    let flat = idx.indices().unwrap();
    let cbs = q.weight_codebooks.as_ref().unwrap();
    let gathered = Matrix::from_fn(16, 8, |r, c| {
        let s = c / 2;
        cbs[idx.layout.group_of(r, s)].centroid(flat[r * 4 + s] as usize)[c % 2]
    });
    assert_eq!(reconstruct(&q).unwrap(), gathered);
    assert_eq!(matmul_weight_vq(&x, &q).unwrap(), dense_matmul(&x, &gathered).unwrap());
    let zero = matmul_weight_vq(&Matrix::zeros(2, 8), &q).unwrap();
    assert!(zero.as_slice().iter().all(|&y| y == 0.0));
}

#[test]
fn exact_codebooks_reproduce_dense_exactly() {
    // integer-valued data keeps every f32 sum exact, so any reduction order agrees
    let w = Matrix::from_fn(8, 4, |r, c| ((r % 2) * 2 + c % 2) as f32 - 1.0);
    let x = Matrix::from_fn(3, 4, |l, c| ((l + c) % 3) as f32);
    let dense = dense_matmul(&x, &w).unwrap();

    let wvq = SchemeConfig::new(SchemeKind::WeightVq, 8, 2, 4, 1);
    let q = QuantizedLinear::quantize(&w, None, &wvq, 0).unwrap();
    assert_eq!(reconstruct(&q).unwrap(), w);
    assert_eq!(matmul_weight_vq(&x, &q).unwrap(), dense);

    let act = SchemeConfig::new(SchemeKind::ActivationVq, 8, 2, 4, 16).with_table_bits(32);
    let q = QuantizedLinear::quantize(&w, Some(&x), &act, 0).unwrap();
    assert_eq!(matmul_activation_vq(&x, &q).unwrap(), dense);

    let co = SchemeConfig::new(SchemeKind::Coquant, 8, 2, 4, 16).with_table_bits(32);
    let q = QuantizedLinear::quantize(&w, Some(&x), &co, 0).unwrap();
    assert_eq!(matmul_coquant(&x, &q).unwrap(), dense);
}

#[test]
fn activation_vq_fp32_matches_snapped_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_matrix(&mut rng, 12, 16);
    let x = random_matrix(&mut rng, 20, 16);
    let cfg = SchemeConfig::new(SchemeKind::ActivationVq, 4, 2, 4, 8).with_table_bits(32);
    let q = QuantizedLinear::quantize(&w, Some(&x), &cfg, 1).unwrap();
    let oracle = naive_matmul(&snap(&x, q.act_codebooks.as_ref().unwrap()), &w);
    assert!(close_rel(matmul_activation_vq(&x, &q).unwrap().as_slice(), &oracle, 1e-5));
}

#[test]
fn coquant_fp32_matches_snapped_reconstructed_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = random_matrix(&mut rng, 32, 16);
    let x = random_matrix(&mut rng, 20, 16);
    let cfg = SchemeConfig::new(SchemeKind::Coquant, 8, 2, 4, 8).with_table_bits(32);
    let q = QuantizedLinear::quantize(&w, Some(&x), &cfg, 1).unwrap();
    let oracle = naive_matmul(&snap(&x, q.act_codebooks.as_ref().unwrap()), &reconstruct(&q).unwrap());
    assert!(close_rel(matmul_coquant(&x, &q).unwrap().as_slice(), &oracle, 1e-5));
}

#[test]
fn coquant_uint8_accumulators_match_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, d, v) = (24, 16, 2);
    let w = random_matrix(&mut rng, m, d);
    let x = random_matrix(&mut rng, 6, d);
    let cfg = SchemeConfig::new(SchemeKind::Coquant, 8, v, 4, 8);
    let q = QuantizedLinear::quantize(&w, Some(&x), &cfg, 2).unwrap();
    let Some(Tables::TwoD(lut)) = &q.tables else { panic!("expected 2D tables") };
    let TableData::U8(t) = &lut.data else { panic!("expected uint8 tables") };
    let act = q.act_codebooks.as_ref().unwrap();
    let wcbs = q.weight_codebooks.as_ref().unwrap();
    let widx = q.weight_indices.as_ref().unwrap().indices().unwrap();
    let slices = d / v;
    let (c_a, c_w) = (8, 4);

    let accs = coquant_accumulators(&x, &q).unwrap();
    let y = matmul_coquant(&x, &q).unwrap();
    for l in 0..x.rows() {
        assert_eq!(accs[l].terms, slices);
        for mi in 0..m {
            let mut acc = 0i64;
            for s in 0..slices {
                let i = act[s].nearest(x.vector(l, s, v));
                let g = s * m.div_ceil(8) + mi / 8;
                assert_eq!(wcbs[g].size(), c_w);
                let j = widx[mi * slices + s] as usize;
                acc += t.q[(g * c_a + i) * c_w + j] as i64;
            }
            assert_eq!(accs[l].acc[mi] as i64, acc);
            assert_eq!(y.get(l, mi), dequantize_acc(acc as i32, slices, t.scale, t.zero_point));
        }
    }
}

#[test]
fn uint8_paths_do_not_depend_on_thread_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let w = random_matrix(&mut rng, 32, 32);
    let x = random_matrix(&mut rng, 16, 32);
    let cfg = SchemeConfig::new(SchemeKind::Coquant, 16, 2, 8, 16);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let q = QuantizedLinear::quantize(&w, Some(&x), &cfg, 5).unwrap();
            (q.accumulators(&x).unwrap(), matmul_coquant(&x, &q).unwrap())
        })
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn qwen_scheme_table_sizes() {
    let (m, d) = (1024, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random_matrix(&mut rng, m, d);
    let x = random_matrix(&mut rng, 64, d);
    let co = SchemeConfig::qwen_coquant();
    let q = QuantizedLinear::quantize(&w, Some(&x), &co, 0).unwrap();
    let (g, v, c_w, c_a) = (512, 2, 16, 64);
    assert_eq!(q.sizes().tables, m * d * c_a * c_w / (g * v));
    assert_eq!(q.sizes().weight_indices, m * d * 4 / (8 * v));

    let act = co.with_kind(SchemeKind::ActivationVq);
    let q = QuantizedLinear::quantize(&w, Some(&x), &act, 0).unwrap();
    assert_eq!(q.sizes().tables, m * d * c_a / v);
    // 1D tables are c_a / (2v) = 16 times the fp16 weights
    assert_eq!(q.sizes().tables / (2 * m * d), 16);
    assert_eq!(q.sizes().tables % (2 * m * d), 0);
}

#[test]
fn container_round_trips_quantized_layers() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let w = random_matrix(&mut rng, 16, 8);
    let x = random_matrix(&mut rng, 12, 8);
    let mut c = Container::new(None);
    let mut layers = Vec::new();
    for (i, kind) in [SchemeKind::WeightVq, SchemeKind::ActivationVq, SchemeKind::Coquant].into_iter().enumerate() {
        let cfg = SchemeConfig::new(kind, 8, 2, 4, 8);
        let q = QuantizedLinear::quantize(&w, Some(&x), &cfg, 0).unwrap();
        c.put_linear(&format!("l{i}"), &q).unwrap();
        layers.push((cfg, q));
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("layers.lut");
    c.save(&path).unwrap();
    let back = Container::load(&path).unwrap();
    for (i, (cfg, q)) in layers.iter().enumerate() {
        let r = back.get_linear(&format!("l{i}"), cfg).unwrap();
        assert_eq!(&r, q);
        assert_eq!(r.forward(&x).unwrap(), q.forward(&x).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn int8_round_trip_within_half_step(vals in prop::collection::vec(-1e3f32..1e3, 1..200)) {
        let t = quantize_table_int8(&vals).unwrap();
        let s = t.scale as f64;
        for (i, &x) in vals.iter().enumerate() {
            let deq = s * (t.q[i] as f64 - t.zero_point as f64);
            prop_assert!((deq - x as f64).abs() <= s / 2.0 * (1.0 + 1e-6), "{} vs {}", deq, x);
        }
        // re-quantizing the dequantized grid reproduces the same codes
        let again = quantize_table_int8(&t.dequantize()).unwrap();
        prop_assert_eq!(again.q, t.q);
    }

    #[test]
    fn dequantize_acc_matches_elementwise_sum(
        qs in prop::collection::vec(0u8..=255, 1..300),
        s in 1e-4f32..2.0,
        z in 0.0f32..255.0,
    ) {
        let acc: i32 = qs.iter().map(|&q| q as i32).sum();
        let oracle: f64 = qs.iter().map(|&q| s as f64 * (q as f64 - z as f64)).sum();
        let got = dequantize_acc(acc, qs.len(), s, z) as f64;
        prop_assert!((got - oracle).abs() <= 1e-6 * oracle.abs().max(1.0), "{} vs {}", got, oracle);
    }
}
