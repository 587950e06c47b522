//! Codebook training, search and weight quantization against brute-force
//! reference implementations.

use lutllm_core::codebook::{train_codebook_report, KMeansOptions};
use lutllm_core::{
    chebyshev, nearest_centroid, quantize_weights, reconstruct, train_codebook, Codebook, Matrix,
    QuantizedLinear, SchemeConfig, SchemeKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Plain Lloyd iteration from explicit initial centroids until assignments
/// stop changing. Returns (centroids, objective).
fn lloyd_oracle(points: &[Vec<f32>], init: Vec<Vec<f32>>) -> (Vec<Vec<f32>>, f64) {
    let mut cents = init;
    let mut assign: Vec<usize> = vec![usize::MAX; points.len()];
    loop {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = 0;
                for k in 1..cents.len() {
                    if sq(p, &cents[k]) < sq(p, &cents[best]) {
                        best = k;
                    }
                }
                best
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (k, c) in cents.iter_mut().enumerate() {
            let members: Vec<&Vec<f32>> =
                points.iter().zip(&assign).filter(|(_, &a)| a == k).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for j in 0..c.len() {
                c[j] = (members.iter().map(|p| p[j] as f64).sum::<f64>() / members.len() as f64) as f32;
            }
        }
    }
    let obj = points.iter().map(|p| cents.iter().map(|c| sq(p, c)).fold(f64::INFINITY, f64::min)).sum();
    (cents, obj)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Best Lloyd fixed point over every choice of k distinct input points as
/// the starting centroids.
fn exhaustive_lloyd(points: &[Vec<f32>], k: usize) -> Vec<Vec<f32>> {
    combinations(points.len(), k)
        .into_iter()
        .map(|idx| lloyd_oracle(points, idx.iter().map(|&i| points[i].clone()).collect()))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0
}

fn chebyshev_nearest(p: &[f32], cents: &[Vec<f32>]) -> usize {
    let mut best = 0;
    for k in 1..cents.len() {
        if chebyshev(p, &cents[k]) < chebyshev(p, &cents[best]) {
            best = k;
        }
    }
    best
}

#[test]
fn four_separated_clusters_recover_their_means() {
    let centers = [[-10.0f32, -10.0], [10.0, -10.0], [-10.0, 10.0], [10.0, 10.0]];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for i in 0..64 {
        let c = centers[i % 4];
        rows.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
        truth.push(i % 4);
    }
    // exhaustive assignment oracle: with this separation the membership is
    // forced, so the optimum is the per-cluster mean
    let oracle: Vec<Vec<f64>> = (0..4)
        .map(|k| {
            let members: Vec<&Vec<f32>> = rows.iter().zip(&truth).filter(|(_, &t)| t == k).map(|(r, _)| r).collect();
            (0..2).map(|j| members.iter().map(|r| r[j] as f64).sum::<f64>() / members.len() as f64).collect()
        })
        .collect();
    let data = Matrix::from_rows(&rows).unwrap();
    for seed in 0..5 {
        let cb = train_codebook(&data, 4, 50, seed).unwrap();
        for want in &oracle {
            let hit = cb.iter().any(|c| c.iter().zip(want).all(|(&a, &b)| (a as f64 - b).abs() < 1e-4));
            assert!(hit, "seed {seed}: no centroid near {want:?}: {:?}", cb.as_slice());
        }
    }
}

#[test]
fn weight_quantization_matches_exhaustive_lloyd() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = Matrix::from_fn(32, 8, |_, _| rng.random_range(-1.0f32..1.0));
    let cfg = SchemeConfig::new(SchemeKind::WeightVq, 16, 2, 4, 1);
    let q = QuantizedLinear::quantize(&w, None, &cfg, 3).unwrap();
    let rec = reconstruct(&q).unwrap();
    let layout = q.weight_indices.as_ref().unwrap().layout;
    for g in 0..layout.num_groups() {
        let s = layout.slice_of(g);
        let points: Vec<Vec<f32>> = layout.rows_of(g).map(|r| w.vector(r, s, 2).to_vec()).collect();
        let cents = exhaustive_lloyd(&points, 4);
        let oracle_err: f64 = points.iter().map(|p| sq(p, &cents[chebyshev_nearest(p, &cents)])).sum();
        let ours: f64 = layout.rows_of(g).map(|r| sq(w.vector(r, s, 2), rec.vector(r, s, 2))).sum();
        assert!((ours - oracle_err).abs() <= 1e-6, "group {g}: {ours} vs oracle {oracle_err}");
    }
}

#[test]
fn figure_weight_vector_encodes_to_first_centroid() {
    let cb = Codebook::from_rows(&[vec![2.0, 3.0], vec![5.0, 1.0]]).unwrap();
    assert_eq!(nearest_centroid(&[1.0, 3.0], &cb).unwrap(), 0);
    // a group made of those two centroids plus (1, 3) quantizes (1, 3) to (2, 3)
    let w = Matrix::from_rows(&[vec![2.0, 3.0], vec![5.0, 1.0], vec![2.0, 3.0], vec![1.0, 3.0]]).unwrap();
    let cfg = SchemeConfig::new(SchemeKind::WeightVq, 4, 2, 2, 1);
    let (cbs, idx) = quantize_weights(&w, &cfg, 0).unwrap();
    let i = idx.indices().unwrap()[3] as usize;
    let c = cbs[0].centroid(i);
    assert!(sq(c, &[1.0, 3.0]) < sq(c, &[5.0, 1.0]));
}

fn small_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-50.0f32..50.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn nearest_centroid_matches_exhaustive_scan(
        cents in prop::collection::vec(prop::collection::vec(-4i32..4, 3), 1..12),
        query in prop::collection::vec(-5i32..5, 3),
    ) {
        // small integers make ties common
        let rows: Vec<Vec<f32>> = cents.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
        let q: Vec<f32> = query.iter().map(|&x| x as f32).collect();
        let cb = Codebook::from_rows(&rows).unwrap();
        let got = nearest_centroid(&q, &cb).unwrap();
        let dists: Vec<f32> = rows.iter().map(|r| r.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max)).collect();
        let min = dists.iter().cloned().fold(f32::INFINITY, f32::min);
        let first = dists.iter().position(|&d| d == min).unwrap();
        prop_assert_eq!(got, first);
    }

    #[test]
    fn kmeans_objective_never_increases(data in small_matrix(40, 2), c in 1usize..8, seed in 0u64..1000) {
        let (_, report) = train_codebook_report(&data, c, KMeansOptions { max_iters: 30, seed, restarts: 1 }).unwrap();
        for pair in report.objective.windows(2) {
            prop_assert!(pair[1] <= pair[0], "{:?}", report.objective);
        }
    }

    #[test]
    fn enough_centroids_give_zero_error(
        base in prop::collection::vec(prop::collection::vec(-9i32..9, 2), 1..6),
        reps in 1usize..4,
        seed in 0u64..100,
    ) {
        let mut rows = Vec::new();
        for _ in 0..reps {
            rows.extend(base.iter().map(|r| r.iter().map(|&x| x as f32).collect::<Vec<f32>>()));
        }
        let data = Matrix::from_rows(&rows).unwrap();
        let cb = train_codebook(&data, 8, 25, seed).unwrap();
        for r in &rows {
            let k = cb.nearest(r);
            prop_assert_eq!(cb.centroid(k), &r[..]);
        }
    }
}
