//! Codebooks, k-means training and Chebyshev nearest-centroid search.
//!
//! Training minimizes the squared-Euclidean objective (Lloyd iterations after
//! k-means++ seeding); the online search uses the Chebyshev distance the
//! hardware compares with. Both are deterministic for a fixed seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    vector_len: usize,
    /// `size * vector_len` values, one centroid per row.
    centroids: Vec<f32>,
}

impl Codebook {
    pub fn new(vector_len: usize, centroids: Vec<f32>) -> Result<Self> {
        if vector_len == 0 || centroids.is_empty() || !centroids.len().is_multiple_of(vector_len) {
            return Err(Error::Shape(format!(
                "{} centroid values do not form rows of length {vector_len}",
                centroids.len()
            )));
        }
        if centroids.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Codebook { vector_len, centroids })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let m = Matrix::from_rows(rows)?;
        Codebook::new(m.cols(), m.into_vec())
    }

    #[inline]
    pub fn vector_len(&self) -> usize {
        self.vector_len
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.centroids.len() / self.vector_len
    }

    #[inline]
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.vector_len..(i + 1) * self.vector_len]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f32]> {
        self.centroids.chunks_exact(self.vector_len)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.centroids
    }

    /// Index of the nearest centroid, without the length check.
    #[inline]
    pub fn nearest(&self, vec: &[f32]) -> usize {
        let mut best = 0;
        let mut best_dist = f32::INFINITY;
        for (i, c) in self.iter().enumerate() {
            let dist = chebyshev(vec, c);
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        best
    }
}

/// L-infinity distance.
#[inline]
pub fn chebyshev(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

#[inline]
fn sq_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

/// Smallest index attaining the minimum Chebyshev distance to `vec`.
pub fn nearest_centroid(vec: &[f32], codebook: &Codebook) -> Result<usize> {
    if vec.len() != codebook.vector_len {
        return Err(Error::LengthMismatch { expected: codebook.vector_len, got: vec.len() });
    }
    Ok(codebook.nearest(vec))
}

#[derive(Clone, Copy, Debug)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub seed: u64,
    /// Independent k-means++ restarts; the run with the lowest final
    /// objective wins (earliest on ties). 0 picks a count from the problem
    /// size, see [`auto_restarts`].
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { max_iters: 25, seed: 0, restarts: 0 }
    }
}

/// Restart count for `n` points and `c` centroids: small problems, where
/// Lloyd iterations are cheap and bad local optima are common, get many
/// restarts; large ones get a few.
pub fn auto_restarts(n: usize, c: usize) -> usize {
    const BUDGET: usize = 8192;
    (BUDGET / (n * c).max(1)).clamp(4, 128)
}

#[derive(Clone, Debug, Default)]
pub struct KMeansReport {
    /// Squared-Euclidean objective after each accepted assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn train_codebook(vectors: &Matrix, c: usize, max_iters: usize, seed: u64) -> Result<Codebook> {
    let opts = KMeansOptions { max_iters, seed, restarts: 0 };
    train_codebook_report(vectors, c, opts).map(|(cb, _)| cb)
}

/// k-means++ seeding followed by Lloyd iterations, repeated `opts.restarts`
/// times.
///
/// Iteration stops when assignments no longer change, when the objective
/// stops decreasing (the previous centroids are kept) or after `max_iters`.
/// The report describes the winning run.
pub fn train_codebook_report(
    vectors: &Matrix,
    c: usize,
    opts: KMeansOptions,
) -> Result<(Codebook, KMeansReport)> {
    let (n, v) = vectors.shape();
    if n == 0 {
        return Err(Error::NoVectors);
    }
    if c == 0 || v == 0 {
        return Err(Error::Shape(format!("need c >= 1 and v >= 1, got c = {c}, v = {v}")));
    }
    if !vectors.is_finite() {
        return Err(Error::NonFinite);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Codebook, KMeansReport)> = None;
    let restarts = if opts.restarts == 0 { auto_restarts(n, c) } else { opts.restarts };
    for _ in 0..restarts {
        let run = lloyd(vectors, c, opts.max_iters, &mut rng);
        let better = match &best {
            None => true,
            Some((_, b)) => run.1.objective.last() < b.objective.last(),
        };
        if better {
            best = Some(run);
        }
        if best.as_ref().and_then(|(_, r)| r.objective.last().copied()) == Some(0.0) {
            break;
        }
    }
    Ok(best.expect("at least one run"))
}

fn lloyd(vectors: &Matrix, c: usize, max_iters: usize, rng: &mut ChaCha8Rng) -> (Codebook, KMeansReport) {
    let (n, v) = vectors.shape();
    let mut centroids = seed_plus_plus(vectors, c, rng);
    let mut report = KMeansReport::default();
    let mut assignment = vec![usize::MAX; n];
    let mut accepted = centroids.clone();

    for _ in 0..max_iters {
        let (next, dists) = assign(vectors, &centroids, v);
        let objective: f64 = dists.iter().sum();
        if let Some(&prev) = report.objective.last() {
            if objective >= prev {
                centroids = accepted;
                report.converged = true;
                break;
            }
        }
        accepted = centroids.clone();
        let changed = next != assignment;
        assignment = next;
        report.objective.push(objective);
        report.iterations += 1;
        if !changed {
            report.converged = true;
            break;
        }
        centroids = update(vectors, &assignment, &dists, c, v, &centroids);
    }
    if report.iterations == 0 {
        // max_iters == 0: seeding only
        let (_, dists) = assign(vectors, &centroids, v);
        report.objective.push(dists.iter().sum());
    }
    (Codebook { vector_len: v, centroids }, report)
}

fn seed_plus_plus(vectors: &Matrix, c: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (n, v) = vectors.shape();
    let mut centroids = Vec::with_capacity(c * v);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(vectors.row(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_l2(vectors.row(i), vectors.row(first))).collect();
    while centroids.len() < c * v {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just above the final sum
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every input is already a centroid; duplicates stay unused
            first
        };
        let row = vectors.row(pick);
        centroids.extend_from_slice(row);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_l2(vectors.row(i), row));
        }
    }
    centroids
}

fn assign(vectors: &Matrix, centroids: &[f32], v: usize) -> (Vec<usize>, Vec<f64>) {
    (0..vectors.rows())
        .into_par_iter()
        .map(|i| {
            let x = vectors.row(i);
            let mut best = (0, f64::INFINITY);
            for (k, cen) in centroids.chunks_exact(v).enumerate() {
                let d = sq_l2(x, cen);
                if d < best.1 {
                    best = (k, d);
                }
            }
            best
        })
        .unzip()
}

fn update(
    vectors: &Matrix,
    assignment: &[usize],
    dists: &[f64],
    c: usize,
    v: usize,
    previous: &[f32],
) -> Vec<f32> {
    let mut sums = vec![0f64; c * v];
    let mut counts = vec![0usize; c];
    // fixed ascending order so results do not depend on thread count
    for (i, &k) in assignment.iter().enumerate() {
        counts[k] += 1;
        for (s, &x) in sums[k * v..(k + 1) * v].iter_mut().zip(vectors.row(i)) {
            *s += x as f64;
        }
    }
    let mut out = previous.to_vec();
    for k in 0..c {
        if counts[k] > 0 {
            for j in 0..v {
                out[k * v + j] = (sums[k * v + j] / counts[k] as f64) as f32;
            }
        }
    }
    // empty clusters take the points farthest from their current centroid
    let mut spare: Vec<f64> = dists.to_vec();
    for k in (0..c).filter(|&k| counts[k] == 0) {
        let far = spare
            .iter()
            .enumerate()
            .fold((0, -1.0), |best, (i, &d)| if d > best.1 { (i, d) } else { best })
            .0;
        if spare[far] <= 0.0 {
            break;
        }
        out[k * v..(k + 1) * v].copy_from_slice(vectors.row(far));
        spare[far] = 0.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[[f32; 2]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_centroid_is_mean() {
        let cb = train_codebook(&m(&[[1.0, 3.0], [2.0, 3.0], [3.0, 3.0]]), 1, 10, 0).unwrap();
        assert_eq!(cb.centroid(0), &[2.0, 3.0]);
    }

    #[test]
    fn c_equal_to_distinct_count_is_exact() {
        let data = m(&[[6.0, 2.0], [4.0, 5.0]]);
        for seed in 0..8 {
            let cb = train_codebook(&data, 2, 10, seed).unwrap();
            let mut rows: Vec<Vec<f32>> = cb.iter().map(<[f32]>::to_vec).collect();
            rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert_eq!(rows, vec![vec![4.0, 5.0], vec![6.0, 2.0]]);
        }
    }

    #[test]
    fn more_centroids_than_points_still_covers_every_point() {
        let data = m(&[[0.1, 0.2], [0.1, 0.2], [0.3, -0.7], [5.0, 5.0]]);
        let cb = train_codebook(&data, 8, 10, 3).unwrap();
        for i in 0..data.rows() {
            let k = cb.nearest(data.row(i));
            assert_eq!(cb.centroid(k), data.row(i));
        }
    }

    #[test]
    fn errors() {
        assert!(matches!(train_codebook(&Matrix::zeros(0, 2), 2, 5, 0), Err(Error::NoVectors)));
        let nan = m(&[[f32::NAN, 0.0]]);
        assert!(matches!(train_codebook(&nan, 1, 5, 0), Err(Error::NonFinite)));
        let cb = Codebook::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(nearest_centroid(&[0.0], &cb), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn chebyshev_search_from_figure() {
        let cb = Codebook::from_rows(&[vec![6.0, 2.0], vec![4.0, 5.0]]).unwrap();
        assert_eq!(nearest_centroid(&[6.0, 3.0], &cb).unwrap(), 0);
        assert_eq!(nearest_centroid(&[4.0, 5.0], &cb).unwrap(), 1);
    }

    #[test]
    fn chebyshev_tie_takes_smallest_index() {
        let cb = Codebook::from_rows(&[
            vec![10.0, 10.0],
            vec![1.0, 0.0],
            vec![-10.0, 10.0],
            vec![-1.0, 0.0],
        ])
        .unwrap();
        assert_eq!(nearest_centroid(&[0.0, 0.0], &cb).unwrap(), 1);
    }

    #[test]
    fn deterministic_for_seed() {
        let data = Matrix::from_fn(200, 2, |r, c| ((r * 7 + c * 13) % 17) as f32 * 0.37);
        let a = train_codebook(&data, 5, 20, 11).unwrap();
        let b = train_codebook(&data, 5, 20, 11).unwrap();
        assert_eq!(a, b);
    }
}
