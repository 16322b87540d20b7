//! Lloyd's k-means with k-means++ seeding.
//!
//! Used to pick representative real samples per class in feature space.
//! Runs a handful of independent seedings and keeps the lowest-inertia
//! result, which makes the small desk-scale instances this crate clusters
//! reliably land on the global optimum.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::Tensor;

/// Independent seeding restarts per call; best inertia wins.
const RESTARTS: usize = 4;

#[derive(Debug, Clone)]
pub struct KmeansResult {
    /// `[k, d]` centroid matrix.
    pub centroids: Tensor,
    /// Cluster index per input row.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Clusters the rows of `points` (`[n, d]`) into `k` groups.
pub fn kmeans(points: &Tensor, k: usize, seed: u64, max_iters: usize) -> Result<KmeansResult> {
    let shape = points.shape();
    if shape.len() != 2 {
        return Err(Error::shape("kmeans", format!("points must be [n, d], got {shape:?}")));
    }
    let (n, d) = (shape[0], shape[1]);
    if k == 0 {
        return Err(Error::InvalidConfig("kmeans needs k >= 1".into()));
    }
    if n < k {
        return Err(Error::InvalidConfig(format!("kmeans needs at least k={k} points, got {n}")));
    }
    let rows: Vec<&[f64]> = points.data().chunks(d).collect();

    let mut rng = substream(seed, "kmeans");
    let mut best: Option<KmeansResult> = None;
    for _ in 0..RESTARTS {
        let result = lloyd(&rows, d, k, max_iters, &mut rng);
        if best.as_ref().is_none_or(|b| result.inertia < b.inertia) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart runs"))
}

fn lloyd(rows: &[&[f64]], d: usize, k: usize, max_iters: usize, rng: &mut impl Rng) -> KmeansResult {
    let n = rows.len();
    let mut centroids = seed_plus_plus(rows, d, k, rng);
    let mut assignments = vec![usize::MAX; n];

    for _ in 0..max_iters {
        let next = assign(rows, &centroids, k);
        let changed = next != assignments;
        assignments = next;

        // Means per cluster.
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (row, &c) in rows.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(*row) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (dst, s) in centroids[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..]) {
                    *dst = s / counts[c] as f64;
                }
            }
        }

        // Empty-cluster repair: reseed from the point currently farthest
        // from its own centroid (each repair takes a distinct point).
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| !taken[i])
                .max_by(|&a, &b| {
                    let da = sq_dist(rows[a], &centroids[assignments[a] * d..][..d]);
                    let db = sq_dist(rows[b], &centroids[assignments[b] * d..][..d]);
                    da.partial_cmp(&db).expect("distances are finite")
                })
                .expect("n >= k guarantees a free point");
            taken[far] = true;
            centroids[c * d..(c + 1) * d].copy_from_slice(rows[far]);
        }

        if !changed {
            break;
        }
    }

    assignments = assign(rows, &centroids, k);
    let inertia = rows
        .iter()
        .zip(&assignments)
        .map(|(row, &c)| sq_dist(row, &centroids[c * d..(c + 1) * d]))
        .sum();
    KmeansResult {
        centroids: Tensor::new(vec![k, d], centroids).expect("k*d elements"),
        assignments,
        inertia,
    }
}

fn assign(rows: &[&[f64]], centroids: &[f64], k: usize) -> Vec<usize> {
    let d = centroids.len() / k;
    rows.iter()
        .map(|row| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(row, &centroids[c * d..(c + 1) * d]);
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// k-means++ seeding: first centroid uniform, then proportional to the
/// squared distance from the nearest chosen centroid.
fn seed_plus_plus(rows: &[&[f64]], d: usize, k: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = rows.len();
    let mut centroids = Vec::with_capacity(k * d);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(rows[first]);

    let mut dist: Vec<f64> = rows.iter().map(|r| sq_dist(r, rows[first])).collect();
    for _ in 1..k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in dist.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with chosen centroids.
            rng.gen_range(0..n)
        };
        let row = rows[pick];
        centroids.extend_from_slice(row);
        for (dst, r) in dist.iter_mut().zip(rows) {
            *dst = dst.min(sq_dist(r, row));
        }
    }
    centroids
}
