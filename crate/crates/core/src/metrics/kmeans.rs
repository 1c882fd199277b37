//! Per-image k-means clustering of patch features (Lloyd iterations with
//! k-means++ style seeding).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{MetricError, Result, Segmentation};

const MAX_ITERATIONS: usize = 100;

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm; returns per-point assignments and the objective
/// (sum of squared distances) after each iteration.
pub fn kmeans_lloyd(
    features: &[f64],
    n: usize,
    d: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if k == 0 || k > n {
        return Err(MetricError::Invalid(format!("k = {k} out of range for {n} points")));
    }
    if features.len() != n * d {
        return Err(MetricError::Invalid(format!(
            "features length {} does not match {n}x{d}",
            features.len()
        )));
    }
    let point = |i: usize| &features[i * d..(i + 1) * d];

    // k-means++ seeding: first centroid uniform, the rest proportional to
    // the squared distance to the nearest chosen centroid.
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(point(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = (0..n).map(|i| dist_sq(point(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.random_range(0..n)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        centroids.push(point(next).to_vec());
        for i in 0..n {
            d2[i] = d2[i].min(dist_sq(point(i), centroids.last().unwrap()));
        }
    }

    let mut assignment = vec![0usize; n];
    let mut objective_trace = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        // Assign points to the nearest centroid.
        let mut changed = false;
        let mut objective = 0.0;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = dist_sq(point(i), &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let dd = dist_sq(point(i), centroid);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            objective += best_d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        objective_trace.push(objective);
        if !changed && objective_trace.len() > 1 {
            break;
        }
        // Recompute centroids; empty clusters keep their previous position.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for (s, &v) in sums[assignment[i]].iter_mut().zip(point(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for (j, s) in sums[c].iter().enumerate() {
                    centroids[c][j] = s / counts[c] as f64;
                }
            }
        }
    }
    Ok((assignment, objective_trace))
}

/// Cluster `n x d` patch features into `k` groups and return them as a
/// patch-grid segmentation (labels `1..=k`; nothing is background).
pub fn kmeans_segment(
    features: &[f64],
    n: usize,
    d: usize,
    k: usize,
    grid: (usize, usize),
    rng: &mut ChaCha8Rng,
) -> Result<Segmentation> {
    if grid.0 * grid.1 != n {
        return Err(MetricError::Invalid(format!(
            "grid {grid:?} does not cover {n} points"
        )));
    }
    let (assignment, _) = kmeans_lloyd(features, n, d, k, rng)?;
    Segmentation::new(
        grid.1,
        grid.0,
        assignment.iter().map(|&a| a as u32 + 1).collect(),
    )
}
