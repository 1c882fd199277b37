//! Principal component analysis of patch features via a Jacobi
//! eigendecomposition of the centered covariance.

use super::{MetricError, Result};

#[derive(Debug, Clone)]
pub struct Pca {
    /// `n_components x d`, orthonormal rows, by descending eigenvalue.
    pub components: Vec<f64>,
    /// Eigenvalues of the centered covariance, descending.
    pub explained_variance: Vec<f64>,
    /// `n x n_components` projections of the centered features.
    pub projected: Vec<f64>,
    pub mean: Vec<f64>,
    pub n_components: usize,
    pub dim: usize,
}

/// Cyclic Jacobi sweeps on a symmetric matrix (row-major, `d x d`).
/// Returns (eigenvalues, eigenvectors as columns of `v`).
fn jacobi_eigen(mut a: Vec<f64>, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += a[p * d + q] * a[p * d + q];
            }
        }
        if off <= 1e-30 {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p * d + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let aip = a[i * d + p];
                    let aiq = a[i * d + q];
                    a[i * d + p] = c * aip - s * aiq;
                    a[i * d + q] = s * aip + c * aiq;
                }
                for j in 0..d {
                    let apj = a[p * d + j];
                    let aqj = a[q * d + j];
                    a[p * d + j] = c * apj - s * aqj;
                    a[q * d + j] = s * apj + c * aqj;
                }
                for i in 0..d {
                    let vip = v[i * d + p];
                    let viq = v[i * d + q];
                    v[i * d + p] = c * vip - s * viq;
                    v[i * d + q] = s * vip + c * viq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    (eigenvalues, v)
}

/// Project `n x d` features onto their top principal components.
/// Components are orthonormal eigenvectors of the centered covariance
/// ordered by descending eigenvalue; a degenerate covariance simply yields
/// trailing zero eigenvalues.
pub fn pca_project(features: &[f64], n: usize, d: usize, n_components: usize) -> Result<Pca> {
    if features.len() != n * d {
        return Err(MetricError::Invalid(format!(
            "features length {} does not match {n}x{d}",
            features.len()
        )));
    }
    if n_components > d.min(n) {
        return Err(MetricError::Invalid(format!(
            "{n_components} components exceed min({n}, {d})"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in features.chunks(d) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for row in features.chunks(d) {
        for i in 0..d {
            let ci = row[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += ci * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n as f64;
            cov[j * d + i] = cov[i * d + j];
        }
    }

    let (eigenvalues, vectors) = jacobi_eigen(cov, d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());

    let mut components = Vec::with_capacity(n_components * d);
    let mut explained = Vec::with_capacity(n_components);
    for &c in order.iter().take(n_components) {
        explained.push(eigenvalues[c].max(0.0));
        for i in 0..d {
            components.push(vectors[i * d + c]);
        }
    }

    let mut projected = Vec::with_capacity(n * n_components);
    for row in features.chunks(d) {
        for comp in components.chunks(d) {
            let mut dot = 0.0;
            for i in 0..d {
                dot += (row[i] - mean[i]) * comp[i];
            }
            projected.push(dot);
        }
    }
    Ok(Pca {
        components,
        explained_variance: explained,
        projected,
        mean,
        n_components,
        dim: d,
    })
}
