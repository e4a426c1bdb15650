//! Exact t-SNE for 2-D embedding of feature snapshots.
//!
//! The classic dense O(n^2) algorithm: per-point Gaussian bandwidths found
//! by binary search to match a target perplexity, symmetrized affinities,
//! early exaggeration, and momentum gradient descent on the Student-t
//! low-dimensional similarities. Deterministic under the seed. Three or
//! fewer points skip t-SNE and fall back to the first two principal
//! directions.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Settings for [`embed_2d`].
#[derive(Debug, Clone)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig { perplexity: 30.0, iterations: 1000, seed: 0 }
    }
}

/// Outcome of an embedding run.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    /// True when the degenerate-input PCA fallback was used.
    pub pca_fallback: bool,
}

/// Embed `data` ([n, d] rows) into 2-D.
pub fn embed_2d(data: &Array2<f64>, cfg: &TsneConfig) -> Result<Embedding> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::Input("cannot embed an empty point set".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("embedding input contains non-finite values".into()));
    }
    if n <= 3 {
        return Ok(Embedding { points: pca_2d(data), pca_fallback: true });
    }

    // pairwise squared distances
    let mut d2 = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = data
                .row(i)
                .iter()
                .zip(data.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d2[[i, j]] = dist;
            d2[[j, i]] = dist;
        }
    }

    // perplexity cannot exceed what n-1 neighbors support
    let perplexity = cfg.perplexity.min(((n - 1) as f64) / 3.0).max(1.0);
    let target_entropy = perplexity.ln();

    // conditional affinities p_{j|i} via binary search on precision
    let mut p = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut beta = 1.0;
        let mut beta_min = f64::NEG_INFINITY;
        let mut beta_max = f64::INFINITY;
        for _ in 0..64 {
            let mut sum = 0.0;
            let mut dot = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = (-d2[[i, j]] * beta).exp();
                sum += e;
                dot += d2[[i, j]] * e;
            }
            let (entropy, ok) = if sum > 0.0 {
                (beta * dot / sum + sum.ln(), true)
            } else {
                (0.0, false)
            };
            let diff = if ok { entropy - target_entropy } else { -1.0 };
            if diff.abs() < 1e-7 {
                break;
            }
            if diff > 0.0 {
                beta_min = beta;
                beta = if beta_max.is_infinite() { beta * 2.0 } else { (beta + beta_max) / 2.0 };
            } else {
                beta_max = beta;
                beta = if beta_min.is_infinite() { beta / 2.0 } else { (beta + beta_min) / 2.0 };
            }
        }
        let mut sum = 0.0;
        for j in 0..n {
            if j != i {
                let e = (-d2[[i, j]] * beta).exp();
                p[[i, j]] = e;
                sum += e;
            }
        }
        if sum > 0.0 {
            for j in 0..n {
                p[[i, j]] /= sum;
            }
        }
    }

    // symmetrize and floor
    let mut pij = Array2::<f64>::zeros((n, n));
    let total = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            pij[[i, j]] = ((p[[i, j]] + p[[j, i]]) / total).max(1e-12);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a * 1e-4, b * 1e-4]
        })
        .collect();
    let mut vel = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let exaggeration_until = 250.min(cfg.iterations / 4);
    let lr = 200.0;
    let mut q = Array2::<f64>::zeros((n, n));
    for it in 0..cfg.iterations {
        let exaggeration = if it < exaggeration_until { 12.0 } else { 1.0 };
        let momentum = if it < 250.min(cfg.iterations / 2) { 0.5 } else { 0.8 };

        // Student-t similarities
        let mut qsum = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                q[[i, j]] = v;
                q[[j, i]] = v;
                qsum += 2.0 * v;
            }
        }
        let qsum = qsum.max(1e-12);

        for i in 0..n {
            let mut grad = [0.0f64; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let qv = q[[i, j]];
                let mult = (exaggeration * pij[[i, j]] - qv / qsum) * qv;
                grad[0] += 4.0 * mult * (y[i][0] - y[j][0]);
                grad[1] += 4.0 * mult * (y[i][1] - y[j][1]);
            }
            for k in 0..2 {
                gains[i][k] = if grad[k].signum() != vel[i][k].signum() {
                    (gains[i][k] + 0.2).min(50.0)
                } else {
                    (gains[i][k] * 0.8).max(0.01)
                };
                vel[i][k] = momentum * vel[i][k] - lr * gains[i][k] * grad[k];
            }
        }
        let mut mean = [0.0f64; 2];
        for i in 0..n {
            y[i][0] += vel[i][0];
            y[i][1] += vel[i][1];
            mean[0] += y[i][0];
            mean[1] += y[i][1];
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for pt in y.iter_mut() {
            pt[0] -= mean[0];
            pt[1] -= mean[1];
        }
    }
    Ok(Embedding { points: y, pca_fallback: false })
}

/// First two principal directions via power iteration with deflation.
fn pca_2d(data: &Array2<f64>) -> Vec<[f64; 2]> {
    let n = data.nrows();
    let d = data.ncols();
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let centered = Array2::from_shape_fn((n, d), |(i, j)| data[[i, j]] - mean[j]);
    if n == 1 {
        return vec![[0.0, 0.0]];
    }
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    let mut components: Vec<Vec<f64>> = Vec::new();
    let mut cov_work = cov.clone();
    for _ in 0..2.min(d) {
        let mut v: Vec<f64> = (0..d)
            .map(|i| ((i * 2654435761 + 1013904223) % 1000) as f64 / 1000.0 + 0.1)
            .collect();
        for _ in 0..200 {
            let mut w = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    w[i] += cov_work[[i, j]] * v[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for x in w.iter_mut() {
                *x /= norm;
            }
            v = w;
        }
        let lambda = {
            let mut w = vec![0.0; d];
            for i in 0..d {
                for j in 0..d {
                    w[i] += cov_work[[i, j]] * v[j];
                }
            }
            v.iter().zip(w.iter()).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..d {
            for j in 0..d {
                cov_work[[i, j]] -= lambda * v[i] * v[j];
            }
        }
        components.push(v);
    }
    (0..n)
        .map(|i| {
            let mut pt = [0.0f64; 2];
            for (k, comp) in components.iter().enumerate() {
                pt[k] = centered.row(i).iter().zip(comp.iter()).map(|(a, b)| a * b).sum();
            }
            pt
        })
        .collect()
}
