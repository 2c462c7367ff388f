//! Sample-quality metrics: kernel two-sample distance, 1D transport
//! distance, and moment matching against a known mixture.

use crate::error::{MfError, Result};
use crate::oracle::GmmSpec;
use crate::tensor::Tensor;

/// RBF kernel bandwidth policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    /// Use σ directly.
    Fixed(f64),
    /// Median pairwise distance of the pooled samples.
    Median,
}

fn check_cloud(name: &'static str, pts: &[Tensor], dim: usize) -> Result<()> {
    if pts.len() < 2 {
        return Err(MfError::DegenerateInput {
            what: name,
            reason: format!("need at least 2 samples, got {}", pts.len()),
        });
    }
    for p in pts {
        if p.rank() != 1 || p.len() != dim {
            return Err(MfError::ShapeMismatch {
                op: "mmd sample",
                lhs: p.shape().to_vec(),
                rhs: vec![dim],
            });
        }
    }
    Ok(())
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

fn median_pairwise_distance(pooled: &[&Tensor]) -> Result<f64> {
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let l = dists.len();
    let median = if l % 2 == 1 {
        dists[l / 2]
    } else {
        0.5 * (dists[l / 2 - 1] + dists[l / 2])
    };
    if median == 0.0 {
        return Err(MfError::DegenerateInput {
            what: "mmd bandwidth",
            reason: "median pairwise distance is zero".into(),
        });
    }
    Ok(median)
}

/// Unbiased squared maximum mean discrepancy under the RBF kernel
/// k(x, y) = exp(−‖x−y‖²/(2σ²)).
///
/// With equal sample counts the paired-exclusion estimator is used, whose
/// per-pair grouping (k(x_i,x_j) + k(y_i,y_j)) − (k(x_i,y_j) + k(x_j,y_i))
/// makes identical inputs evaluate to exactly zero. Unequal counts fall
/// back to the general unbiased estimator. Either can go slightly
/// negative; callers wanting a distance should clamp at zero before the
/// square root.
pub fn mmd_rbf(a: &[Tensor], b: &[Tensor], bandwidth: Bandwidth) -> Result<f64> {
    if a.is_empty() {
        return Err(MfError::DegenerateInput {
            what: "mmd first sample",
            reason: "empty".into(),
        });
    }
    let dim = a[0].len();
    check_cloud("mmd first sample", a, dim)?;
    check_cloud("mmd second sample", b, dim)?;

    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => {
            if !(s > 0.0 && s.is_finite()) {
                return Err(MfError::DomainError {
                    what: "mmd bandwidth",
                    value: s,
                    range: "(0, ∞)",
                });
            }
            s
        }
        Bandwidth::Median => {
            let pooled: Vec<&Tensor> = a.iter().chain(b.iter()).collect();
            median_pairwise_distance(&pooled)?
        }
    };
    let denom = 2.0 * sigma * sigma;
    let kernel = |x: &Tensor, y: &Tensor| (-sq_dist(x, y) / denom).exp();

    let (n, m) = (a.len(), b.len());
    if n == m {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let within = kernel(&a[i], &a[j]) + kernel(&b[i], &b[j]);
                let across = kernel(&a[i], &b[j]) + kernel(&a[j], &b[i]);
                acc += within - across;
            }
        }
        return Ok(acc / (n * (n - 1)) as f64);
    }

    let mut kaa = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                kaa += kernel(&a[i], &a[j]);
            }
        }
    }
    let mut kbb = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                kbb += kernel(&b[i], &b[j]);
            }
        }
    }
    let mut kab = 0.0;
    for x in a {
        for y in b {
            kab += kernel(x, y);
        }
    }
    Ok(kaa / (n * (n - 1)) as f64 + kbb / (m * (m - 1)) as f64 - 2.0 * kab / (n * m) as f64)
}

/// Empirical 1-Wasserstein distance between two equal-sized 1D samples:
/// sort both, average the absolute gaps.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(MfError::DegenerateInput {
            what: "wasserstein samples",
            reason: format!("need equal nonempty counts, got {} and {}", a.len(), b.len()),
        });
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let n = sa.len() as f64;
    Ok(sa
        .iter()
        .zip(&sb)
        .map(|(x, y)| (x - y).abs() / n)
        .sum())
}

/// Sample moments against the mixture's exact ones.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub sample_mean: Tensor,
    pub sample_cov: Tensor,
    /// ‖sample mean − mixture mean‖₂.
    pub mean_err: f64,
    /// Frobenius norm of the covariance gap.
    pub cov_err: f64,
}

/// Compares sample mean and covariance (n−1 normalization) to the
/// mixture's closed-form moments.
pub fn moment_report(samples: &[Tensor], gmm: &GmmSpec) -> Result<MomentReport> {
    let d = gmm.dim();
    check_cloud("moment samples", samples, d)?;
    let n = samples.len() as f64;
    let mut mean = Tensor::zeros(&[d]);
    for s in samples {
        mean.add_scaled(s, 1.0 / n)?;
    }
    let mut cov = Tensor::zeros(&[d, d]);
    for s in samples {
        let centered = s.sub(&mean)?;
        let outer = centered.outer(&centered)?;
        cov.add_scaled(&outer, 1.0 / (n - 1.0))?;
    }
    let mean_err = mean.sub(&gmm.mean())?.norm();
    let cov_err = cov.sub(&gmm.covariance())?.norm();
    Ok(MomentReport {
        sample_mean: mean,
        sample_cov: cov,
        mean_err,
        cov_err,
    })
}

/// Index of the component whose mean is nearest to `x` in Euclidean
/// distance; ties go to the lower index.
pub fn nearest_mean(gmm: &GmmSpec, x: &Tensor) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, c) in gmm.components().iter().enumerate() {
        let d = sq_dist(x, &c.mean);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}
