//! Monte Carlo reductions.
//!
//! Per-path values are collected in path order and reduced sequentially, so
//! results are bit-identical whatever the size of the worker pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { mean, stderr: 0.0, n };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }

    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, n: 0 }
    }

    /// `|self - other|` in units of the combined standard error.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let se = self.stderr.hypot(other.stderr);
        let diff = (self.mean - other.mean).abs();
        if se == 0.0 {
            if diff <= 1e-12 * (1.0 + self.mean.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / se
        }
    }

    pub fn agrees_with(&self, other: &Estimate, sigmas: f64) -> bool {
        self.z_score(other) <= sigmas
    }
}

/// Evaluate `f` on `0..n` in parallel, returning results in index order.
pub fn par_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

pub fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    LineFit { slope, intercept: my - slope * mx }
}

/// Delete-one-group jackknife standard error. `statistic(g)` must evaluate the
/// statistic with batch `g` left out.
pub fn jackknife_stderr<F>(groups: usize, statistic: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let leave_out: Vec<f64> = (0..groups).map(statistic).collect();
    let g = groups as f64;
    let mean = leave_out.iter().sum::<f64>() / g;
    let var = leave_out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * (g - 1.0) / g;
    var.sqrt()
}

/// One-sample Kolmogorov–Smirnov test against U(0,1). Returns `(D, p)`.
pub fn ks_uniform(samples: &[f64]) -> (f64, f64) {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((x - lo).abs()).max((hi - x).abs());
    }
    let sn = n.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    (d, kolmogorov_q(lambda))
}

fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = 2.0 * (if k as i64 % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}
