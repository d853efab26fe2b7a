use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::forward_flow::simulate_path;
use crate::levy_model::StableLikeMeasure;
use crate::models::ForwardCoefficients;
use crate::rng::StreamKey;
use crate::stats::{jackknife_stderr, least_squares, par_indexed};
use crate::Vector;

use super::{cutoff_for, path_geometry};

const BATCHES: usize = 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingRow {
    pub elapsed: f64,
    pub epsilon: f64,
    /// `E[|U|^p]^{1/p}` per entry of `p_values`.
    pub moments: Vec<f64>,
    pub invalid_fraction: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightScalingReport {
    pub beta: f64,
    pub truncation_radius: f64,
    pub p_values: Vec<f64>,
    pub rows: Vec<ScalingRow>,
    /// Log-log slope against the elapsed time, per `p`.
    pub slopes: Vec<f64>,
    /// Jackknife standard errors of the slopes over path batches.
    pub slope_stderr: Vec<f64>,
}

impl WeightScalingReport {
    pub fn expected_slope(&self) -> f64 {
        -1.0 / self.beta
    }
}

fn moments_of(weights: &[Vec<Option<f64>>], col: usize, p: f64, skip: Option<usize>) -> (f64, f64) {
    let n = weights.len();
    let batch = n.div_ceil(BATCHES);
    let (mut sum, mut count, mut invalid) = (0.0, 0usize, 0usize);
    for (i, row) in weights.iter().enumerate() {
        if skip == Some(i / batch) {
            continue;
        }
        match row[col] {
            Some(u) => {
                sum += u.abs().powf(p);
                count += 1;
            }
            None => invalid += 1,
        }
    }
    ((sum / count as f64).powf(1.0 / p), invalid as f64 / (count + invalid) as f64)
}

/// Moments of `U_tau^h` with `epsilon = (tau - t)^{1/beta}` on the grid
/// `t + elapsed`. The same paths serve every grid point. The truncation
/// radius is lowered to `epsilon_min / 30` when needed.
#[allow(clippy::too_many_arguments)]
pub fn weight_moment_scaling<const D: usize>(
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    x: Vector<D>,
    h: &Vector<D>,
    p_values: &[f64],
    elapsed: &[f64],
    n_paths: usize,
    n_steps: usize,
    key: StreamKey,
) -> Result<WeightScalingReport> {
    if elapsed.len() < 2 || elapsed.windows(2).any(|w| !(w[0] < w[1])) || !(elapsed[0] > 0.0) {
        return domain("scaling grid must be positive and increasing");
    }
    if n_paths < BATCHES {
        return domain(format!("need at least {BATCHES} paths"));
    }
    let eps: Vec<f64> = elapsed.iter().map(|e| e.powf(1.0 / m.beta).min(1.0)).collect();
    let m = m.with_truncation(m.truncation_radius.min(eps[0] / 30.0));
    let zetas = eps.iter().map(|e| cutoff_for(&m, *e)).collect::<Result<Vec<_>>>()?;
    let max_radius = zetas.iter().map(|z| z.support_radius()).fold(0.0, f64::max);
    let horizon = t + elapsed[elapsed.len() - 1];
    let weights = par_indexed(n_paths, |i| -> Result<Vec<Option<f64>>> {
        let path = simulate_path(&m, forward, t, x, horizon, n_steps, key.child(i as u64))?;
        let geometry = path_geometry(&path, &m, forward, h, t, horizon, max_radius)?;
        Ok(elapsed
            .iter()
            .zip(&zetas)
            .map(|(e, z)| {
                let (mut a, mut g, mut b) = (0.0, 0.0, 0.0);
                for geo in geometry.iter().take_while(|geo| geo.time <= t + e) {
                    let terms = geo.terms(z);
                    a += terms.a;
                    g += terms.g;
                    b += terms.b;
                }
                (g > 0.0).then(|| a / g + b / (g * g))
            })
            .collect())
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let log_t: Vec<f64> = elapsed.iter().map(|e| e.ln()).collect();
    let fit = |p: f64, skip: Option<usize>| {
        let ys: Vec<f64> = (0..elapsed.len()).map(|c| moments_of(&weights, c, p, skip).0.ln()).collect();
        least_squares(&log_t, &ys).slope
    };
    let rows = (0..elapsed.len())
        .map(|c| ScalingRow {
            elapsed: elapsed[c],
            epsilon: eps[c],
            moments: p_values.iter().map(|p| moments_of(&weights, c, *p, None).0).collect(),
            invalid_fraction: moments_of(&weights, c, 1.0, None).1,
        })
        .collect();
    let slopes = p_values.iter().map(|p| fit(*p, None)).collect();
    let slope_stderr = p_values.iter().map(|p| jackknife_stderr(BATCHES, |g| fit(*p, Some(g)))).collect();
    Ok(WeightScalingReport {
        beta: m.beta,
        truncation_radius: m.truncation_radius,
        p_values: p_values.to_vec(),
        rows,
        slopes,
        slope_stderr,
    })
}
