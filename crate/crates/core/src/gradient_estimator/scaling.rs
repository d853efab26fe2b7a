use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::levy_model::StableLikeMeasure;
use crate::models::ModelCoefficients;
use crate::rng::StreamKey;
use crate::stats::{jackknife_stderr, least_squares, Estimate};
use crate::Vector;

use super::{bel_samples, BelConfig};

const BATCHES: usize = 20;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientScalingRow {
    /// `T - t`.
    pub elapsed: f64,
    pub value: f64,
    pub stderr: f64,
    /// `E|U_T|`.
    pub weight_abs_mean: f64,
    pub weight_abs_stderr: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientScalingReport {
    pub beta: f64,
    pub rows: Vec<GradientScalingRow>,
    /// Log-log slope of `E|U_T|` against `T - t`.
    pub weight_slope: f64,
    pub weight_slope_stderr: f64,
    /// `C` with `E|U_T| <= C (T - t)^{-1/beta}` on the grid.
    pub weight_constant: f64,
    /// Every `|value|` is below its envelope up to three standard errors.
    pub within_envelope: bool,
}

impl GradientScalingReport {
    pub fn expected_slope(&self) -> f64 {
        -1.0 / self.beta
    }
}

fn batch_mean(values: &[f64], skip: Option<usize>) -> f64 {
    let batch = values.len().div_ceil(BATCHES);
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, v) in values.iter().enumerate() {
        if skip != Some(i / batch) {
            sum += v;
            n += 1;
        }
    }
    sum / n as f64
}

/// Weight estimates of `grad v(T - e, x) h` over the grid of elapsed times
/// `e`, for a terminal-only problem. `phi_oscillation` bounds
/// `|phi(y) - phi(x)|`; with the fitted weight constant it gives the envelope
/// `phi_oscillation C e^{-1/beta} (1 + |x|)^mu`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_scaling_experiment<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    x: Vector<D>,
    h: Vector<D>,
    horizon: f64,
    elapsed: &[f64],
    phi_oscillation: f64,
    mu: f64,
    cfg: &BelConfig,
    key: StreamKey,
) -> Result<GradientScalingReport> {
    if !c.driver.is_zero() {
        return Err(Error::Capability("the scaling experiment covers terminal-only problems".into()));
    }
    if elapsed.len() < 2 || elapsed.windows(2).any(|w| !(w[0] < w[1])) || !(elapsed[0] > 0.0) || elapsed[elapsed.len() - 1] > horizon {
        return domain("elapsed times must be increasing in (0, T]");
    }
    if cfg.n_paths < BATCHES {
        return domain(format!("need at least {BATCHES} paths"));
    }
    let mut per_row = Vec::with_capacity(elapsed.len());
    for (r, e) in elapsed.iter().enumerate() {
        let s = bel_samples(c, m, None, horizon - e, x, &h, horizon, cfg, key.child(r as u64))?;
        per_row.push(s);
    }
    let log_e: Vec<f64> = elapsed.iter().map(|e| e.ln()).collect();
    let slope = |skip: Option<usize>| {
        let ys: Vec<f64> = per_row.iter().map(|s| batch_mean(&s.weights, skip).ln()).collect();
        least_squares(&log_e, &ys).slope
    };
    let beta = m.beta;
    let weight_constant = per_row
        .iter()
        .zip(elapsed)
        .map(|(s, e)| batch_mean(&s.weights, None) * e.powf(1.0 / beta))
        .fold(0.0, f64::max);
    let growth = (1.0 + x.norm()).powf(mu);
    let rows: Vec<GradientScalingRow> = per_row
        .iter()
        .zip(elapsed)
        .map(|(s, e)| {
            let value = Estimate::from_samples(&s.samples);
            let weight = Estimate::from_samples(&s.weights);
            GradientScalingRow {
                elapsed: *e,
                value: value.mean,
                stderr: value.stderr,
                weight_abs_mean: weight.mean,
                weight_abs_stderr: weight.stderr,
                envelope: phi_oscillation * weight_constant * e.powf(-1.0 / beta) * growth,
            }
        })
        .collect();
    let within_envelope = rows.iter().all(|r| r.value.is_finite() && r.value.abs() <= r.envelope + 3.0 * r.stderr);
    Ok(GradientScalingReport {
        beta,
        weight_slope: slope(None),
        weight_slope_stderr: jackknife_stderr(BATCHES, |g| slope(Some(g))),
        weight_constant,
        within_envelope,
        rows,
    })
}
