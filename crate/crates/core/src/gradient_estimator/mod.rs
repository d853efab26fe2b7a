//! Gradient of the value function in a direction `h`.
//!
//! Three estimators share one output type:
//!
//! * [`bel_gradient`]: the Bismut–Elworthy–Li representation
//!
//!   ```text
//!   grad v(t, x) h = E[phi(X_T) U_T] - E int_t^T psi(s, X_s, Y_s, z_s) U_s ds
//!   ```
//!
//!   with the weights of [`crate::malliavin_weights`], needing no derivative of
//!   `phi` or `psi`;
//! * [`fd_gradient`]: central differences with common random numbers;
//! * [`variational_gradient`]: the differentiated flow, for smooth data only.
//!
//! The time integral of the weight representation is taken on graded nodes
//! `s = t + (T - t) w^{beta/(beta-1)}`, uniform in `w`, which absorbs the
//! `(s - t)^{-1/beta}` growth of the weight near `t`.

mod fd;
mod scaling;
#[cfg(test)]
mod tests;

pub use fd::{fd_gradient, variational_gradient, FdConfig};
pub use scaling::{gradient_scaling_experiment, GradientScalingReport, GradientScalingRow};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bsde_engine::{nonlocal_table, ValueFunction};
use crate::error::{domain, Error, Result};
use crate::forward_flow::simulate_path_observed;
use crate::levy_model::StableLikeMeasure;
use crate::malliavin_weights::{cutoff_for, path_geometry, schedule_from_geometry, EpsSchedule};
use crate::models::ModelCoefficients;
use crate::rng::{tags, StreamKey};
use crate::stats::{par_indexed, Estimate};
use crate::Vector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bel,
    Fd,
    Variational,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Bel => "bel",
            Method::Fd => "fd",
            Method::Variational => "variational",
        }
    }
}

/// What to do with a path whose terminal weight has `G = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoSmallJumpsPolicy {
    /// Redraw the path, at most for `max_resample_fraction` of the paths;
    /// beyond that budget the path is dropped.
    Resample,
    /// Drop the path and average over the others.
    DropAndReweight,
}

/// How the simulated truncation radius follows the cutoff scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Truncation {
    /// Simulate with the measure as given.
    Model,
    /// `delta0 = max(min(delta0, epsilon_min / ratio), floor)`.
    Coupled { ratio: f64, floor: f64 },
}

impl Truncation {
    pub fn radius(&self, m: &StableLikeMeasure, epsilon_min: f64) -> f64 {
        match *self {
            Truncation::Model => m.truncation_radius,
            Truncation::Coupled { ratio, floor } => m.truncation_radius.min(epsilon_min / ratio).max(floor.min(m.truncation_radius)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BelConfig {
    pub schedule: EpsSchedule,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Nodes of the graded time quadrature.
    pub time_nodes: usize,
    pub policy: NoSmallJumpsPolicy,
    pub max_resample_fraction: f64,
    pub truncation: Truncation,
    /// Use `phi(X_T) - phi(x)` in the terminal term; `E[U_T] = 0`, so the
    /// mean is unchanged and the variance drops.
    pub centered: bool,
}

impl Default for BelConfig {
    fn default() -> Self {
        Self {
            schedule: EpsSchedule::FixedHorizon,
            n_paths: 10_000,
            n_steps: 4,
            time_nodes: 16,
            policy: NoSmallJumpsPolicy::Resample,
            max_resample_fraction: 1e-3,
            truncation: Truncation::Coupled { ratio: 30.0, floor: 5e-3 },
            centered: true,
        }
    }
}

const MAX_ATTEMPTS: u64 = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub method: Method,
    pub t: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
    /// Paths entering the average.
    pub n_paths: usize,
    pub schedule: String,
    /// Paths whose first draw had no small jumps in the terminal window.
    pub no_small_jumps_fraction: f64,
    pub resampled: usize,
    pub dropped: usize,
    /// Interior quadrature nodes whose weight was undefined (counted as 0).
    pub interior_zero_fraction: f64,
    /// Truncation radius the paths were simulated with.
    pub truncation_radius: f64,
}

impl GradientEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { mean: self.value, stderr: self.stderr, n: self.n_paths }
    }

    fn exact<const D: usize>(method: Method, t: f64, x: &Vector<D>, h: &Vector<D>, value: f64, radius: f64) -> Self {
        Self {
            method,
            t,
            x: x.iter().copied().collect(),
            h: h.iter().copied().collect(),
            value,
            stderr: 0.0,
            n_paths: 0,
            schedule: String::new(),
            no_small_jumps_fraction: 0.0,
            resampled: 0,
            dropped: 0,
            interior_zero_fraction: 0.0,
            truncation_radius: radius,
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(";")
}

pub fn write_gradient_csv<W: Write>(rows: &[GradientEstimate], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "t", "x", "h", "value", "stderr", "n_paths", "schedule", "nosmalljumps_fraction"])?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            format!("{}", r.t),
            join(&r.x),
            join(&r.h),
            format!("{:.12e}", r.value),
            format!("{:.6e}", r.stderr),
            r.n_paths.to_string(),
            r.schedule.clone(),
            format!("{}", r.no_small_jumps_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Graded nodes on `(t, horizon)` and their quadrature weights.
pub fn graded_nodes(beta: f64, t: f64, horizon: f64, k: usize) -> Vec<(f64, f64)> {
    let q = if beta > 1.0 { beta / (beta - 1.0) } else { 1.0 };
    let span = horizon - t;
    (0..k)
        .map(|i| {
            let w = (i as f64 + 0.5) / k as f64;
            (t + span * w.powf(q), span * q * w.powf(q - 1.0) / k as f64)
        })
        .collect()
}

pub(crate) fn check_v<const D: usize>(c: &ModelCoefficients<D>, v: Option<&ValueFunction<D>>, t: f64, horizon: f64) -> Result<()> {
    let needs = c.driver.depends_on_y() || c.driver.depends_on_z();
    match v {
        None if needs => domain("the driver depends on (y, z): a solved value function is required"),
        Some(v) if v.t_min() > t || (v.horizon() - horizon).abs() > 1e-12 => {
            Err(Error::Interpolation { time: t, lo: v.t_min(), hi: v.horizon() })
        }
        _ => Ok(()),
    }
}

/// `(y, z)` along a path, from the solved value function.
pub(crate) struct Backward<'a, const D: usize> {
    v: Option<&'a ValueFunction<D>>,
    z: Option<ValueFunction<D>>,
}

impl<'a, const D: usize> Backward<'a, D> {
    pub(crate) fn new(c: &ModelCoefficients<D>, m: &StableLikeMeasure, v: Option<&'a ValueFunction<D>>) -> Result<Self> {
        let z = match v {
            Some(v) if c.driver.depends_on_z() => Some(nonlocal_table(v, c, m)?),
            _ => None,
        };
        Ok(Self { v, z })
    }

    pub(crate) fn y(&self, s: f64, x: &Vector<D>) -> Result<f64> {
        self.v.map_or(Ok(0.0), |v| v.eval(s, x))
    }

    pub(crate) fn z(&self, s: f64, x: &Vector<D>) -> Result<f64> {
        self.z.as_ref().map_or(Ok(0.0), |z| z.eval(s, x))
    }

    pub(crate) fn z_gradient(&self, s: f64, x: &Vector<D>) -> Result<Vector<D>> {
        self.z.as_ref().map_or(Ok(Vector::<D>::zeros()), |z| z.gradient(s, x))
    }
}

enum Draw {
    Sample { value: f64, weight: f64, interior_zeros: usize },
    NoSmallJumps,
    Invalid,
}

/// Per-path samples of the weight representation, after the G = 0 policy.
pub(crate) struct BelSamples {
    pub samples: Vec<f64>,
    /// `|U_T|` of the kept paths.
    pub weights: Vec<f64>,
    pub first_failures: usize,
    pub resampled: usize,
    pub dropped: usize,
    pub interior_zero_fraction: f64,
    pub truncation_radius: f64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bel_samples<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    v: Option<&ValueFunction<D>>,
    t: f64,
    x: Vector<D>,
    h: &Vector<D>,
    horizon: f64,
    cfg: &BelConfig,
    key: StreamKey,
) -> Result<BelSamples> {
    if !(horizon > t) {
        return domain(format!("need t < T, got t={t}, T={horizon}"));
    }
    if cfg.n_paths == 0 || cfg.time_nodes == 0 {
        return domain("need at least one path and one time node");
    }
    check_v(c, v, t, horizon)?;
    let zero = c.driver.is_zero();
    let quad = if zero { Vec::new() } else { graded_nodes(m.beta, t, horizon, cfg.time_nodes) };
    let mut nodes: Vec<f64> = quad.iter().map(|q| q.0).collect();
    nodes.push(horizon);
    let eps: Vec<f64> = nodes.iter().map(|s| cfg.schedule.epsilon(m.beta, t, *s, horizon)).collect();
    let eps_min = eps.iter().cloned().fold(f64::INFINITY, f64::min);
    let eps_max = eps.iter().cloned().fold(0.0, f64::max);
    let radius = cfg.truncation.radius(m, eps_min);
    let m_sim = m.with_truncation(radius);
    let max_radius = cutoff_for(&m_sim, eps_max)?.support_radius();
    let backward = Backward::new(c, m, v)?;
    let phi_x = if cfg.centered { c.terminal.value(&x) } else { 0.0 };
    let forward = c.forward.as_ref();
    let base = key.child(tags::GRADIENT);

    let draw = |i: usize, attempt: u64| -> Result<Draw> {
        let path = simulate_path_observed(&m_sim, forward, t, x, horizon, cfg.n_steps, &nodes, base.child(i as u64).child(attempt))?;
        if !path.valid {
            return Ok(Draw::Invalid);
        }
        let geometry = path_geometry(&path, &m_sim, forward, h, t, horizon, max_radius)?;
        let us = schedule_from_geometry(&geometry, &m_sim, t, horizon, &nodes, cfg.schedule)?;
        let u_t = match us.last().expect("terminal node") {
            Ok(u) => *u,
            Err(_) => return Ok(Draw::NoSmallJumps),
        };
        let mut integral = 0.0;
        let mut interior_zeros = 0;
        for ((s, w), u) in quad.iter().zip(&us) {
            match u {
                Ok(u) => {
                    let xs = path.state_at(*s);
                    let psi = c.driver.value(*s, &xs, backward.y(*s, &xs)?, backward.z(*s, &xs)?);
                    integral += w * psi * u;
                }
                Err(_) => interior_zeros += 1,
            }
        }
        let value = (c.terminal.value(&path.terminal_state()) - phi_x) * u_t - integral;
        Ok(Draw::Sample { value, weight: u_t.abs(), interior_zeros })
    };

    let attempts = match cfg.policy {
        NoSmallJumpsPolicy::Resample => MAX_ATTEMPTS,
        NoSmallJumpsPolicy::DropAndReweight => 1,
    };
    let draws = par_indexed(cfg.n_paths, |i| -> Result<(u64, Draw)> {
        for a in 0..attempts {
            match draw(i, a)? {
                Draw::NoSmallJumps => continue,
                d => return Ok((a, d)),
            }
        }
        Ok((attempts, Draw::NoSmallJumps))
    });

    // the resampling budget is spent in path order, so results do not depend
    // on scheduling
    let budget = (cfg.max_resample_fraction * cfg.n_paths as f64).ceil() as usize;
    let mut out = BelSamples {
        samples: Vec::with_capacity(cfg.n_paths),
        weights: Vec::with_capacity(cfg.n_paths),
        first_failures: 0,
        resampled: 0,
        dropped: 0,
        interior_zero_fraction: 0.0,
        truncation_radius: radius,
    };
    let mut interior = 0usize;
    for d in draws {
        let (a, d) = d?;
        if a > 0 {
            out.first_failures += 1;
        }
        match d {
            Draw::Sample { value, weight, interior_zeros } if a == 0 || out.resampled < budget => {
                if a > 0 {
                    out.resampled += 1;
                }
                out.samples.push(value);
                out.weights.push(weight);
                interior += interior_zeros;
            }
            _ => out.dropped += 1,
        }
    }
    if out.samples.is_empty() {
        return Err(Error::NoSmallJumps { t, tau: horizon });
    }
    if !quad.is_empty() {
        out.interior_zero_fraction = interior as f64 / (quad.len() * out.samples.len()) as f64;
    }
    if out.dropped > 0 {
        log::warn!("gradient at t={t}: {} of {} paths dropped", out.dropped, cfg.n_paths);
    }
    Ok(out)
}

/// The weight estimator of `grad v(t, x) h`. `v` is the solved value function,
/// needed when the driver depends on `(y, z)`.
#[allow(clippy::too_many_arguments)]
pub fn bel_gradient<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    v: Option<&ValueFunction<D>>,
    t: f64,
    x: Vector<D>,
    h: Vector<D>,
    horizon: f64,
    cfg: &BelConfig,
    key: StreamKey,
) -> Result<GradientEstimate> {
    if h.iter().all(|c| *c == 0.0) {
        check_v(c, v, t, horizon)?;
        return Ok(GradientEstimate::exact(Method::Bel, t, &x, &h, 0.0, m.truncation_radius));
    }
    let s = bel_samples(c, m, v, t, x, &h, horizon, cfg, key)?;
    let est = Estimate::from_samples(&s.samples);
    Ok(GradientEstimate {
        value: est.mean,
        stderr: est.stderr,
        n_paths: est.n,
        schedule: cfg.schedule.tag(),
        no_small_jumps_fraction: s.first_failures as f64 / cfg.n_paths as f64,
        resampled: s.resampled,
        dropped: s.dropped,
        interior_zero_fraction: s.interior_zero_fraction,
        ..GradientEstimate::exact(Method::Bel, t, &x, &h, 0.0, s.truncation_radius)
    })
}
