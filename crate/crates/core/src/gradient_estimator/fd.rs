use serde::{Deserialize, Serialize};

use crate::bsde_engine::ValueFunction;
use crate::error::{domain, Error, Result};
use crate::forward_flow::{simulate_path_observed, uniform_mesh, with_start, PathRecord};
use crate::levy_model::StableLikeMeasure;
use crate::models::{ModelCoefficients, Smoothness};
use crate::rng::{tags, StreamKey};
use crate::stats::{par_indexed, Estimate};
use crate::Vector;

use super::{check_v, Backward, GradientEstimate, Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdConfig {
    /// Defaults to `1e-3 (1 + |x|)`.
    pub delta: Option<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    /// Trapezoid intervals for the driver integral.
    pub time_nodes: usize,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { delta: None, n_paths: 10_000, n_steps: 4, time_nodes: 16 }
    }
}

fn trapezoid(nodes: &[f64], values: impl Fn(usize) -> Result<f64>) -> Result<f64> {
    let mut sum = 0.0;
    let mut left = values(0)?;
    for k in 1..nodes.len() {
        let right = values(k)?;
        sum += 0.5 * (nodes[k] - nodes[k - 1]) * (left + right);
        left = right;
    }
    Ok(sum)
}

fn mild_value<const D: usize>(
    c: &ModelCoefficients<D>,
    backward: &Backward<'_, D>,
    path: &PathRecord<D>,
    nodes: &[f64],
) -> Result<f64> {
    let phi = c.terminal.value(&path.terminal_state());
    if c.driver.is_zero() {
        return Ok(phi);
    }
    let integral = trapezoid(nodes, |k| {
        let s = nodes[k];
        let xs = path.state_at(s);
        Ok(c.driver.value(s, &xs, backward.y(s, &xs)?, backward.z(s, &xs)?))
    })?;
    Ok(phi - integral)
}

fn check_common(t: f64, horizon: f64, n_paths: usize) -> Result<()> {
    if !(horizon > t) {
        return domain(format!("need t < T, got t={t}, T={horizon}"));
    }
    if n_paths == 0 {
        return domain("need at least one path");
    }
    Ok(())
}

fn from_samples<const D: usize>(
    method: Method,
    t: f64,
    x: &Vector<D>,
    h: &Vector<D>,
    m: &StableLikeMeasure,
    samples: Vec<Option<f64>>,
) -> Result<GradientEstimate> {
    let total = samples.len();
    let kept: Vec<f64> = samples.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::InvalidPath(format!("all {total} paths invalid")));
    }
    let est = Estimate::from_samples(&kept);
    Ok(GradientEstimate {
        value: est.mean,
        stderr: est.stderr,
        n_paths: est.n,
        dropped: total - est.n,
        ..GradientEstimate::exact(method, t, x, h, 0.0, m.truncation_radius)
    })
}

/// Central differences of the mild representation,
/// `(v(t, x + delta h) - v(t, x - delta h)) / (2 delta)`, with both sides on
/// the same jumps. With a solved `v` the driver integral uses it for `(y, z)`;
/// for a zero driver this is the difference of `E[phi(X_T)]`.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    v: Option<&ValueFunction<D>>,
    t: f64,
    x: Vector<D>,
    h: Vector<D>,
    horizon: f64,
    cfg: &FdConfig,
    key: StreamKey,
) -> Result<GradientEstimate> {
    check_common(t, horizon, cfg.n_paths)?;
    check_v(c, v, t, horizon)?;
    if h.iter().all(|c| *c == 0.0) {
        return Ok(GradientEstimate::exact(Method::Fd, t, &x, &h, 0.0, m.truncation_radius));
    }
    let delta = cfg.delta.unwrap_or(1e-3 * (1.0 + x.norm()));
    if !(delta > 0.0) {
        return domain("finite difference step must be positive");
    }
    let nodes = uniform_mesh(t, horizon, cfg.time_nodes);
    let backward = Backward::new(c, m, v)?;
    let forward = c.forward.as_ref();
    let base = key.child(tags::GRADIENT);
    let samples = par_indexed(cfg.n_paths, |i| -> Result<Option<f64>> {
        let up = simulate_path_observed(m, forward, t, x + h * delta, horizon, cfg.n_steps, &nodes, base.child(i as u64))?;
        let down = with_start(&up, forward, x - h * delta);
        if !(up.valid && down.valid) {
            return Ok(None);
        }
        Ok(Some((mild_value(c, &backward, &up, &nodes)? - mild_value(c, &backward, &down, &nodes)?) / (2.0 * delta)))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    from_samples(Method::Fd, t, &x, &h, m, samples)
}

/// The differentiated representation
///
/// ```text
/// grad v(t, x) h = E[ G_T grad phi(X_T) J_T h - int_t^T G_s (grad_x psi + d_z psi grad z) J_s h ds ]
/// ```
///
/// with `J` the Jacobian flow and `G_s = exp(-int_t^s d_y psi dr)`. Needs the
/// gradients of `phi` and `psi`.
#[allow(clippy::too_many_arguments)]
pub fn variational_gradient<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    v: Option<&ValueFunction<D>>,
    t: f64,
    x: Vector<D>,
    h: Vector<D>,
    horizon: f64,
    cfg: &FdConfig,
    key: StreamKey,
) -> Result<GradientEstimate> {
    if c.smoothness() != Smoothness::Differentiable {
        return Err(Error::Capability(
            "the variational estimator needs differentiable phi and psi; use the weight estimator".into(),
        ));
    }
    check_common(t, horizon, cfg.n_paths)?;
    check_v(c, v, t, horizon)?;
    if h.iter().all(|c| *c == 0.0) {
        return Ok(GradientEstimate::exact(Method::Variational, t, &x, &h, 0.0, m.truncation_radius));
    }
    let nodes = uniform_mesh(t, horizon, cfg.time_nodes);
    let backward = Backward::new(c, m, v)?;
    let forward = c.forward.as_ref();
    let base = key.child(tags::GRADIENT);
    let zero = c.driver.is_zero();
    let capability = || Error::Capability("driver or terminal gradient unavailable".into());
    let samples = par_indexed(cfg.n_paths, |i| -> Result<Option<f64>> {
        let path = simulate_path_observed(m, forward, t, x, horizon, cfg.n_steps, &nodes, base.child(i as u64))?;
        if !path.valid {
            return Ok(None);
        }
        let grad_phi = c.terminal.gradient(&path.terminal_state()).ok_or_else(capability)?;
        let terminal = grad_phi.dot(&(path.terminal_jacobian() * h));
        if zero {
            return Ok(Some(terminal));
        }
        // source term and d_y psi at every node
        let mut source = Vec::with_capacity(nodes.len());
        let mut rate = Vec::with_capacity(nodes.len());
        for &s in &nodes {
            let k = path.node_at(s);
            let xs = path.states[k];
            let (y, z) = (backward.y(s, &xs)?, backward.z(s, &xs)?);
            let (gx, gy, gz) = c.driver.gradient(s, &xs, y, z).ok_or_else(capability)?;
            let mut g = gx;
            if gz != 0.0 {
                g += backward.z_gradient(s, &xs)? * gz;
            }
            source.push(g.dot(&(path.jacobians[k] * h)));
            rate.push(gy);
        }
        let mut discount = vec![1.0; nodes.len()];
        for k in 1..nodes.len() {
            discount[k] = discount[k - 1] * (-0.5 * (nodes[k] - nodes[k - 1]) * (rate[k] + rate[k - 1])).exp();
        }
        let integral = trapezoid(&nodes, |k| Ok(discount[k] * source[k]))?;
        Ok(Some(discount[nodes.len() - 1] * terminal - integral))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    from_samples(Method::Variational, t, &x, &h, m, samples)
}
