use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::forward_flow::{simulate_path_observed, PathRecord};
use crate::levy_model::StableLikeMeasure;
use crate::models::ModelCoefficients;
use crate::rng::StreamKey;
use crate::stats::{par_indexed, Estimate};
use crate::{Matrix, Vector};

use super::{NonlocalRule, ValueFunction};

/// `Y = v(tau, X)` along a path at the slices of `v`, and the jump part
/// `Z(tau, u) = v(tau, X + sigma u) - v(tau, X)`.
#[derive(Clone, Debug)]
pub struct PathwiseYZ<'a, const D: usize> {
    pub v: &'a ValueFunction<D>,
    /// Increasing.
    pub times: Vec<f64>,
    pub states: Vec<Vector<D>>,
    pub sigmas: Vec<Matrix<D>>,
    pub y: Vec<f64>,
    /// Some state left the grid box; the linear extension was used.
    pub exited: bool,
}

impl<const D: usize> PathwiseYZ<'_, D> {
    pub fn z(&self, k: usize, u: &Vector<D>) -> f64 {
        let s = self.times[k];
        self.v.eval(s, &(self.states[k] + self.sigmas[k] * u)).unwrap_or(f64::NAN) - self.y[k]
    }

    /// `sigma^T grad v` at node `k`; the small-mark limit of `Z / |u|`.
    fn small_mark_slope(&self, k: usize) -> Vector<D> {
        let g = self.v.gradient(self.times[k], &self.states[k]).unwrap_or_else(|_| Vector::<D>::zeros());
        self.sigmas[k].transpose() * g
    }
}

/// `(Y, Z)` along `path` at the slices of `v` inside the path's span.
pub fn pathwise_yz<'a, const D: usize>(
    path: &PathRecord<D>,
    v: &'a ValueFunction<D>,
    c: &ModelCoefficients<D>,
) -> Result<PathwiseYZ<'a, D>> {
    let tol = 1e-12 * (1.0 + path.horizon.abs());
    let mut times: Vec<f64> = v.times.iter().copied().filter(|s| *s >= path.t - tol && *s <= path.horizon + tol).collect();
    times.reverse();
    if times.is_empty() {
        return domain("path does not overlap the value function's slices");
    }
    let states: Vec<Vector<D>> = times.iter().map(|s| path.state_at(*s)).collect();
    let sigmas = times.iter().zip(&states).map(|(s, x)| c.forward.sigma(*s, x)).collect();
    let y = times.iter().zip(&states).map(|(s, x)| v.eval(*s, x)).collect::<Result<Vec<_>>>()?;
    let exited = states.iter().any(|x| !v.grid.contains(x));
    Ok(PathwiseYZ { v, times, states, sigmas, y, exited })
}

struct SquareRule<const D: usize> {
    inner_mass: f64,
    nodes: Vec<(Vector<D>, f64)>,
}

impl<const D: usize> SquareRule<D> {
    fn new(m: &StableLikeMeasure) -> Result<Self> {
        let split = m.split_radius();
        Ok(Self {
            inner_mass: m.inner_power_mass(2.0, split) / D as f64,
            nodes: m.shell_rule(split, 1.0)?.iter_fixed::<D>().collect(),
        })
    }

    /// `int |Z(k, u)|^2 nu(du)`.
    fn z_square(&self, yz: &PathwiseYZ<'_, D>, k: usize) -> f64 {
        let inner = yz.small_mark_slope(k).norm_squared() * self.inner_mass;
        inner + self.nodes.iter().map(|(u, w)| w * yz.z(k, u).powi(2)).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormEstimates {
    pub p: f64,
    pub rho: f64,
    pub s_norm: f64,
    pub m_norm: f64,
    pub weighted_s_norm: f64,
    pub weighted_m_norm: f64,
    pub n_paths: usize,
}

/// `||Y||_{S^p}`, `||Z||_{M^p}` and their `e^{rho (tau - t)}`-weighted forms.
pub fn norm_estimators<const D: usize>(
    samples: &[PathwiseYZ<'_, D>],
    _c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    p: f64,
    rho: f64,
) -> Result<NormEstimates> {
    if samples.is_empty() || !(p >= 1.0) || !(rho >= 0.0) {
        return domain("norms need paths, p >= 1 and rho >= 0");
    }
    let rule = SquareRule::new(m)?;
    let per_path = par_indexed(samples.len(), |i| {
        let yz = &samples[i];
        let t = yz.times[0];
        let weight = |k: usize| (rho * (yz.times[k] - t)).exp();
        let sup = yz.y.iter().map(|y| y.abs()).fold(0.0, f64::max);
        let wsup = (0..yz.y.len()).map(|k| weight(k) * yz.y[k] * yz.y[k]).fold(0.0, f64::max);
        let zz: Vec<f64> = (0..yz.times.len()).map(|k| rule.z_square(yz, k)).collect();
        let (mut m2, mut wm2) = (0.0, 0.0);
        for k in 1..yz.times.len() {
            let dt = yz.times[k] - yz.times[k - 1];
            m2 += 0.5 * dt * (zz[k] + zz[k - 1]);
            wm2 += 0.5 * dt * (weight(k) * zz[k] + weight(k - 1) * zz[k - 1]);
        }
        (sup.powf(p), m2.powf(p / 2.0), wsup.powf(p / 2.0), wm2.powf(p / 2.0))
    });
    let n = samples.len() as f64;
    let mean = |f: fn(&(f64, f64, f64, f64)) -> f64| (per_path.iter().map(f).sum::<f64>() / n).powf(1.0 / p);
    Ok(NormEstimates {
        p,
        rho,
        s_norm: mean(|r| r.0),
        m_norm: mean(|r| r.1),
        weighted_s_norm: mean(|r| r.2),
        weighted_m_norm: mean(|r| r.3),
        n_paths: samples.len(),
    })
}

/// `(|int Z l dnu|^2, int l^2 dnu * int |Z|^2 dnu)` at node `k`.
pub fn jensen_check<const D: usize>(
    yz: &PathwiseYZ<'_, D>,
    k: usize,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
) -> Result<(f64, f64)> {
    let rule = NonlocalRule::new(m, c.l_weight)?;
    let grad = yz.v.gradient(yz.times[k], &yz.states[k])?;
    let zl = rule.apply(
        |x| yz.v.eval(yz.times[k], x).unwrap_or(f64::NAN),
        &yz.states[k],
        yz.y[k],
        &grad,
        &yz.sigmas[k],
    );
    let square = SquareRule::<D>::new(m)?;
    let l2 = square.inner_mass
        + square.nodes.iter().map(|(u, w)| w * c.l_weight.eval(u.as_slice()).powi(2)).sum::<f64>();
    Ok((zl * zl, l2 * square.z_square(yz, k)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriRow {
    pub x: Vec<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub rows: Vec<AprioriRow>,
    /// Smallest `C_2` with `lhs <= C_2 rhs` on every row.
    pub fitted_constant: f64,
}

/// Both sides of the `p = 2` a priori estimate from each start in `starts`.
#[allow(clippy::too_many_arguments)]
pub fn apriori_check<const D: usize>(
    v: &ValueFunction<D>,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    t: f64,
    starts: &[Vector<D>],
    n_paths: usize,
    n_steps: usize,
    key: StreamKey,
) -> Result<AprioriReport> {
    let rule = SquareRule::new(m)?;
    let mut rows = Vec::new();
    for (i, x) in starts.iter().enumerate() {
        let sides = par_indexed(n_paths, |p| -> Result<(f64, f64)> {
            let path = simulate_path_observed(
                m,
                c.forward.as_ref(),
                t,
                *x,
                v.horizon(),
                n_steps,
                &v.times,
                key.child(i as u64).child(p as u64),
            )?;
            let yz = pathwise_yz(&path, v, c)?;
            let sup = yz.y.iter().map(|y| y * y).fold(0.0, f64::max);
            let zz: Vec<f64> = (0..yz.times.len()).map(|k| rule.z_square(&yz, k)).collect();
            let psi0: Vec<f64> =
                yz.times.iter().zip(&yz.states).map(|(s, x)| c.driver.value(*s, x, 0.0, 0.0).powi(2)).collect();
            let (mut z_int, mut psi_int) = (0.0, 0.0);
            for k in 1..yz.times.len() {
                let dt = yz.times[k] - yz.times[k - 1];
                z_int += 0.5 * dt * (zz[k] + zz[k - 1]);
                psi_int += 0.5 * dt * (psi0[k] + psi0[k - 1]);
            }
            let phi = c.terminal.value(&path.terminal_state());
            Ok((sup + z_int, psi_int + phi * phi))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let lhs = sides.iter().map(|s| s.0).sum::<f64>() / n_paths as f64;
        let rhs = sides.iter().map(|s| s.1).sum::<f64>() / n_paths as f64;
        let ratio = if lhs == 0.0 && rhs == 0.0 { 0.0 } else { lhs / rhs };
        rows.push(AprioriRow { x: x.iter().copied().collect(), lhs, rhs, ratio });
    }
    let fitted_constant = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(AprioriReport { rows, fitted_constant })
}

/// `Y(t) + int_t^T psi ds - phi(X_T)` over fresh paths from `(t, x)`; mean
/// zero for the solution.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residual<const D: usize>(
    v: &ValueFunction<D>,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    t: f64,
    x: Vector<D>,
    n_paths: usize,
    n_steps: usize,
    key: StreamKey,
) -> Result<Estimate> {
    let rule = if c.driver.is_zero() { None } else { Some(NonlocalRule::new(m, c.l_weight)?) };
    let y0 = v.eval(t, &x)?;
    let samples = par_indexed(n_paths, |p| -> Result<f64> {
        let mut obs: Vec<f64> = v.times.iter().copied().filter(|s| *s > t).collect();
        obs.push(t);
        let path = simulate_path_observed(m, c.forward.as_ref(), t, x, v.horizon(), n_steps, &obs, key.child(p as u64))?;
        let mut integral = 0.0;
        if let Some(rule) = &rule {
            obs.sort_by(|a, b| a.total_cmp(b));
            let psi: Vec<f64> = obs
                .iter()
                .map(|s| {
                    let xs = path.state_at(*s);
                    let y = v.eval(*s, &xs)?;
                    let z = if c.driver.depends_on_z() {
                        let grad = v.gradient(*s, &xs)?;
                        let sigma = c.forward.sigma(*s, &xs);
                        rule.apply(|u| v.eval(*s, u).unwrap_or(f64::NAN), &xs, y, &grad, &sigma)
                    } else {
                        0.0
                    };
                    Ok(c.driver.value(*s, &xs, y, z))
                })
                .collect::<Result<_>>()?;
            for k in 1..obs.len() {
                integral += 0.5 * (obs[k] - obs[k - 1]) * (psi[k] + psi[k - 1]);
            }
        }
        Ok(y0 + integral - c.terminal.value(&path.terminal_state()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&samples))
}
