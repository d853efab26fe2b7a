//! The generator `L_t`, the semigroup `P_{t,tau}`, and an explicit
//! one-dimensional finite-difference solver for the semilinear equation
//!
//! ```text
//! d_t v + L_t v = psi(t, x, v, z[v]),   v(T, .) = phi.
//! ```

mod manufactured;
mod mollify;

pub use manufactured::{make_manufactured, InducedDriver, ManufacturedProblem};
pub use mollify::{mollify, mollify_terminal, Mollified};

use serde::{Deserialize, Serialize};

use crate::bsde_engine::{NonlocalRule, SpaceGrid, ValueFunction};
use crate::error::{domain, Error, Result};
use crate::forward_flow::simulate_path;
use crate::levy_model::{StableLikeMeasure, Support};
use crate::models::{ForwardCoefficients, ModelCoefficients};
use crate::rng::StreamKey;
use crate::stats::{par_indexed, Estimate};
use crate::Vector;

fn require_symmetric(m: &StableLikeMeasure) -> Result<()> {
    if m.is_symmetric() {
        Ok(())
    } else {
        Err(Error::Capability("the principal value needs a symmetric measure".into()))
    }
}

/// Marks of the symmetrised quadrature and the mass `int u_1^2 nu` left to the
/// second-order Taylor term.
fn generator_rule<const D: usize>(m: &StableLikeMeasure, support: Support) -> Result<(Vec<(Vector<D>, f64)>, f64)> {
    require_symmetric(m)?;
    if m.dim != D {
        return domain(format!("measure of dimension {} used in dimension {D}", m.dim));
    }
    let split = m.split_radius();
    let floor = m.support_floor(support);
    let (lo, inner) = if floor < split { (split, m.inner_power_mass(2.0, split) - m.inner_power_mass(2.0, floor)) } else { (floor, 0.0) };
    let nodes = m.shell_rule(lo, 1.0)?.iter_fixed::<D>().collect();
    Ok((nodes, inner / D as f64))
}

/// `L_t[phi](x) = b . grad phi + p.v. int (phi(x + sigma u) - phi(x)) nu(du)`.
/// Derivatives of `phi` are taken by central differences.
pub fn generator_apply<const D: usize, F: Fn(&Vector<D>) -> f64>(
    forward: &dyn ForwardCoefficients<D>,
    m: &StableLikeMeasure,
    support: Support,
    phi: F,
    t: f64,
    x: &Vector<D>,
) -> Result<f64> {
    let (nodes, inner_mass) = generator_rule::<D>(m, support)?;
    Ok(apply_rule(forward, &nodes, inner_mass, &phi, t, x))
}

fn apply_rule<const D: usize, F: Fn(&Vector<D>) -> f64>(
    forward: &dyn ForwardCoefficients<D>,
    nodes: &[(Vector<D>, f64)],
    inner_mass: f64,
    phi: &F,
    t: f64,
    x: &Vector<D>,
) -> f64 {
    let h = 1e-4 * (1.0 + x.norm());
    let fx = phi(x);
    let sigma = forward.sigma(t, x);
    let b = forward.drift(t, x);
    let mut drift = 0.0;
    let mut taylor = 0.0;
    for i in 0..D {
        let mut e = Vector::<D>::zeros();
        e[i] = h;
        drift += b[i] * (phi(&(x + e)) - phi(&(x - e))) / (2.0 * h);
        // second derivative along sigma e_i
        let mut ei = Vector::<D>::zeros();
        ei[i] = 1.0;
        let d = sigma * ei * h;
        taylor += 0.5 * inner_mass * (phi(&(x + d)) + phi(&(x - d)) - 2.0 * fx) / (h * h);
    }
    let jumps: f64 = nodes
        .iter()
        .map(|(u, w)| {
            let su = sigma * u;
            0.5 * w * (phi(&(x + su)) + phi(&(x - su)) - 2.0 * fx)
        })
        .sum();
    drift + taylor + jumps
}

/// `P_{t,tau}[g](x) = E[g(X(tau, t, x))]` by Monte Carlo.
#[allow(clippy::too_many_arguments)]
pub fn semigroup_apply<const D: usize, G: Fn(&Vector<D>) -> f64 + Sync>(
    forward: &dyn ForwardCoefficients<D>,
    m: &StableLikeMeasure,
    g: G,
    t: f64,
    tau: f64,
    x: Vector<D>,
    n_paths: usize,
    n_steps: usize,
    key: StreamKey,
) -> Result<Estimate> {
    if tau < t {
        return domain(format!("tau {tau} precedes t {t}"));
    }
    if tau == t {
        return Ok(Estimate::exact(g(&x)));
    }
    let samples = par_indexed(n_paths, |i| -> Result<f64> {
        let p = simulate_path(m, forward, t, x, tau, n_steps, key.child(i as u64))?;
        Ok(g(&p.terminal_state()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Estimate::from_samples(&samples))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicConfig {
    pub horizon: f64,
    pub t_min: f64,
    pub grid: SpaceGrid,
    /// Output slices below the horizon, uniform in time.
    pub slices: usize,
    /// `None` picks 0.9 of the stability bound.
    pub dt: Option<f64>,
    /// Which marks the generator integrates over.
    pub support: Support,
}

/// Cubic Lagrange interpolation on the grid, linear beyond the box.
fn stencil(grid: &SpaceGrid, x: f64) -> ([usize; 4], [f64; 4], usize) {
    let n = grid.nodes_per_axis;
    let h = grid.spacing();
    let l = grid.half_width;
    if x > l || x < -l || n < 4 {
        let (i0, i1) = if x > 0.0 || n < 4 { (n - 2, n - 1) } else { (0, 1) };
        let f = (x - grid.coordinate(i0)) / h;
        return ([i0, i1, 0, 0], [1.0 - f, f, 0.0, 0.0], 2);
    }
    let i = (((x + l) / h).floor() as usize).clamp(1, n - 3);
    let s = (x - grid.coordinate(i)) / h;
    let w = [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ];
    ([i - 1, i, i + 1, i + 2], w, 4)
}

fn cubic_eval(grid: &SpaceGrid, values: &[f64], x: f64) -> f64 {
    let (idx, w, k) = stencil(grid, x);
    (0..k).map(|j| w[j] * values[idx[j]]).sum()
}

/// Dense matrix of `L_t` on the grid (row-major).
pub fn generator_matrix(
    forward: &dyn ForwardCoefficients<1>,
    m: &StableLikeMeasure,
    support: Support,
    grid: &SpaceGrid,
    t: f64,
) -> Result<Vec<f64>> {
    let (nodes, inner_mass) = generator_rule::<1>(m, support)?;
    let n = grid.nodes_per_axis;
    if n < 4 {
        return domain("the finite-difference grid needs at least 4 nodes");
    }
    let h = grid.spacing();
    let rows = par_indexed(n, |i| {
        let mut row = vec![0.0; n];
        let xi = grid.coordinate(i);
        let x = Vector::<1>::new(xi);
        let b = forward.drift(t, &x)[0];
        let s = forward.sigma(t, &x)[(0, 0)];
        let c = i.clamp(1, n - 2);
        row[c + 1] += b / (2.0 * h);
        row[c - 1] -= b / (2.0 * h);
        // marks below one cell join the second-order Taylor term: one-sided
        // cubic stencils would leave a first-order residue there
        let mut mass = inner_mass * s * s;
        for (u, w) in &nodes {
            let su = s * u[0];
            if su.abs() < h {
                mass += w * su * su;
            }
        }
        let k = 0.5 * mass / (h * h);
        if (2..n - 2).contains(&i) {
            for (off, coef) in [(-2isize, -1.0), (-1, 16.0), (0, -30.0), (1, 16.0), (2, -1.0)] {
                row[(i as isize + off) as usize] += k * coef / 12.0;
            }
        } else {
            row[c + 1] += k;
            row[c - 1] += k;
            row[c] -= 2.0 * k;
        }
        for (u, w) in &nodes {
            let su = s * u[0];
            if su.abs() < h {
                continue;
            }
            for y in [xi + su, xi - su] {
                let (idx, wt, cnt) = stencil(grid, y);
                for j in 0..cnt {
                    row[idx[j]] += 0.5 * w * wt[j];
                }
            }
            row[i] -= w;
        }
        row
    });
    Ok(rows.concat())
}

/// Largest absolute row sum.
pub fn matrix_norm(matrix: &[f64], n: usize) -> f64 {
    matrix.chunks(n).map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Explicit backward Euler-in-time solve. Coefficients are frozen at the
/// start of each output slice.
pub fn deterministic_solve(
    c: &ModelCoefficients<1>,
    m: &StableLikeMeasure,
    cfg: &DeterministicConfig,
) -> Result<ValueFunction<1>> {
    if m.dim != 1 {
        return Err(Error::Capability("the deterministic solver is one-dimensional".into()));
    }
    if !(cfg.t_min < cfg.horizon) || cfg.slices == 0 {
        return domain("need t_min < horizon and at least one slice");
    }
    let grid = cfg.grid;
    let n = grid.nodes_per_axis;
    let times: Vec<f64> = (0..=cfg.slices)
        .map(|j| if j == cfg.slices { cfg.t_min } else { cfg.horizon - (cfg.horizon - cfg.t_min) * j as f64 / cfg.slices as f64 })
        .collect();
    let rule = if c.driver.depends_on_z() && !c.driver.is_zero() { Some(NonlocalRule::<1>::new(m, c.l_weight)?) } else { None };
    let mut v: Vec<f64> = (0..n).map(|g| c.terminal.value(&grid.node::<1>(g))).collect();
    let mut values = vec![v.clone()];
    let mut matrix = generator_matrix(c.forward.as_ref(), m, cfg.support, &grid, cfg.horizon)?;
    let bound = 1.0 / matrix_norm(&matrix, n);
    let dt_target = match cfg.dt {
        Some(dt) if dt * matrix_norm(&matrix, n) > 1.0 => {
            return Err(Error::Instability { dt, suggested: 0.9 * bound });
        }
        Some(dt) => dt,
        None => 0.9 * bound,
    };
    for j in 1..times.len() {
        let (top, bottom) = (times[j - 1], times[j]);
        if j > 1 {
            matrix = generator_matrix(c.forward.as_ref(), m, cfg.support, &grid, top)?;
            if dt_target * matrix_norm(&matrix, n) > 1.0 {
                return Err(Error::Instability { dt: dt_target, suggested: 0.9 / matrix_norm(&matrix, n) });
            }
        }
        let steps = ((top - bottom) / dt_target).ceil().max(1.0) as usize;
        let dt = (top - bottom) / steps as f64;
        for k in 0..steps {
            let s = top - dt * k as f64;
            let lv: Vec<f64> = matrix.chunks(n).map(|row| row.iter().zip(&v).map(|(a, b)| a * b).sum()).collect();
            let next: Vec<f64> = par_indexed(n, |i| {
                let x = grid.node::<1>(i);
                let psi = if c.driver.is_zero() {
                    0.0
                } else {
                    let z = match &rule {
                        Some(rule) => {
                            let grad = Vector::<1>::new(cubic_derivative(&grid, &v, i));
                            rule.apply(|y| cubic_eval(&grid, &v, y[0]), &x, v[i], &grad, &c.forward.sigma(s, &x))
                        }
                        None => 0.0,
                    };
                    c.driver.value(s, &x, v[i], z)
                };
                v[i] + dt * (lv[i] - psi)
            });
            v = next;
        }
        values.push(v.clone());
    }
    Ok(ValueFunction { times, grid, values })
}

fn cubic_derivative(grid: &SpaceGrid, values: &[f64], i: usize) -> f64 {
    let n = grid.nodes_per_axis;
    let c = i.clamp(1, n - 2);
    (values[c + 1] - values[c - 1]) / (2.0 * grid.spacing())
}

/// Cubic interpolation of a deterministic solution slice.
pub fn interpolate_slice(v: &ValueFunction<1>, j: usize, x: f64) -> f64 {
    cubic_eval(&v.grid, &v.values[j], x)
}

#[cfg(test)]
mod tests;
