//! Value-function Picard iteration for the backward equation.
//!
//! The `n`-th iterate is the grid function
//!
//! ```text
//! v_{n+1}(s, x) = E[phi(X_T)] - E int_s^T psi(r, X_r, v_n(r, X_r), z[v_n](r, X_r)) dr
//! ```
//!
//! with `X` started at `(s, x)` and `z[v](r, x) = int (v(r, x + sigma u) - v(r, x)) l(u) nu(du)`.
//! The forward paths are drawn once per node and reused by every iterate.

mod norms;
mod value_function;

pub use norms::{
    apriori_check, jensen_check, martingale_residual, norm_estimators, pathwise_yz, AprioriReport, AprioriRow,
    NormEstimates, PathwiseYZ,
};
pub use value_function::{SpaceGrid, ValueFunction};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::forward_flow::simulate_path_observed;
use crate::levy_model::StableLikeMeasure;
use crate::models::{LWeight, ModelCoefficients, Terminal};
use crate::rng::{tags, StreamKey};
use crate::stats::par_indexed;
use crate::{Matrix, Vector};

/// Quadrature for `z[v](s, x)`. Below the split radius the difference is
/// replaced by `grad v . sigma u`, integrated in closed form.
#[derive(Clone, Debug)]
pub struct NonlocalRule<const D: usize> {
    inner_mass: f64,
    nodes: Vec<(Vector<D>, f64)>,
}

impl<const D: usize> NonlocalRule<D> {
    pub fn new(m: &StableLikeMeasure, l: LWeight) -> Result<Self> {
        if m.dim != D {
            return domain(format!("measure of dimension {} used in dimension {D}", m.dim));
        }
        if !m.is_symmetric() {
            return Err(Error::Capability("nonlocal term needs a symmetric measure near the origin".into()));
        }
        let split = m.split_radius();
        let nodes = m
            .shell_rule(split, 1.0)?
            .iter_fixed::<D>()
            .map(|(u, w)| {
                let lu = l.eval(u.as_slice());
                (u, w * lu)
            })
            .filter(|(_, w)| *w != 0.0)
            .collect();
        Ok(Self { inner_mass: m.inner_power_mass(2.0, split) / D as f64, nodes })
    }

    /// `z` for a function `f` with value `fx` and gradient `grad` at `x`.
    pub fn apply<F: Fn(&Vector<D>) -> f64>(&self, f: F, x: &Vector<D>, fx: f64, grad: &Vector<D>, sigma: &Matrix<D>) -> f64 {
        let inner = (sigma.transpose() * grad)[0] * self.inner_mass;
        let outer: f64 = self.nodes.iter().map(|(u, w)| w * (f(&(x + sigma * u)) - fx)).sum();
        inner + outer
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `z[v](s, x)` for a slice time `s` of `v` (other times interpolate).
pub fn nonlocal_term<const D: usize>(
    v: &ValueFunction<D>,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    s: f64,
    x: &Vector<D>,
) -> Result<f64> {
    let rule = NonlocalRule::new(m, c.l_weight)?;
    let fx = v.eval(s, x)?;
    let grad = v.gradient(s, x)?;
    let sigma = c.forward.sigma(s, x);
    Ok(rule.apply(|y| v.eval(s, y).unwrap_or(f64::NAN), x, fx, &grad, &sigma))
}

/// `z[v]` tabulated on the nodes of every slice of `v`, as a grid function
/// that can be evaluated anywhere in `[t_min, T]`.
pub fn nonlocal_table<const D: usize>(
    v: &ValueFunction<D>,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
) -> Result<ValueFunction<D>> {
    let rule = NonlocalRule::new(m, c.l_weight)?;
    let n = v.grid.len::<D>();
    let values = (0..v.times.len())
        .map(|j| {
            par_indexed(n, |g| {
                let x = v.grid.node::<D>(g);
                let sigma = c.forward.sigma(v.times[j], &x);
                rule.apply(|y| v.slice(j, y), &x, v.values[j][g], &v.slice_gradient(j, &x), &sigma)
            })
        })
        .collect();
    Ok(ValueFunction { times: v.times.clone(), grid: v.grid, values })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub horizon: f64,
    pub grid: SpaceGrid,
    /// Number of time slices below the horizon.
    pub slices: usize,
    pub paths_per_node: usize,
    pub steps_per_slice: usize,
    pub iterates_max: usize,
    pub tol: f64,
    /// Solve backward on this many equal sub-intervals, each with the
    /// previous solution as terminal data.
    pub sub_intervals: usize,
    /// Paths from `(t_min, 0)` for the norm estimates; 0 skips them.
    pub norm_paths: usize,
}

impl SolveConfig {
    pub fn new(horizon: f64, grid: SpaceGrid) -> Self {
        Self {
            horizon,
            grid,
            slices: 10,
            paths_per_node: 1000,
            steps_per_slice: 2,
            iterates_max: 30,
            tol: 1e-6,
            sub_intervals: 1,
            norm_paths: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BsdeSolveReport {
    pub iterates: usize,
    pub sup_diffs: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    pub converged: bool,
    /// Iterates used on each sub-interval, latest first.
    pub piece_iterates: Vec<usize>,
    pub invalid_paths: usize,
    pub total_paths: usize,
    /// Fraction of stored path positions outside the grid box.
    pub exit_fraction: f64,
    /// Monte Carlo standard error of the final iterate per node.
    pub node_stderr: Vec<Vec<f64>>,
    pub norm_estimates: Option<NormEstimates>,
}

enum TerminalData<const D: usize> {
    Exact(Arc<dyn Terminal<D>>),
    Grid(SpaceGrid, Vec<f64>),
}

impl<const D: usize> TerminalData<D> {
    fn value(&self, x: &Vector<D>) -> f64 {
        match self {
            TerminalData::Exact(phi) => phi.value(x),
            TerminalData::Grid(grid, values) => grid.interpolate(values, x),
        }
    }
}

/// Forward paths from every grid node of every slice, stored at the later
/// slices. Reused by all iterates.
pub struct PicardSolver<const D: usize> {
    c: ModelCoefficients<D>,
    rule: Option<NonlocalRule<D>>,
    times: Vec<f64>,
    grid: SpaceGrid,
    terminal: TerminalData<D>,
    /// `bank[j][g]`: per valid path the states at slices `0..j`.
    bank: Vec<Vec<Vec<Vec<Vector<D>>>>>,
    pub invalid_paths: usize,
    pub total_paths: usize,
    pub exit_fraction: f64,
}

impl<const D: usize> PicardSolver<D> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        c: &ModelCoefficients<D>,
        m: &StableLikeMeasure,
        times: Vec<f64>,
        grid: SpaceGrid,
        paths_per_node: usize,
        steps_per_slice: usize,
        key: StreamKey,
    ) -> Result<Self> {
        Self::with_terminal(c, m, times, grid, paths_per_node, steps_per_slice, key, TerminalData::Exact(c.terminal.clone()))
    }

    #[allow(clippy::too_many_arguments)]
    fn with_terminal(
        c: &ModelCoefficients<D>,
        m: &StableLikeMeasure,
        times: Vec<f64>,
        grid: SpaceGrid,
        paths_per_node: usize,
        steps_per_slice: usize,
        key: StreamKey,
        terminal: TerminalData<D>,
    ) -> Result<Self> {
        if times.len() < 2 || times.windows(2).any(|w| !(w[0] > w[1])) {
            return domain("need at least two strictly decreasing slice times");
        }
        if paths_per_node == 0 {
            return domain("paths_per_node must be positive");
        }
        let rule = if c.driver.depends_on_z() && !c.driver.is_zero() {
            Some(NonlocalRule::new(m, c.l_weight)?)
        } else {
            None
        };
        let n_nodes = grid.len::<D>();
        let key = key.child(tags::PICARD);
        let horizon = times[0];
        let mut bank = vec![Vec::new()];
        let (mut invalid, mut exits, mut stored) = (0usize, 0usize, 0usize);
        for j in 1..times.len() {
            let observe: Vec<f64> = times[..j].to_vec();
            let slice_key = key.child(j as u64);
            let per_node = par_indexed(n_nodes * paths_per_node, |i| {
                let (g, p) = (i / paths_per_node, i % paths_per_node);
                let path = simulate_path_observed(
                    m,
                    c.forward.as_ref(),
                    times[j],
                    grid.node::<D>(g),
                    horizon,
                    steps_per_slice * j,
                    &observe,
                    slice_key.child(g as u64).child(p as u64),
                )?;
                Ok::<_, Error>(path.valid.then(|| observe.iter().map(|s| path.state_at(*s)).collect::<Vec<_>>()))
            });
            let mut nodes: Vec<Vec<Vec<Vector<D>>>> = vec![Vec::with_capacity(paths_per_node); n_nodes];
            for (i, r) in per_node.into_iter().enumerate() {
                match r? {
                    Some(states) => {
                        exits += states.iter().filter(|x| !grid.contains(*x)).count();
                        stored += states.len();
                        nodes[i / paths_per_node].push(states);
                    }
                    None => invalid += 1,
                }
            }
            bank.push(nodes);
        }
        let total = (times.len() - 1) * n_nodes * paths_per_node;
        if invalid * 100 > total {
            return Err(Error::TooManyInvalid { invalid, total });
        }
        Ok(Self {
            c: c.clone(),
            rule,
            times,
            grid,
            terminal,
            bank,
            invalid_paths: invalid,
            total_paths: total,
            exit_fraction: exits as f64 / stored.max(1) as f64,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `z[v]` at the grid nodes of every slice.
    fn z_table(&self, v: &ValueFunction<D>) -> Vec<Vec<f64>> {
        let Some(rule) = &self.rule else {
            return vec![Vec::new(); self.times.len()];
        };
        let n = self.grid.len::<D>();
        (0..self.times.len())
            .map(|j| {
                par_indexed(n, |g| {
                    let x = self.grid.node::<D>(g);
                    let sigma = self.c.forward.sigma(self.times[j], &x);
                    rule.apply(|y| v.slice(j, y), &x, v.values[j][g], &v.slice_gradient(j, &x), &sigma)
                })
            })
            .collect()
    }

    /// One Picard step; also returns the Monte Carlo standard error per node.
    pub fn step(&self, v: &ValueFunction<D>) -> Result<(ValueFunction<D>, Vec<Vec<f64>>)> {
        if v.times != self.times || v.grid != self.grid {
            return domain("iterate does not live on the solver's slices and grid");
        }
        let z = self.z_table(v);
        let driver = &self.c.driver;
        let zero = driver.is_zero();
        let psi = |k: usize, x: &Vector<D>| {
            let zv = if self.rule.is_some() { self.grid.interpolate(&z[k], x) } else { 0.0 };
            driver.value(self.times[k], x, v.slice(k, x), zv)
        };
        let n = self.grid.len::<D>();
        let mut values = Vec::with_capacity(self.times.len());
        let mut stderr = Vec::with_capacity(self.times.len());
        values.push((0..n).map(|g| self.terminal.value(&self.grid.node::<D>(g))).collect::<Vec<_>>());
        stderr.push(vec![0.0; n]);
        for j in 1..self.times.len() {
            let rows = par_indexed(n, |g| {
                let x0 = self.grid.node::<D>(g);
                let psi_start = if zero { 0.0 } else { psi(j, &x0) };
                let samples: Vec<f64> = self.bank[j][g]
                    .iter()
                    .map(|states| {
                        let mut integral = 0.0;
                        if !zero {
                            let mut right = psi_start;
                            for k in (0..j).rev() {
                                let left = psi(k, &states[k]);
                                integral += 0.5 * (self.times[k] - self.times[k + 1]) * (left + right);
                                right = left;
                            }
                        }
                        self.terminal.value(&states[0]) - integral
                    })
                    .collect();
                let est = crate::stats::Estimate::from_samples(&samples);
                (est.mean, est.stderr)
            });
            values.push(rows.iter().map(|r| r.0).collect());
            stderr.push(rows.iter().map(|r| r.1).collect());
        }
        Ok((ValueFunction { times: self.times.clone(), grid: self.grid, values }, stderr))
    }

    /// Iterates from `v_0 = 0`.
    pub fn iterate(&self, iterates_max: usize, tol: f64) -> Result<(ValueFunction<D>, BsdeSolveReport)> {
        let mut v = ValueFunction::zeros(self.times.clone(), self.grid)?;
        let mut report = BsdeSolveReport {
            invalid_paths: self.invalid_paths,
            total_paths: self.total_paths,
            exit_fraction: self.exit_fraction,
            ..Default::default()
        };
        let one_shot = self.c.driver.is_zero() || !(self.c.driver.depends_on_y() || self.c.driver.depends_on_z());
        let mut rising = 0;
        for n in 0..iterates_max.max(1) {
            let (next, stderr) = self.step(&v)?;
            let diff = next.sup_distance(&v);
            report.iterates = n + 1;
            report.node_stderr = stderr;
            if let Some(prev) = report.sup_diffs.last() {
                let ratio = if *prev > 0.0 { diff / prev } else { 0.0 };
                report.contraction_ratios.push(ratio);
                rising = if ratio >= 1.0 { rising + 1 } else { 0 };
            }
            report.sup_diffs.push(diff);
            v = next;
            if one_shot || diff < tol {
                report.converged = true;
                break;
            }
            if rising >= 3 {
                return Err(Error::NonContraction {
                    ratios: report.contraction_ratios.clone(),
                    horizon: self.times[0] - self.times[self.times.len() - 1],
                });
            }
        }
        report.piece_iterates = vec![report.iterates];
        Ok((v, report))
    }
}

/// A single Picard step from `v_n` with freshly drawn paths.
pub fn picard_step<const D: usize>(
    v_n: &ValueFunction<D>,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    paths_per_node: usize,
    steps_per_slice: usize,
    key: StreamKey,
) -> Result<ValueFunction<D>> {
    let solver = PicardSolver::new(c, m, v_n.times.clone(), v_n.grid, paths_per_node, steps_per_slice, key)?;
    Ok(solver.step(v_n)?.0)
}

/// `v` on `[t_min, horizon]` with the report of the earliest sub-interval.
pub fn solve_value_function<const D: usize>(
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    t_min: f64,
    cfg: &SolveConfig,
    key: StreamKey,
) -> Result<(ValueFunction<D>, BsdeSolveReport)> {
    if !(t_min < cfg.horizon) {
        return domain(format!("t_min {t_min} must precede the horizon {}", cfg.horizon));
    }
    let pieces = cfg.sub_intervals.max(1);
    if cfg.slices == 0 || !cfg.slices.is_multiple_of(pieces) {
        return domain(format!("{} slices cannot be split into {pieces} sub-intervals", cfg.slices));
    }
    let per_piece = cfg.slices / pieces;
    let times: Vec<f64> = (0..=cfg.slices)
        .map(|j| if j == cfg.slices { t_min } else { cfg.horizon - (cfg.horizon - t_min) * j as f64 / cfg.slices as f64 })
        .collect();
    let mut values: Vec<Vec<f64>> = Vec::new();
    let mut stderr: Vec<Vec<f64>> = Vec::new();
    let mut report = BsdeSolveReport::default();
    let mut piece_iterates = Vec::new();
    let (mut invalid, mut total, mut exit_sum) = (0, 0, 0.0);
    for p in 0..pieces {
        let piece_times = times[p * per_piece..=(p + 1) * per_piece].to_vec();
        let terminal = match values.last() {
            None => TerminalData::Exact(c.terminal.clone()),
            Some(last) => TerminalData::Grid(cfg.grid, last.clone()),
        };
        let solver = PicardSolver::with_terminal(
            c,
            m,
            piece_times,
            cfg.grid,
            cfg.paths_per_node,
            cfg.steps_per_slice,
            key.child(p as u64),
            terminal,
        )?;
        let (v, r) = solver.iterate(cfg.iterates_max, cfg.tol)?;
        let skip = usize::from(p > 0);
        values.extend(v.values.into_iter().skip(skip));
        stderr.extend(r.node_stderr.iter().skip(skip).cloned());
        piece_iterates.push(r.iterates);
        invalid += r.invalid_paths;
        total += r.total_paths;
        exit_sum += r.exit_fraction;
        report = r;
    }
    report.piece_iterates = piece_iterates;
    report.invalid_paths = invalid;
    report.total_paths = total;
    report.exit_fraction = exit_sum / pieces as f64;
    report.node_stderr = stderr;
    let v = ValueFunction { times, grid: cfg.grid, values };
    if cfg.norm_paths > 0 {
        let samples = par_indexed(cfg.norm_paths, |i| {
            let path = crate::forward_flow::simulate_path_observed(
                m,
                c.forward.as_ref(),
                t_min,
                Vector::<D>::zeros(),
                cfg.horizon,
                cfg.steps_per_slice * cfg.slices,
                &v.times,
                key.child(tags::CHECKS).child(i as u64),
            )?;
            pathwise_yz(&path, &v, c)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        report.norm_estimates = Some(norm_estimators(&samples, c, m, 2.0, 0.0)?);
    }
    Ok((v, report))
}

#[cfg(test)]
mod tests;
