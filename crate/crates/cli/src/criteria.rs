//! The acceptance suite. Every criterion is a function of a [`Scale`] that
//! returns its checks; `verify` and the acceptance tests both call [`run`].

use std::sync::Arc;

use levyfbsde_core::bsde_engine::{solve_value_function, BsdeSolveReport, SolveConfig, SpaceGrid, ValueFunction};
use levyfbsde_core::forward_flow::{euler_flow, lent_particle_derivative, mark_sensitivity, simulate_path};
use levyfbsde_core::gradient_estimator::{
    bel_gradient, fd_gradient, gradient_scaling_experiment, variational_gradient, write_gradient_csv, BelConfig, FdConfig,
    GradientEstimate,
};
use levyfbsde_core::levy_model::{check_assumptions, JumpEvent, StableLikeMeasure, Support};
use levyfbsde_core::malliavin_weights::{accumulate_weight, cutoff_for, mark_sampling_oracle, weight_moment_scaling};
use levyfbsde_core::models::{
    Additive, ConstantTerminal, FnTerminal, KinkedTerminal, LinearDriver, ModelCoefficients, Multiplicative1d, Smooth2d,
    SmoothTerminal, Terminal, ZeroDriver,
};
use levyfbsde_core::pde_solver::{
    deterministic_solve, generator_apply, interpolate_slice, make_manufactured, mollify_terminal, semigroup_apply,
    DeterministicConfig,
};
use levyfbsde_core::rng::{splitmix64, StreamKey};
use levyfbsde_core::stats::Estimate;
use levyfbsde_core::{Error, Result, Vector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

pub const NOMINAL_PATHS: usize = 100_000;
/// Statistical criteria below this many paths are reported as underpowered.
pub const MIN_POWERED_PATHS: usize = 10_000;
pub const CRITERIA: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Underpowered,
}

impl Status {
    pub fn label(&self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Underpowered => "UNDERPOWERED",
        }
    }
}

/// One comparison: `value` against `reference` with its standard error and
/// the tolerance actually applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub check: String,
    pub value: f64,
    pub reference: f64,
    pub stderr: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// `|value - reference| <= sigmas * stderr + slack`.
    pub fn near(check: impl Into<String>, value: f64, reference: f64, stderr: f64, sigmas: f64, slack: f64) -> Self {
        let tolerance = sigmas * stderr + slack;
        Self { check: check.into(), value, reference, stderr, tolerance, passed: (value - reference).abs() <= tolerance }
    }

    pub fn agree(check: impl Into<String>, a: &Estimate, b: &Estimate, sigmas: f64, slack: f64) -> Self {
        Self::near(check, a.mean, b.mean, a.stderr.hypot(b.stderr), sigmas, slack)
    }

    /// `value <= bound`.
    pub fn below(check: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { check: check.into(), value, reference: bound, stderr: 0.0, tolerance: 0.0, passed: value <= bound }
    }

    /// `value >= floor`.
    pub fn above(check: impl Into<String>, value: f64, floor: f64) -> Self {
        Self { check: check.into(), value, reference: floor, stderr: 0.0, tolerance: 0.0, passed: value >= floor }
    }

    pub fn holds(check: impl Into<String>, ok: bool) -> Self {
        Self { check: check.into(), value: ok as u8 as f64, reference: 1.0, stderr: 0.0, tolerance: 0.0, passed: ok }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub title: String,
    pub status: Status,
    pub checks: Vec<Check>,
    pub note: String,
    /// Extra CSV tables `(file stem, contents)`.
    #[serde(skip)]
    pub tables: Vec<(String, String)>,
}

impl CriterionResult {
    fn new(id: u32, title: &str, checks: Vec<Check>, powered: bool, note: impl Into<String>) -> Self {
        let status = if !checks.iter().all(|c| c.passed) && powered {
            Status::Fail
        } else if !powered {
            Status::Underpowered
        } else {
            Status::Pass
        };
        Self { id, title: title.into(), status, checks, note: note.into(), tables: Vec::new() }
    }

    fn with_table(mut self, name: &str, csv: String) -> Self {
        self.tables.push((name.into(), csv));
        self
    }

    pub fn summary_line(&self) -> String {
        format!("criterion {:>2} {:<12} {}", self.id, self.status.label(), self.title)
    }

    pub fn detail_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                format!(
                    "    [{}] {}: value {:.6e}, reference {:.6e}, stderr {:.2e}, tolerance {:.2e}",
                    if c.passed { "ok" } else { "!!" },
                    c.check,
                    c.value,
                    c.reference,
                    c.stderr,
                    c.tolerance
                )
            })
            .collect()
    }

    pub fn checks_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for c in &self.checks {
            w.serialize(c).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scale {
    pub paths: usize,
    pub seed: u64,
}

impl Scale {
    pub fn nominal(seed: u64) -> Self {
        Self { paths: NOMINAL_PATHS, seed }
    }

    pub fn powered(&self) -> bool {
        self.paths >= MIN_POWERED_PATHS
    }

    fn share(&self, divisor: usize, floor: usize, cap: usize) -> usize {
        (self.paths / divisor).clamp(floor, cap)
    }

    fn key(&self, id: u32) -> StreamKey {
        StreamKey::new(self.seed).child(1000 + id as u64)
    }
}

pub fn title(id: u32) -> &'static str {
    match id {
        1 => "measure analytics",
        2 => "lent-particle identity",
        3 => "weight reduction oracle",
        4 => "unbiasedness of the weight estimator",
        5 => "weight moment scaling",
        6 => "Picard convergence",
        7 => "probabilistic vs deterministic PDE",
        8 => "gradient formula end to end",
        9 => "mollification robustness",
        10 => "reproducibility",
        _ => "unknown criterion",
    }
}

/// Runs criterion `id`; a numerical error is reported as a failed check.
pub fn run(id: u32, scale: &Scale) -> CriterionResult {
    let out = match id {
        1 => measure_analytics(),
        2 => lent_particle(scale),
        3 => weight_oracle(scale),
        4 => unbiasedness(scale),
        5 => weight_scaling(scale),
        6 => picard(scale),
        7 => pde_comparison(scale),
        8 => gradient_formula(scale),
        9 => mollification(scale),
        10 => reproducibility(scale),
        _ => Err(Error::Domain(format!("no criterion {id}"))),
    };
    out.unwrap_or_else(|e| {
        let mut r = CriterionResult::new(id, title(id), vec![Check::holds("ran without error", false)], true, e.to_string());
        r.status = Status::Fail;
        r
    })
}

/// Uniform on `[0, 1)`, a pure function of `(seed, i)`.
fn uniform(seed: u64, i: u64) -> f64 {
    (splitmix64(seed ^ splitmix64(i.wrapping_add(0x5bd1_e995))) >> 11) as f64 / (1u64 << 53) as f64
}

/// Per-comparison multiplier that keeps the family-wise level of a single
/// 3 s.e. test over `k` comparisons.
pub fn family_sigmas(k: usize) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let single = 2.0 * (1.0 - normal.cdf(3.0));
    let per = 1.0 - (1.0 - single).powf(1.0 / k.max(1) as f64);
    normal.inverse_cdf(1.0 - per / 2.0)
}

fn measure(dim: usize, delta0: f64) -> Result<StableLikeMeasure> {
    StableLikeMeasure::symmetric(dim, 1.5, delta0)
}

fn gradient_table(rows: &[GradientEstimate]) -> Result<String> {
    let mut buf = Vec::new();
    write_gradient_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("utf8 csv"))
}

/// The measure the weight estimator simulates with at `(t, T)`, so that all
/// methods see the same process.
fn bel_measure(m: &StableLikeMeasure, cfg: &BelConfig, t: f64, horizon: f64) -> StableLikeMeasure {
    let eps_min = cfg.schedule.min_epsilon(m.beta, t, t, horizon);
    m.with_truncation(cfg.truncation.radius(m, eps_min))
}

fn bel_config(n_paths: usize) -> BelConfig {
    BelConfig { n_paths, ..BelConfig::default() }
}

fn fd_config(n_paths: usize) -> FdConfig {
    FdConfig { n_paths, ..FdConfig::default() }
}

// ------------------------------------------------------------------ 1

fn measure_analytics() -> Result<CriterionResult> {
    let m = measure(1, 0.05)?;
    let beta = m.beta;
    let mut checks = Vec::new();
    for p in [2.0, 3.0, 5.0] {
        for eps in [0.9, 0.3, 0.05] {
            let closed = 2.0 * f64::powf(eps, p - beta) / (p - beta);
            checks.push(Check::near(format!("moment p={p} eps={eps}"), m.moment_integral(p, eps)?, closed, 0.0, 0.0, 1e-6 * closed));
        }
    }
    for eps in [0.9, 0.3, 0.05] {
        let closed = 2.0 * (f64::powf(eps, -beta) - 1.0) / beta;
        checks.push(Check::near(format!("tail eps={eps}"), m.tail_mass(eps)?, closed, 0.0, 0.0, 1e-6 * closed));
    }
    // the ratio is the constant 2 / (p - beta) when a = 1
    for p in [2.0, 3.0] {
        let ratios: Vec<f64> = (0..=30)
            .map(|k| 10f64.powf(-3.0 + 3.0 * k as f64 / 30.0))
            .map(|eps| m.moment_integral(p, eps).map(|v| v / eps.powf(p - beta)))
            .collect::<Result<_>>()?;
        let hi = ratios.iter().cloned().fold(f64::MIN, f64::max);
        let lo = ratios.iter().cloned().fold(f64::MAX, f64::min);
        let c = 2.0 / (p - beta);
        checks.push(Check::near(format!("sup moment ratio p={p}"), hi, c, 0.0, 0.0, 1e-6 * c));
        checks.push(Check::near(format!("inf moment ratio p={p}"), lo, c, 0.0, 0.0, 1e-6 * c));
    }
    let report = check_assumptions(&m)?;
    checks.push(Check::holds("assumption checks", report.passed()));
    Ok(CriterionResult::new(1, title(1), checks, true, report.failures.join("; ")))
}

// ------------------------------------------------------------------ 2

fn lent_particle(scale: &Scale) -> Result<CriterionResult> {
    let m = measure(1, 0.05)?;
    let f = Multiplicative1d { s0: 0.7, theta: 0.2 };
    let key = scale.key(2);
    let delta = 0.01;
    let (mut coarse, mut fine) = (Vec::new(), Vec::new());
    let mut i = 0u64;
    while coarse.len() < 50 && i < 1000 {
        let path = simulate_path(&m, &f, 0.0, Vector::<1>::new(0.3), 1.0, 8, key.child(i))?;
        i += 1;
        if !path.valid || path.events.is_empty() {
            continue;
        }
        let idx = (splitmix64(scale.seed ^ i) % path.events.len() as u64) as usize;
        if path.events[idx].mark.norm() > 0.97 {
            continue;
        }
        let exact = lent_particle_derivative(&path, idx, 0, &f)?[0];
        let rel = |d: f64| -> Result<f64> { Ok((mark_sensitivity(&path, idx, 0, d, &f)?[0] - exact).abs() / exact.abs()) };
        coarse.push(rel(delta)?);
        fine.push(rel(delta / 2.0)?);
    }
    let worst = coarse.iter().cloned().fold(0.0, f64::max);
    let improvement = coarse.iter().sum::<f64>() / fine.iter().sum::<f64>();
    let checks = vec![
        Check::above("events tested", coarse.len() as f64, 50.0),
        Check::below(format!("max relative error, delta={delta}"), worst, 1e-3),
        Check::near("error ratio when delta is halved", improvement, 4.0, 0.0, 0.0, 1.0),
    ];
    Ok(CriterionResult::new(2, title(2), checks, true, ""))
}

// ------------------------------------------------------------------ 3

fn weight_oracle(scale: &Scale) -> Result<CriterionResult> {
    let n_paths = scale.share(500, 10, 200);
    let n_marks = scale.share(50, 50, 2000);
    let m1 = measure(1, 0.02)?;
    let m2 = measure(2, 0.02)?;
    let key = scale.key(3);
    let (mut agree, mut total, mut skipped) = (0usize, 0usize, 0usize);
    for i in 0..n_paths as u64 {
        let k = key.child(i);
        let (closed, est) = if i % 2 == 0 {
            let f = Multiplicative1d { s0: 0.7, theta: 0.2 };
            let z = cutoff_for(&m1, 0.5)?;
            let p = simulate_path(&m1, &f, 0.0, Vector::<1>::new(0.3), 1.0, 8, k)?;
            let h = Vector::<1>::new(1.0);
            let Ok(c) = accumulate_weight(&p, &m1, &f, 0.0, 1.0, &z, &h) else {
                skipped += 1;
                continue;
            };
            (c, mark_sampling_oracle(&p, &m1, &f, 0.0, 1.0, &z, &h, n_marks, k.child(9))?)
        } else {
            let f = Smooth2d { s0: 0.8, theta: 0.3 };
            let z = cutoff_for(&m2, 0.5)?;
            let p = simulate_path(&m2, &f, 0.0, Vector::<2>::new(0.1, -0.2), 1.0, 8, k)?;
            let h = Vector::<2>::new(0.6, -0.8);
            let Ok(c) = accumulate_weight(&p, &m2, &f, 0.0, 1.0, &z, &h) else {
                skipped += 1;
                continue;
            };
            (c, mark_sampling_oracle(&p, &m2, &f, 0.0, 1.0, &z, &h, n_marks, k.child(9))?)
        };
        total += 1;
        if (closed - est.mean).abs() <= 3.0 * est.stderr + 1e-12 * closed.abs() {
            agree += 1;
        }
    }
    // one jump y = 0.1 at s = 1/2, epsilon = 0.9, s0 = 1
    let m = measure(1, 0.01)?;
    let f = Additive::new(1.0);
    let ev = JumpEvent { time: 0.5, mark: Vector::<1>::new(0.1) };
    let path = euler_flow(&f, Vector::<1>::new(0.0), &[0.0, 1.0], &[(ev, false)]);
    let z = cutoff_for(&m, 0.9)?;
    let h = Vector::<1>::new(1.0);
    let single = accumulate_weight(&path, &m, &f, 0.0, 1.0, &z, &h)?;
    let oracle = mark_sampling_oracle(&path, &m, &f, 0.0, 1.0, &z, &h, 20 * n_marks, key.child(1 << 20))?;
    let checks = vec![
        Check::above("fraction within 3 s.e.", agree as f64 / total.max(1) as f64, 0.95),
        Check::below("paths without a defined weight", skipped as f64, 0.05 * n_paths as f64),
        Check::near("single-jump weight", single, 25.0, 0.0, 0.0, 25.0 * 1e-12),
        Check::near("single-jump oracle", oracle.mean, 25.0, oracle.stderr, 3.0, 25.0 * 1e-9),
    ];
    let note = format!("{total} paths ({} in d=2), {n_marks} auxiliary marks each", total / 2);
    Ok(CriterionResult::new(3, title(3), checks, scale.powered(), note))
}

// ------------------------------------------------------------------ 4

fn unbiasedness(scale: &Scale) -> Result<CriterionResult> {
    let n = scale.paths.max(20);
    let m = measure(1, 0.05)?;
    let c = ModelCoefficients::new(
        Arc::new(Multiplicative1d { s0: 0.7, theta: 0.2 }),
        Arc::new(ZeroDriver),
        Arc::new(SmoothTerminal),
    );
    let key = scale.key(4);
    let h = Vector::<1>::new(1.0);
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for (k, (t, x)) in [(0.0, 0.3), (0.7, -0.8)].into_iter().enumerate() {
        let cfg = bel_config(n);
        let mt = bel_measure(&m, &cfg, t, 1.0);
        let x = Vector::<1>::new(x);
        let bel = bel_gradient(&c, &mt, None, t, x, h, 1.0, &cfg, key.child(10 * k as u64))?;
        let fd = fd_gradient(&c, &mt, None, t, x, h, 1.0, &fd_config(n), key.child(10 * k as u64 + 1))?;
        checks.push(Check::agree(format!("bel vs fd at t={t}, x={}", x[0]), &bel.estimate(), &fd.estimate(), 3.0, 0.0));
        rows.push(bel);
        rows.push(fd);
    }
    let constant = c.with_terminal(Arc::new(ConstantTerminal(1.0)));
    let cfg = BelConfig { centered: false, ..bel_config(n) };
    let zero = bel_gradient(&constant, &m, None, 0.0, Vector::<1>::new(0.3), h, 1.0, &cfg, key.child(99))?;
    checks.push(Check::near("constant payoff, uncentered", zero.value, 0.0, zero.stderr, 3.0, 0.0));
    rows.push(zero);
    let table = gradient_table(&rows)?;
    Ok(CriterionResult::new(4, title(4), checks, scale.powered(), format!("{n} paths per estimate")).with_table("gradients", table))
}

// ------------------------------------------------------------------ 5

fn weight_scaling(scale: &Scale) -> Result<CriterionResult> {
    let n = scale.paths.max(20);
    let m = measure(1, 0.05)?;
    let elapsed = [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0];
    let rep = weight_moment_scaling(
        &m,
        &Additive::new(1.0),
        0.0,
        Vector::<1>::new(0.0),
        &Vector::<1>::new(1.0),
        &[2.0],
        &elapsed,
        n,
        4,
        scale.key(5),
    )?;
    let mut checks = vec![Check::near(
        "log-log slope of E[U^2]^(1/2)",
        rep.slopes[0],
        rep.expected_slope(),
        rep.slope_stderr[0],
        0.0,
        0.15,
    )];
    for row in &rep.rows {
        checks.push(Check::below(format!("invalid fraction at tau-t={}", row.elapsed), row.invalid_fraction, 1e-3));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["elapsed", "epsilon", "rms_weight", "invalid_fraction"]).expect("in-memory csv");
    for row in &rep.rows {
        w.serialize((row.elapsed, row.epsilon, row.moments[0], row.invalid_fraction)).expect("in-memory csv");
    }
    let table = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv");
    let note = format!("simulated with truncation radius {}", rep.truncation_radius);
    Ok(CriterionResult::new(5, title(5), checks, scale.powered(), note).with_table("scaling", table))
}

// ------------------------------------------------------------------ 6

fn bounded_phi() -> Arc<FnTerminal> {
    Arc::new(FnTerminal { name: "1+tanh/2".into(), f: Arc::new(|x: f64| 1.0 + 0.5 * x.tanh()), df: None })
}

fn picard(scale: &Scale) -> Result<CriterionResult> {
    let m = measure(1, 0.05)?;
    let lambda = 0.5;
    let base = ModelCoefficients::new(Arc::new(Additive::new(0.5)), Arc::new(ZeroDriver), bounded_phi());
    let mut cfg = SolveConfig::new(1.0, SpaceGrid::new(3.0, 25)?);
    cfg.slices = 5;
    cfg.paths_per_node = scale.share(100, 20, 1000);
    cfg.tol = 1e-10;
    let key = scale.key(6);
    let (free, _) = solve_value_function(&base, &m, 0.0, &cfg, key)?;
    let (v, r) = solve_value_function(&base.with_driver(Arc::new(LinearDriver::new(lambda))), &m, 0.0, &cfg, key)?;
    let mut checks = vec![
        Check::holds("converged", r.converged),
        Check::near("first contraction ratio", r.contraction_ratios.first().copied().unwrap_or(f64::NAN), 0.5, 0.0, 0.0, 0.1),
    ];
    let worst_ratio = r.contraction_ratios.iter().cloned().fold(0.0, f64::max);
    checks.push(Check::below("largest contraction ratio", worst_ratio, 0.6));
    let mut worst: f64 = 0.0;
    let mut worst_se = 0.0;
    for j in 0..v.times.len() {
        let factor = (-lambda * (1.0 - v.times[j])).exp();
        for g in 0..v.grid.len::<1>() {
            let expected = factor * free.values[j][g];
            let tol = 3.0 * r.node_stderr[j][g] + 1e-3 * expected.abs();
            let excess = (v.values[j][g] - expected).abs() / tol;
            if excess > worst {
                worst = excess;
                worst_se = r.node_stderr[j][g];
            }
        }
    }
    let mut fixed_point = Check::below("fixed point error / (3 s.e. + 1e-3 |v|), worst node", worst, 1.0);
    fixed_point.stderr = worst_se;
    checks.push(fixed_point);
    let ratios = r.contraction_ratios.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    let note = format!("contraction ratios {ratios}; exact linear Picard gives lambda (T - t) / (n + 1)");
    Ok(CriterionResult::new(6, title(6), checks, scale.powered(), note))
}

// ------------------------------------------------------------------ 7

fn solve_grid(half_width: f64, nodes: usize, slices: usize, paths: usize) -> Result<SolveConfig> {
    let mut cfg = SolveConfig::new(1.0, SpaceGrid::new(half_width, nodes)?);
    cfg.slices = slices;
    cfg.paths_per_node = paths;
    Ok(cfg)
}

fn det_config(nodes: usize, slices: usize) -> Result<DeterministicConfig> {
    Ok(DeterministicConfig {
        horizon: 1.0,
        t_min: 0.0,
        grid: SpaceGrid::new(8.0, nodes)?,
        slices,
        dt: None,
        support: Support::Simulated,
    })
}

/// Node-wise comparison of a Monte Carlo solution with `reference(j, x)` on
/// `|x| <= width`: every node must satisfy `|d| <= z s.e. + envelope`.
pub(crate) fn grid_check(
    label: &str,
    mc: &ValueFunction<1>,
    report: &BsdeSolveReport,
    reference: impl Fn(usize, f64) -> f64,
    width: f64,
    envelope: f64,
) -> Check {
    let mut nodes = Vec::new();
    for j in 0..mc.times.len() {
        for g in 0..mc.grid.nodes_per_axis {
            let x = mc.grid.coordinate(g);
            if x.abs() <= width + 1e-12 {
                nodes.push(((mc.values[j][g] - reference(j, x)).abs(), report.node_stderr[j][g]));
            }
        }
    }
    let z = family_sigmas(nodes.len());
    let distance = nodes.iter().map(|n| n.0).fold(0.0, f64::max);
    let max_se = nodes.iter().map(|n| n.1).fold(0.0, f64::max);
    Check {
        check: format!("{label}: sup distance ({} nodes, {z:.2} s.e.)", nodes.len()),
        value: distance,
        reference: 0.0,
        stderr: max_se,
        tolerance: z * max_se + envelope,
        passed: nodes.iter().all(|(d, se)| *d <= z * se + envelope),
    }
}

/// `sup_j sup_{|x| <= width} |det_a - det_b|` at the nodes of `grid`.
pub(crate) fn det_gap(a: &ValueFunction<1>, b: &ValueFunction<1>, grid: &SpaceGrid, width: f64) -> f64 {
    let mut gap: f64 = 0.0;
    for j in 0..a.times.len() {
        for g in 0..grid.nodes_per_axis {
            let x = grid.coordinate(g);
            if x.abs() <= width + 1e-12 {
                gap = gap.max((interpolate_slice(a, j, x) - interpolate_slice(b, j, x)).abs());
            }
        }
    }
    gap
}

/// Error of the piecewise linear interpolant on `grid` of `v`, per slice.
fn interpolation_error(v: &ValueFunction<1>, grid: &SpaceGrid) -> Vec<f64> {
    (0..v.times.len())
        .map(|j| {
            let nodes: Vec<f64> = (0..grid.nodes_per_axis).map(|g| interpolate_slice(v, j, grid.coordinate(g))).collect();
            let n = 8 * (grid.nodes_per_axis - 1);
            (0..=n)
                .map(|k| {
                    let x = -grid.half_width + 2.0 * grid.half_width * k as f64 / n as f64;
                    (interpolate_slice(v, j, x) - grid.interpolate(&nodes, &Vector::<1>::new(x))).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

fn pde_comparison(scale: &Scale) -> Result<CriterionResult> {
    let m = measure(1, 0.05)?;
    let key = scale.key(7);
    let paths = scale.share(25, 20, 4000);
    let width = 2.0;
    let mut checks = Vec::new();

    // manufactured v* = e^{-t} cos x; the driver does not see (y, z)
    let kappa = 1.0;
    let forward = Arc::new(Additive::new(0.8));
    let p = make_manufactured(kappa, Arc::new(f64::cos), Some(Arc::new(|x: f64| -x.sin())), forward.clone(), &m, Support::Simulated, 1.0, 10.0)?;
    let slices = 20;
    let cfg = solve_grid(6.0, 25, slices, paths)?;
    let (mc, rep) = solve_value_function(&p.coefficients, &m, 0.0, &cfg, key.child(1))?;
    let coarse = deterministic_solve(&p.coefficients, &m, &det_config(161, slices)?)?;
    let fine = deterministic_solve(&p.coefficients, &m, &det_config(321, slices)?)?;
    let symbol = -generator_apply(forward.as_ref(), &m, Support::Simulated, |y: &Vector<1>| y[0].cos(), 0.0, &Vector::<1>::new(0.0))?;
    let dt = 1.0 / slices as f64;
    // second time derivative of the mild integrand is at most (c + kappa)^3
    let trapezoid = dt * dt / 12.0 * (symbol + kappa).powi(3);
    let det_envelope = 2.0 * det_gap(&coarse, &fine, &cfg.grid, width);
    checks.push(grid_check("manufactured, MC vs deterministic", &mc, &rep, |j, x| interpolate_slice(&fine, j, x), width, det_envelope + trapezoid));
    checks.push(grid_check("manufactured, MC vs exact", &mc, &rep, |j, x| p.v_star(mc.times[j], x), width, trapezoid));
    let det_exact = (0..fine.times.len())
        .flat_map(|j| (0..=40).map(move |k| (j, -width + 2.0 * width * k as f64 / 40.0)))
        .map(|(j, x)| (interpolate_slice(&fine, j, x) - p.v_star(fine.times[j], x)).abs())
        .fold(0.0, f64::max);
    checks.push(Check::below("manufactured, deterministic vs exact", det_exact, det_envelope.max(2e-3)));

    // kinked terminal with a linear driver
    let lambda = 0.5;
    let phi = KinkedTerminal { x0: 0.0, cap: 1.0 };
    let kinked = ModelCoefficients::new(forward.clone(), Arc::new(LinearDriver::new(lambda)), Arc::new(phi));
    let slices = 10;
    let cfg = solve_grid(6.0, 49, slices, paths)?;
    let (mc, rep) = solve_value_function(&kinked, &m, 0.0, &cfg, key.child(2))?;
    let coarse = deterministic_solve(&kinked, &m, &det_config(161, slices)?)?;
    let fine = deterministic_solve(&kinked, &m, &det_config(321, slices)?)?;
    let dt = 1.0 / slices as f64;
    // the fixed point amplifies per-step errors by 1 / (1 - lambda (T - t))
    let amplify = 1.0 / (1.0 - lambda);
    let interp = interpolation_error(&fine, &cfg.grid);
    let interp_sup = interp.iter().cloned().fold(0.0, f64::max);
    let trapezoid = amplify * lambda.powi(3) * dt * dt / 12.0;
    let mc_envelope = amplify * lambda * interp_sup + trapezoid;
    let det_envelope = 2.0 * det_gap(&coarse, &fine, &cfg.grid, width);
    checks.push(grid_check("kinked, MC vs deterministic", &mc, &rep, |j, x| interpolate_slice(&fine, j, x), width, det_envelope + mc_envelope));

    // mild identity v = P phi - lambda int P v at random (t, x)
    let n_mild = scale.share(50, 20, 2000);
    let points = 20;
    let z = family_sigmas(points);
    let mut rows = Vec::new();
    for i in 0..points as u64 {
        let j = 1 + (uniform(scale.seed ^ 7, 2 * i) * slices as f64) as usize;
        let j = j.min(slices);
        let t = mc.times[j];
        let x = -width + 2.0 * width * uniform(scale.seed ^ 7, 2 * i + 1);
        let xv = Vector::<1>::new(x);
        let lhs = mc.slice(j, &xv);
        let cell = ((x + cfg.grid.half_width) / cfg.grid.spacing()).floor() as usize;
        let se_lhs = rep.node_stderr[j][cell].max(rep.node_stderr[j][cell + 1]);
        let k = key.child(100 + i);
        let terminal = semigroup_apply(forward.as_ref(), &m, |y: &Vector<1>| phi.value(y), t, 1.0, xv, n_mild, 2, k.child(0))?;
        let mut integral = 0.0;
        let mut var = se_lhs * se_lhs + terminal.stderr * terminal.stderr;
        // slices j, j-1, ..., 0 run from t up to T
        for s in 0..=j {
            let w = if s == 0 || s == j { 0.5 * dt } else { dt };
            let est = if s == j {
                Estimate { mean: lhs, stderr: se_lhs, n: 0 }
            } else {
                let g = |y: &Vector<1>| if s == 0 { phi.value(y) } else { mc.slice(s, y) };
                semigroup_apply(forward.as_ref(), &m, g, t, mc.times[s], xv, n_mild, 2, k.child(1 + s as u64))?
            };
            integral += w * lambda * est.mean;
            var += (w * lambda * est.stderr).powi(2);
        }
        let rhs = terminal.mean - integral;
        let slack = interp[j] + lambda * (1.0 - t) * interp_sup + trapezoid;
        rows.push(Check::near(format!("mild identity at t={t:.2}, x={x:.3}"), lhs, rhs, var.sqrt(), z, slack));
    }
    checks.extend(rows);
    let note = format!(
        "MC grids 6.0/25 (manufactured) and 6.0/49 (kinked), {paths} paths per node; deterministic 161 and 321 nodes on 8.0; \
         comparisons on |x| <= {width}; mild identity with {n_mild} paths per semigroup"
    );
    Ok(CriterionResult::new(7, title(7), checks, scale.powered(), note))
}

// ------------------------------------------------------------------ 8

#[allow(clippy::too_many_arguments)]
fn three_way<const D: usize>(
    label: &str,
    c: &ModelCoefficients<D>,
    m: &StableLikeMeasure,
    v: Option<&ValueFunction<D>>,
    x: Vector<D>,
    h: Vector<D>,
    n: usize,
    variational_slack: f64,
    key: StreamKey,
    rows: &mut Vec<GradientEstimate>,
) -> Result<Vec<Check>> {
    let bel = bel_gradient(c, m, v, 0.0, x, h, 1.0, &bel_config(n), key.child(1))?;
    let fd = fd_gradient(c, m, v, 0.0, x, h, 1.0, &fd_config(n), key.child(2))?;
    let var = variational_gradient(c, m, v, 0.0, x, h, 1.0, &fd_config(n), key.child(3))?;
    let checks = vec![
        Check::agree(format!("{label}: bel vs fd"), &bel.estimate(), &fd.estimate(), 3.0, 0.0),
        Check::agree(format!("{label}: bel vs variational"), &bel.estimate(), &var.estimate(), 3.0, variational_slack),
        Check::agree(format!("{label}: fd vs variational"), &fd.estimate(), &var.estimate(), 3.0, variational_slack),
    ];
    rows.extend([bel, fd, var]);
    Ok(checks)
}

fn gradient_formula(scale: &Scale) -> Result<CriterionResult> {
    let key = scale.key(8);
    let beta_cfg = bel_config(20);
    let mut checks = Vec::new();
    let mut rows = Vec::new();

    let m1 = bel_measure(&measure(1, 0.05)?, &beta_cfg, 0.0, 1.0);
    let smooth1 = ModelCoefficients::new(
        Arc::new(Multiplicative1d { s0: 0.7, theta: 0.2 }),
        Arc::new(ZeroDriver),
        Arc::new(SmoothTerminal),
    );
    let (x1, h1) = (Vector::<1>::new(0.3), Vector::<1>::new(1.0));
    checks.extend(three_way("d=1 multiplicative", &smooth1, &m1, None, x1, h1, scale.share(2, 20, 50_000), 0.0, key.child(1), &mut rows)?);

    let m2 = bel_measure(&measure(2, 0.05)?, &beta_cfg, 0.0, 1.0);
    let smooth2 = ModelCoefficients::new(Arc::new(Smooth2d { s0: 0.8, theta: 0.3 }), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let (x2, h2) = (Vector::<2>::new(0.1, -0.2), Vector::<2>::new(0.8, 0.6));
    checks.extend(three_way("d=2 smooth", &smooth2, &m2, None, x2, h2, scale.share(4, 20, 25_000), 0.0, key.child(2), &mut rows)?);

    // linear driver with a solved v; the variational form differentiates the
    // exact equation, so it carries the grid error of v
    let linear = ModelCoefficients::new(Arc::new(Additive::new(0.8)), Arc::new(LinearDriver::new(0.5)), Arc::new(SmoothTerminal));
    let cfg = solve_grid(4.0, 33, 10, scale.share(100, 20, 1000))?;
    let (v, _) = solve_value_function(&linear, &m1, 0.0, &cfg, key.child(3))?;
    checks.extend(three_way("d=1 linear driver", &linear, &m1, Some(&v), x1, h1, scale.share(4, 20, 25_000), 0.02, key.child(4), &mut rows)?);

    // kinked terminal: weights stay finite and under the envelope
    let m = measure(1, 0.05)?;
    let kinked = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(KinkedTerminal { x0: 0.0, cap: 1.0 }));
    let xk = Vector::<1>::new(0.1);
    let elapsed = [0.05, 0.1, 0.2, 0.5, 1.0];
    let rep = gradient_scaling_experiment(&kinked, &m, xk, h1, 1.0, &elapsed, 1.0, 1.0, &bel_config(scale.share(10, 20, 10_000)), key.child(5))?;
    for row in &rep.rows {
        checks.push(Check::below(
            format!("kinked |grad v| - 3 s.e. under envelope, T-t={}", row.elapsed),
            row.value.abs() - 3.0 * row.stderr,
            row.envelope,
        ));
    }
    checks.push(Check::holds("kinked estimates finite", rep.rows.iter().all(|r| r.value.is_finite() && r.stderr.is_finite())));
    checks.push(Check::near("kinked E|U_T| log-log slope", rep.weight_slope, rep.expected_slope(), rep.weight_slope_stderr, 0.0, 0.15));
    let n = scale.share(2, 20, 50_000);
    let mk = bel_measure(&m, &beta_cfg, 0.0, 1.0);
    let bel = bel_gradient(&kinked, &mk, None, 0.0, xk, h1, 1.0, &bel_config(n), key.child(6))?;
    let fd = fd_gradient(&kinked, &mk, None, 0.0, xk, h1, 1.0, &fd_config(n), key.child(7))?;
    checks.push(Check::agree("kinked: bel vs fd", &bel.estimate(), &fd.estimate(), 3.0, 0.0));
    let refused = matches!(variational_gradient(&kinked, &mk, None, 0.0, xk, h1, 1.0, &fd_config(20), key), Err(Error::Capability(_)));
    checks.push(Check::holds("kinked: variational reports a capability error", refused));
    rows.extend([bel, fd]);

    let zero = Vector::<1>::zeros();
    let zeros = [
        bel_gradient(&smooth1, &m1, None, 0.0, x1, zero, 1.0, &bel_config(20), key)?.value,
        fd_gradient(&smooth1, &m1, None, 0.0, x1, zero, 1.0, &fd_config(20), key)?.value,
        variational_gradient(&smooth1, &m1, None, 0.0, x1, zero, 1.0, &fd_config(20), key)?.value,
    ];
    checks.push(Check::holds("h = 0 gives exact zeros", zeros.iter().all(|z| *z == 0.0)));

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["elapsed", "value", "stderr", "weight_abs_mean", "weight_abs_stderr", "envelope"]).expect("in-memory csv");
    for r in &rep.rows {
        w.serialize((r.elapsed, r.value, r.stderr, r.weight_abs_mean, r.weight_abs_stderr, r.envelope)).expect("in-memory csv");
    }
    let scaling = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv");
    let note = format!("kinked envelope constant C = {:.4} with mu = 1", rep.weight_constant);
    Ok(CriterionResult::new(8, title(8), checks, scale.powered(), note)
        .with_table("gradients", gradient_table(&rows)?)
        .with_table("kinked_scaling", scaling))
}

// ------------------------------------------------------------------ 9

fn mollification(scale: &Scale) -> Result<CriterionResult> {
    let n = scale.share(2, 20, 50_000);
    let m = measure(1, 0.05)?;
    let cfg = bel_config(n);
    let kink = KinkedTerminal { x0: 0.0, cap: 1.0 };
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(kink));
    let (t, x, h) = (0.5, Vector::<1>::new(0.5), Vector::<1>::new(1.0));
    let key = scale.key(9);
    let raw = bel_gradient(&c, &m, None, t, x, h, 1.0, &cfg, key)?;
    let mut checks = Vec::new();
    let mut rows = vec![raw.clone()];
    for k in [4, 16, 64] {
        let f = Arc::new(move |y: f64| kink.value(&Vector::<1>::new(y)));
        let smooth = c.with_terminal(Arc::new(mollify_terminal("kinked", f, k)));
        let est = bel_gradient(&smooth, &m, None, t, x, h, 1.0, &cfg, key)?;
        checks.push(Check::agree(format!("mollified n={k} vs kinked"), &est.estimate(), &raw.estimate(), 3.0, 0.0));
        rows.push(est);
    }
    let note = "same paths for every terminal function; the rows of gradients.csv are kinked, n=4, n=16, n=64";
    Ok(CriterionResult::new(9, title(9), checks, scale.powered(), note).with_table("gradients", gradient_table(&rows)?))
}

// ------------------------------------------------------------------ 10

fn fingerprint(results: &[CriterionResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&r.checks_csv());
        for (_, t) in &r.tables {
            out.push_str(t);
        }
    }
    out
}

/// Criteria 4 and 6 at reduced size under one worker, four workers and the
/// global pool. The end-to-end comparison of two `verify` runs lives in the
/// acceptance tests.
fn reproducibility(scale: &Scale) -> Result<CriterionResult> {
    let small = Scale { paths: scale.paths.min(2_000), seed: scale.seed };
    let once = || fingerprint(&[run(4, &small), run(6, &small)]);
    let pool = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Domain(format!("thread pool: {e}")))
    };
    let single = pool(1)?.install(once);
    let four = pool(4)?.install(once);
    let global = once();
    let checks = vec![
        Check::holds("one worker vs four workers", single == four),
        Check::holds("one worker vs global pool", single == global),
        Check::above("bytes compared", single.len() as f64, 1.0),
    ];
    Ok(CriterionResult::new(10, title(10), checks, true, format!("criteria 4 and 6 at {} paths", small.paths)))
}
