//! Subcommands. Each returns the process exit code.

use std::path::{Path, PathBuf};
use std::time::Instant;

use levyfbsde_core::bsde_engine::{solve_value_function, BsdeSolveReport, SpaceGrid, ValueFunction};
use levyfbsde_core::forward_flow::{moment_check, simulate_path, write_path_csv};
use levyfbsde_core::gradient_estimator::{
    bel_gradient, fd_gradient, gradient_scaling_experiment, variational_gradient, write_gradient_csv, GradientEstimate,
    GradientScalingReport,
};
use levyfbsde_core::levy_model::{check_assumptions, inverse_moment_check, StableLikeMeasure, Support};
use levyfbsde_core::malliavin_weights::weight_moment_scaling;
use levyfbsde_core::pde_solver::{deterministic_solve, interpolate_slice, DeterministicConfig};
use levyfbsde_core::rng::StreamKey;
use levyfbsde_core::{Error, Vector};
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig};
use crate::criteria::{self, Check, CriterionResult, Scale, Status, MIN_POWERED_PATHS};
use crate::manifest::{CriterionStatus, OutputDir, RunManifest};
use crate::registry::{self, Built, BuiltModel};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNDERPOWERED: i32 = 3;

/// Seed of the reference configuration when neither a config nor `--seed`
/// is given.
pub const DEFAULT_SEED: u64 = 20_240_917;

pub const RESULTS_FILE: &str = "results.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    CheckMeasure,
    SimulateForward,
    SolvePde,
    EstimateGradient,
    Scaling,
    Verify,
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CheckMeasure => "check-measure",
            Command::SimulateForward => "simulate-forward",
            Command::SolvePde => "solve-pde",
            Command::EstimateGradient => "estimate-gradient",
            Command::Scaling => "scaling",
            Command::Verify => "verify",
            Command::Report => "report",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: Option<usize>,
    pub threads: Option<usize>,
}

#[derive(Debug)]
enum RunError {
    Config(ConfigError),
    Core(Error),
    Io(std::io::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

type Run<T> = std::result::Result<T, RunError>;

struct Outcome {
    exit: i32,
    criteria: Vec<CriterionStatus>,
}

impl Outcome {
    fn plain(exit: i32) -> Self {
        Self { exit, criteria: Vec::new() }
    }

    fn from_checks(checks: &[Check], powered: bool) -> Self {
        if !checks.iter().all(|c| c.passed) && powered {
            Self::plain(EXIT_FAILURE)
        } else if !powered {
            Self::plain(EXIT_UNDERPOWERED)
        } else {
            Self::plain(EXIT_PASS)
        }
    }
}

fn load(opts: &Options) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &opts.config {
        Some(path) => ExperimentConfig::load(path, opts.seed)?,
        None => ExperimentConfig::reference(opts.seed.unwrap_or(DEFAULT_SEED)),
    };
    if let Some(n) = opts.paths {
        if n == 0 {
            return Err(ConfigError("--paths must be positive".into()));
        }
        cfg.estimator.n_paths = n;
    }
    Ok(cfg)
}

fn out_dir(cmd: Command, opts: &Options, cfg: &ExperimentConfig) -> PathBuf {
    opts.out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("levyfbsde-out").join(cmd.name()))
}

pub fn execute(cmd: Command, opts: &Options) -> i32 {
    let started = Instant::now();
    if cmd == Command::Report {
        return report(opts);
    }
    let cfg = match load(opts) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
    };
    let dir = out_dir(cmd, opts, &cfg);
    let mut out = match OutputDir::create(&dir) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("cannot create {}: {e}", dir.display());
            return EXIT_FAILURE;
        }
    };
    log::info!("{} with config {} into {}", cmd.name(), cfg.hash(), dir.display());
    let result = match cmd {
        Command::CheckMeasure => check_measure(&cfg, &mut out),
        Command::SimulateForward => simulate_forward(&cfg, &mut out),
        Command::SolvePde => solve_pde(&cfg, &mut out),
        Command::EstimateGradient => estimate_gradient(&cfg, &mut out),
        Command::Scaling => scaling(&cfg, &mut out),
        Command::Verify => verify(&cfg, &mut out),
        Command::Report => unreachable!(),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(RunError::Config(e)) => {
            eprintln!("{e}");
            return EXIT_CONFIG;
        }
        Err(e) => {
            eprintln!("{}: {e}", cmd.name());
            Outcome::plain(EXIT_FAILURE)
        }
    };
    let manifest = RunManifest {
        command: cmd.name().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").into(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
        exit_code: outcome.exit,
        criteria: outcome.criteria,
        artifacts: Vec::new(),
    };
    if let Err(e) = out.finish(manifest) {
        eprintln!("cannot write the manifest: {e}");
        return EXIT_FAILURE;
    }
    outcome.exit
}

fn csv_string<F: FnOnce(&mut Vec<u8>) -> levyfbsde_core::Result<()>>(f: F) -> Run<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn vector<const D: usize>(v: &[f64]) -> Vector<D> {
    Vector::<D>::from_column_slice(v)
}

fn model(cfg: &ExperimentConfig, m: &StableLikeMeasure) -> Run<BuiltModel> {
    let spec = registry::parse(&cfg.model, cfg.measure.dim)?;
    Ok(registry::build(&spec, cfg.forward, m, cfg.horizon.horizon)?)
}

// ------------------------------------------------------------ check-measure

#[derive(Serialize)]
struct MeasureReport {
    checks: Vec<Check>,
    assumptions: levyfbsde_core::levy_model::AssumptionReport,
    inverse_moments: Option<levyfbsde_core::levy_model::InverseMomentReport>,
}

fn check_measure(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let m = cfg.measure.build()?;
    let assumptions = check_assumptions(&m)?;
    let mut checks: Vec<Check> = assumptions.failures.iter().map(|f| Check::holds(f.clone(), false)).collect();
    checks.push(Check::holds("assumption checks", assumptions.passed()));
    // closed forms hold for a constant amplitude
    if let levyfbsde_core::levy_model::Amplitude::Constant(a) = m.amplitude {
        for p in [2.0, 3.0] {
            for eps in [0.9, 0.3, 0.05] {
                let closed = m.sphere_area() * a * f64::powf(eps, p - m.beta) / (p - m.beta);
                checks.push(Check::near(format!("moment p={p} eps={eps}"), m.moment_integral(p, eps)?, closed, 0.0, 0.0, 1e-6 * closed));
            }
        }
    }
    let inverse_moments = if assumptions.symmetric {
        let n = cfg.estimator.n_paths.min(4000);
        let r = inverse_moment_check(&m, 1.0, &[0.25, 0.5, 1.0], &[0.25, 0.5, 1.0], n, StreamKey::new(cfg.seed).child(1))?;
        checks.push(Check::holds("inverse moments finite and monotone", r.passed()));
        Some(r)
    } else {
        None
    };
    for c in &checks {
        println!("{} {}", if c.passed { "ok  " } else { "FAIL" }, c.check);
    }
    let report = MeasureReport { checks, assumptions, inverse_moments };
    out.write_json("check_measure.json", &report)?;
    Ok(Outcome::from_checks(&report.checks, true))
}

// ---------------------------------------------------------- simulate-forward

fn simulate_forward(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let m = cfg.measure.build()?;
    match model(cfg, &m)? {
        BuiltModel::One(b) => simulate_dim(cfg, &m, &b, out),
        BuiltModel::Two(b) => simulate_dim(cfg, &m, &b, out),
    }
}

fn simulate_dim<const D: usize>(cfg: &ExperimentConfig, m: &StableLikeMeasure, b: &Built<D>, out: &mut OutputDir) -> Run<Outcome> {
    let forward = b.coefficients.forward.as_ref();
    let (t, horizon) = (cfg.horizon.t, cfg.horizon.horizon);
    let x = vector::<D>(&cfg.point());
    let key = StreamKey::new(cfg.seed).child(2);
    let path = simulate_path(m, forward, t, x, horizon, cfg.estimator.n_steps, key.child(0))?;
    out.write("path_0.csv", &csv_string(|buf| write_path_csv(&path, buf))?)?;
    let mut starts = vec![x];
    for shift in [1.0, 3.0] {
        let mut s = x;
        s[0] += shift;
        starts.push(s);
    }
    let report = moment_check(m, forward, &starts, t, horizon, 2.0, cfg.estimator.n_steps, cfg.estimator.n_paths, key.child(1))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x_norm", "sup_moment", "sup_moment_stderr", "ratio", "ratio_stderr"]).map_err(|e| Error::Domain(e.to_string()))?;
    for r in &report.rows {
        w.serialize((r.x_norm, r.sup_moment.mean, r.sup_moment.stderr, r.ratio.mean, r.ratio.stderr))
            .map_err(|e| Error::Domain(e.to_string()))?;
    }
    out.write("moments.csv", &w.into_inner().map_err(|e| Error::Domain(e.to_string()))?)?;
    out.write_json("moments.json", &report)?;
    println!("{} paths; E[sup|X|^2]/(1+|x|^2) at most {:.4}", cfg.estimator.n_paths, report.max_ratio);
    let powered = cfg.estimator.n_paths >= MIN_POWERED_PATHS;
    Ok(Outcome::from_checks(&[Check::holds("finite moments", report.max_ratio.is_finite())], powered))
}

// ----------------------------------------------------------------- solve-pde

#[derive(Serialize)]
struct SolveSummary {
    report: BsdeSolveReport,
    checks: Vec<Check>,
}

fn solve_pde(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let m = cfg.measure.build()?;
    let solve_cfg = cfg.grid.solve_config(cfg.horizon.horizon)?;
    let key = StreamKey::new(cfg.seed).child(3);
    let (checks, report) = match model(cfg, &m)? {
        BuiltModel::One(b) => {
            let (v, report) = solve_value_function(&b.coefficients, &m, cfg.horizon.t, &solve_cfg, key)?;
            out.write("value_function.csv", &csv_string(|buf| v.write(buf))?)?;
            let mut checks = vec![Check::holds("Picard converged", report.converged)];
            let width = 0.5 * cfg.grid.half_width;
            if cfg.grid.deterministic_nodes > 0 {
                let solve = |nodes: usize| -> Run<ValueFunction<1>> {
                    let det_cfg = DeterministicConfig {
                        horizon: cfg.horizon.horizon,
                        t_min: cfg.horizon.t,
                        grid: SpaceGrid::new(2.0 * cfg.grid.half_width, nodes)?,
                        slices: cfg.grid.slices,
                        dt: None,
                        support: Support::Simulated,
                    };
                    Ok(deterministic_solve(&b.coefficients, &m, &det_cfg)?)
                };
                let det = solve(cfg.grid.deterministic_nodes)?;
                let fine = solve(2 * cfg.grid.deterministic_nodes - 1)?;
                out.write("deterministic.csv", &csv_string(|buf| fine.write(buf))?)?;
                // refinement gap plus a fixed allowance for the time quadrature
                let envelope = 2.0 * criteria::det_gap(&det, &fine, &v.grid, width) + 1e-3;
                checks.push(criteria::grid_check("MC vs deterministic", &v, &report, |j, x| interpolate_slice(&fine, j, x), width, envelope));
            }
            if let Some(p) = &b.manufactured {
                checks.push(criteria::grid_check("MC vs exact", &v, &report, |j, x| p.v_star(v.times[j], x), width, 1e-3));
            }
            (checks, report)
        }
        BuiltModel::Two(b) => {
            let (v, report) = solve_value_function(&b.coefficients, &m, cfg.horizon.t, &solve_cfg, key)?;
            out.write("value_function.csv", &csv_string(|buf| v.write(buf))?)?;
            (vec![Check::holds("Picard converged", report.converged)], report)
        }
    };
    for c in &checks {
        println!("{} {}: {:.4e} (tolerance {:.2e})", if c.passed { "ok  " } else { "FAIL" }, c.check, c.value, c.tolerance);
    }
    let powered = cfg.grid.paths_per_node * cfg.grid.nodes_per_axis >= MIN_POWERED_PATHS;
    let outcome = Outcome::from_checks(&checks, powered);
    out.write_json("solve_report.json", &SolveSummary { report, checks })?;
    Ok(outcome)
}

// --------------------------------------------------------- estimate-gradient

#[derive(Serialize)]
struct GradientReport {
    rows: Vec<GradientEstimate>,
    checks: Vec<Check>,
    notes: Vec<String>,
}

fn estimate_gradient(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let m = cfg.measure.build()?;
    let report = match model(cfg, &m)? {
        BuiltModel::One(b) => gradients(cfg, &m, &b)?,
        BuiltModel::Two(b) => gradients(cfg, &m, &b)?,
    };
    out.write("gradients.csv", &csv_string(|buf| write_gradient_csv(&report.rows, buf))?)?;
    for r in &report.rows {
        println!("{:<12} {:+.6} +- {:.6}", r.method.name(), r.value, r.stderr);
    }
    for n in &report.notes {
        println!("note: {n}");
    }
    let powered = cfg.estimator.n_paths >= MIN_POWERED_PATHS;
    let outcome = Outcome::from_checks(&report.checks, powered);
    out.write_json("gradient_report.json", &report)?;
    Ok(outcome)
}

fn gradients<const D: usize>(cfg: &ExperimentConfig, m: &StableLikeMeasure, b: &Built<D>) -> Run<GradientReport> {
    let c = &b.coefficients;
    let (t, horizon) = (cfg.horizon.t, cfg.horizon.horizon);
    let (x, h) = (vector::<D>(&cfg.point()), vector::<D>(&cfg.direction()));
    let bel_cfg = cfg.estimator.bel();
    let eps_min = bel_cfg.schedule.min_epsilon(m.beta, t, t, horizon);
    let mt = m.with_truncation(bel_cfg.truncation.radius(m, eps_min));
    let key = StreamKey::new(cfg.seed).child(4);
    let mut notes = Vec::new();
    let v = if c.driver.is_zero() {
        None
    } else {
        let (v, r) = solve_value_function(c, &mt, t, &cfg.grid.solve_config(horizon)?, key.child(0))?;
        notes.push(format!("value function solved in {} Picard iterates", r.iterates));
        Some(v)
    };
    let fd_cfg = cfg.estimator.fd();
    let mut rows = vec![
        bel_gradient(c, &mt, v.as_ref(), t, x, h, horizon, &bel_cfg, key.child(1))?,
        fd_gradient(c, &mt, v.as_ref(), t, x, h, horizon, &fd_cfg, key.child(2))?,
    ];
    match variational_gradient(c, &mt, v.as_ref(), t, x, h, horizon, &fd_cfg, key.child(3)) {
        Ok(r) => rows.push(r),
        Err(Error::Capability(msg)) => notes.push(format!("variational: {msg}")),
        Err(e) => return Err(e.into()),
    }
    let mut checks = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let (a, b) = (&rows[i], &rows[j]);
            checks.push(Check::agree(format!("{} vs {}", a.method.name(), b.method.name()), &a.estimate(), &b.estimate(), 3.0, 0.0));
        }
    }
    Ok(GradientReport { rows, checks, notes })
}

// ------------------------------------------------------------------ scaling

#[derive(Serialize)]
struct ScalingSummary {
    weights: levyfbsde_core::malliavin_weights::WeightScalingReport,
    gradient: Option<GradientScalingReport>,
    checks: Vec<Check>,
}

fn scaling(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let m = cfg.measure.build()?;
    let summary = match model(cfg, &m)? {
        BuiltModel::One(b) => scaling_dim(cfg, &m, &b)?,
        BuiltModel::Two(b) => scaling_dim(cfg, &m, &b)?,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Domain(e.to_string());
    w.write_record(["elapsed", "epsilon", "p", "moment", "invalid_fraction"]).map_err(err)?;
    for row in &summary.weights.rows {
        for (p, mo) in summary.weights.p_values.iter().zip(&row.moments) {
            w.serialize((row.elapsed, row.epsilon, p, mo, row.invalid_fraction)).map_err(err)?;
        }
    }
    out.write("scaling.csv", &w.into_inner().map_err(|e| Error::Domain(e.to_string()))?)?;
    if let Some(g) = &summary.gradient {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["elapsed", "value", "stderr", "weight_abs_mean", "weight_abs_stderr", "envelope"]).map_err(err)?;
        for r in &g.rows {
            w.serialize((r.elapsed, r.value, r.stderr, r.weight_abs_mean, r.weight_abs_stderr, r.envelope)).map_err(err)?;
        }
        out.write("gradient_scaling.csv", &w.into_inner().map_err(|e| Error::Domain(e.to_string()))?)?;
    }
    for c in &summary.checks {
        println!("{} {}: {:.4} (reference {:.4}, tolerance {:.2})", if c.passed { "ok  " } else { "FAIL" }, c.check, c.value, c.reference, c.tolerance);
    }
    let powered = cfg.estimator.n_paths >= MIN_POWERED_PATHS;
    let outcome = Outcome::from_checks(&summary.checks, powered);
    out.write_json("scaling.json", &summary)?;
    Ok(outcome)
}

fn scaling_dim<const D: usize>(cfg: &ExperimentConfig, m: &StableLikeMeasure, b: &Built<D>) -> Run<ScalingSummary> {
    let (t, horizon) = (cfg.horizon.t, cfg.horizon.horizon);
    let span = horizon - t;
    let elapsed: Vec<f64> = [0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0].iter().map(|e| e * span).collect();
    let (x, h) = (vector::<D>(&cfg.point()), vector::<D>(&cfg.direction()));
    let key = StreamKey::new(cfg.seed).child(5);
    let n = cfg.estimator.n_paths.max(20);
    let weights = weight_moment_scaling(m, b.coefficients.forward.as_ref(), t, x, &h, &[1.0, 2.0], &elapsed, n, cfg.estimator.n_steps, key)?;
    let mut checks = Vec::new();
    for (p, (s, se)) in weights.p_values.iter().zip(weights.slopes.iter().zip(&weights.slope_stderr)) {
        checks.push(Check::near(format!("weight moment slope p={p}"), *s, weights.expected_slope(), *se, 0.0, 0.15));
    }
    let gradient = match (b.coefficients.driver.is_zero(), b.phi_oscillation) {
        (true, Some(osc)) => {
            let bel = cfg.estimator.bel();
            let bel = levyfbsde_core::gradient_estimator::BelConfig { n_paths: n, ..bel };
            let g = gradient_scaling_experiment(&b.coefficients, m, x, h, horizon, &elapsed, osc, 1.0, &bel, key.child(1))?;
            checks.push(Check::holds("gradient under the fitted envelope", g.within_envelope));
            Some(g)
        }
        _ => None,
    };
    Ok(ScalingSummary { weights, gradient, checks })
}

// ------------------------------------------------------------------- verify

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyResults {
    pub config_hash: String,
    pub seed: u64,
    pub paths: usize,
    pub criteria: Vec<CriterionResult>,
}

pub fn exit_code(statuses: impl IntoIterator<Item = Status>) -> i32 {
    let statuses: Vec<Status> = statuses.into_iter().collect();
    if statuses.contains(&Status::Fail) {
        EXIT_FAILURE
    } else if statuses.contains(&Status::Underpowered) {
        EXIT_UNDERPOWERED
    } else {
        EXIT_PASS
    }
}

fn verify(cfg: &ExperimentConfig, out: &mut OutputDir) -> Run<Outcome> {
    let scale = Scale { paths: cfg.estimator.n_paths, seed: cfg.seed };
    let mut results = Vec::new();
    for id in criteria::CRITERIA {
        let started = Instant::now();
        let r = criteria::run(id, &scale);
        println!("{}  ({:.1}s)", r.summary_line(), started.elapsed().as_secs_f64());
        for line in r.detail_lines() {
            log::debug!("{line}");
        }
        out.write(&format!("criterion_{id:02}.csv"), r.checks_csv().as_bytes())?;
        for (name, table) in &r.tables {
            out.write(&format!("criterion_{id:02}_{name}.csv"), table.as_bytes())?;
        }
        results.push(r);
    }
    let exit = exit_code(results.iter().map(|r| r.status));
    let criteria = results.iter().map(|r| CriterionStatus { id: r.id, status: r.status }).collect();
    out.write_json(RESULTS_FILE, &VerifyResults { config_hash: cfg.hash(), seed: cfg.seed, paths: scale.paths, criteria: results })?;
    Ok(Outcome { exit, criteria })
}

// ------------------------------------------------------------------- report

fn report(opts: &Options) -> i32 {
    let dir = opts.out.clone().unwrap_or_else(|| PathBuf::from("levyfbsde-out").join("verify"));
    match read_results(&dir) {
        Ok(results) => {
            println!("results of {} (config {}, {} paths)", dir.display(), results.config_hash, results.paths);
            for r in &results.criteria {
                println!("{}", r.summary_line());
                for line in r.detail_lines() {
                    println!("{line}");
                }
                if !r.note.is_empty() {
                    println!("    note: {}", r.note);
                }
            }
            exit_code(results.criteria.iter().map(|r| r.status))
        }
        Err(e) => {
            eprintln!("{e}");
            EXIT_CONFIG
        }
    }
}

pub fn read_results(dir: &Path) -> Result<VerifyResults, ConfigError> {
    let path = dir.join(RESULTS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
}
