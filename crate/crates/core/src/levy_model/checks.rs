//! Numerical checks of the structural assumptions on the measure and of the
//! inverse-moment bound for the small-jump functional.

use serde::{Deserialize, Serialize};

use super::{norm, JumpSampler, StableLikeMeasure};
use crate::error::{domain, Error, Result};
use crate::rng::StreamKey;
use crate::stats::{par_indexed, Estimate};

/// Outcome of [`check_assumptions`]. Every bound is reported with the
/// sample maximum that was observed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub symmetric: bool,
    /// Largest `|a(u) - a(-u)|` on the sample grid.
    pub symmetry_defect: f64,
    pub amplitude_bounds: (f64, f64),
    /// Sample maximum of `|u| |grad log k(u)|`.
    pub log_gradient_constant: f64,
    /// Sample maximum of `int_{|u|<=eps} |u|^p nu(du) / eps^{p-beta}` over
    /// `p in {2, 3}` and `eps in [1e-3, 1]`.
    pub moment_constant: f64,
    /// Sample maximum of `nu(|u| > eps) eps^beta` over `eps in [1e-3, 1)`.
    pub tail_constant: f64,
    /// `nu(|u| > 1e-4) / nu(|u| > 1e-2)`; grows without bound iff `nu` is infinite.
    pub mass_growth: f64,
    /// Laplace-functional ratio at `lambda = 1e6` and `1e8`.
    pub laplace_ratios: (f64, f64),
    pub failures: Vec<String>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn sample_marks(dim: usize) -> Vec<Vec<f64>> {
    let radii: Vec<f64> = (0..41).map(|k| 10f64.powf(-4.0 + 4.0 * k as f64 / 40.0)).collect();
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    if dim == 2 {
        for j in 0..16 {
            let phi = std::f64::consts::PI * 2.0 * (j as f64 + 0.3) / 16.0;
            dirs.push(vec![phi.cos(), phi.sin()]);
        }
    } else {
        for i in 0..dim {
            for s in [-1.0, 1.0] {
                let mut e = vec![0.0; dim];
                e[i] = s;
                dirs.push(e);
            }
        }
    }
    let mut out = Vec::new();
    for r in &radii {
        for d in &dirs {
            out.push(d.iter().map(|x| x * r).collect());
        }
    }
    out
}

/// Checks symmetry, amplitude bounds, the log-gradient bound, the moment and
/// tail orders, infinite total mass and the Laplace-functional plateau.
pub fn check_assumptions(m: &StableLikeMeasure) -> Result<AssumptionReport> {
    let mut failures = Vec::new();
    let marks = sample_marks(m.dim);

    let mut symmetry_defect: f64 = 0.0;
    let mut log_gradient_constant: f64 = 0.0;
    for u in &marks {
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        symmetry_defect = symmetry_defect.max((m.amplitude.value(u) - m.amplitude.value(&neg)).abs());
        let g = m.log_density_grad(u)?;
        log_gradient_constant = log_gradient_constant.max(norm(&g) * norm(u));
    }
    let symmetric = symmetry_defect <= 1e-12;
    if !symmetric {
        failures.push(format!("amplitude is not symmetric (defect {symmetry_defect:.3e})"));
    }
    let amplitude_bounds = m.amplitude.bounds();
    if !(amplitude_bounds.0 > 0.0) || !amplitude_bounds.1.is_finite() {
        failures.push(format!("amplitude bounds {amplitude_bounds:?} not in (0, inf)"));
    }
    if !log_gradient_constant.is_finite() {
        failures.push("log-density gradient bound is not finite".into());
    }

    let eps_grid: Vec<f64> = (0..31).map(|k| 10f64.powf(-3.0 + 3.0 * k as f64 / 30.0)).collect();
    let mut moment_constant: f64 = 0.0;
    for p in [2.0, 3.0] {
        for &e in &eps_grid {
            moment_constant = moment_constant.max(m.moment_integral(p, e)? / e.powf(p - m.beta));
        }
    }
    let mut tail_constant: f64 = 0.0;
    for &e in eps_grid.iter().filter(|e| **e < 1.0) {
        tail_constant = tail_constant.max(m.tail_mass(e)? * e.powf(m.beta));
    }
    // With a0 <= a <= a1 both ratios are bounded by a1 |S^{l-1}| / (p - beta)
    // and a1 |S^{l-1}| / beta; a violation means the quadrature is broken.
    let (_, a1) = amplitude_bounds;
    let area = m.sphere_area();
    let moment_bound = a1 * area / (2.0 - m.beta) * (1.0 + 1e-6);
    if !(moment_constant <= moment_bound) {
        failures.push(format!("moment ratio {moment_constant} exceeds {moment_bound}"));
    }
    let tail_bound = a1 * area / m.beta * (1.0 + 1e-6);
    if !(tail_constant <= tail_bound) {
        failures.push(format!("tail ratio {tail_constant} exceeds {tail_bound}"));
    }

    let mass_growth = m.tail_mass(1e-4)? / m.tail_mass(1e-2)?;
    // for an infinite measure the ratio is about 100^beta
    if !(mass_growth > 10f64.powf(m.beta)) {
        failures.push(format!("total mass does not diverge (growth {mass_growth})"));
    }

    let laplace_ratios = (m.laplace_functional_ratio(1e6)?, m.laplace_functional_ratio(1e8)?);
    let rel = (laplace_ratios.0 - laplace_ratios.1).abs() / laplace_ratios.1;
    if !(laplace_ratios.1 > 0.0 && rel < 0.02) {
        failures.push(format!("Laplace ratio has no plateau: {laplace_ratios:?}"));
    }

    Ok(AssumptionReport {
        symmetric,
        symmetry_defect,
        amplitude_bounds,
        log_gradient_constant,
        moment_constant,
        tail_constant,
        mass_growth,
        laplace_ratios,
        failures,
    })
}

/// Monte Carlo estimate of `E[S^{-p}]`, `S = sum |y|^3` over the jumps of a
/// window of length `horizon` with `|y| <= eps`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseMomentCell {
    pub eps: f64,
    pub horizon: f64,
    pub estimate: Estimate,
    /// `(horizon eps^{3-beta})^{-p} + horizon^{-3p/beta}`.
    pub envelope: f64,
    /// Paths without a jump below `eps`; they are left out, which is the
    /// same in law as resampling them.
    pub zero_jump_paths: usize,
    pub under_resolved: bool,
}

impl InverseMomentCell {
    pub fn ratio(&self) -> f64 {
        self.estimate.mean / self.envelope
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InverseMomentReport {
    pub p: f64,
    pub cells: Vec<InverseMomentCell>,
    /// `max` over resolved cells of estimate / envelope.
    pub fitted_constant: f64,
    /// Estimates decrease in both `horizon` and `eps`.
    pub monotone: bool,
    pub under_resolved: bool,
}

impl InverseMomentReport {
    pub fn passed(&self) -> bool {
        !self.under_resolved && self.monotone && self.fitted_constant.is_finite()
    }
}

/// Jump times and mark sizes, whatever the dimension.
enum RadialSampler {
    One(JumpSampler<1>),
    Two(JumpSampler<2>),
}

impl RadialSampler {
    fn new(m: &StableLikeMeasure, r_lo: f64, r_hi: f64) -> Result<Self> {
        match m.dim {
            1 => Ok(Self::One(JumpSampler::annulus(m, r_lo, r_hi)?)),
            2 => Ok(Self::Two(JumpSampler::annulus(m, r_lo, r_hi)?)),
            d => Err(Error::Capability(format!("inverse moment check needs dim <= 2, got {d}"))),
        }
    }

    fn sample<R: rand::Rng>(&self, horizon: f64, rng: &mut R) -> Vec<(f64, f64)> {
        match self {
            Self::One(s) => s.sample(0.0, horizon, rng).iter().map(|e| (e.time, e.mark.norm())).collect(),
            Self::Two(s) => s.sample(0.0, horizon, rng).iter().map(|e| (e.time, e.mark.norm())).collect(),
        }
    }
}

fn envelope(beta: f64, p: f64, eps: f64, horizon: f64) -> f64 {
    (horizon * eps.powf(3.0 - beta)).powf(-p) + horizon.powf(-3.0 * p / beta)
}

/// Runs the whole `(horizon, eps)` grid on one set of paths: each path is
/// drawn on the largest window and mark radius, and every cell reads its
/// subset, so the cells are nested under common random numbers.
///
/// Marks below the measure's truncation radius are not drawn; their sum is
/// replaced by its mean `horizon int_{|u|<=delta0} |u|^3 nu(du)`, which has
/// relative fluctuation `O(delta0^{3/2})`.
pub fn inverse_moment_check(
    m: &StableLikeMeasure,
    p: f64,
    eps_values: &[f64],
    horizons: &[f64],
    n_paths: usize,
    key: StreamKey,
) -> Result<InverseMomentReport> {
    if !(p >= 1.0) {
        return domain(format!("inverse moment order {p} must be >= 1"));
    }
    if eps_values.is_empty() || horizons.is_empty() || n_paths == 0 {
        return domain("inverse moment grid is empty");
    }
    if horizons.iter().any(|h| !(*h > 0.0)) || eps_values.iter().any(|e| !(*e > 0.0)) {
        return domain("horizons and radii must be positive");
    }
    let eps: Vec<f64> = eps_values.iter().map(|e| e.min(1.0)).collect();
    let eps_max = eps.iter().cloned().fold(0.0, f64::max);
    let h_max = horizons.iter().cloned().fold(0.0, f64::max);
    let delta = m.truncation_radius;
    let small_mean_rate = if delta > 0.0 { m.moment_integral(3.0, delta)? } else { 0.0 };
    let sampler = if delta < eps_max { Some(RadialSampler::new(m, delta, eps_max)?) } else { None };

    // per path and cell: (sum, count)
    let per_path: Vec<Vec<(f64, usize)>> = par_indexed(n_paths, |i| {
        let mut rng = key.child(i as u64).rng();
        let jumps = match &sampler {
            Some(s) => s.sample(h_max, &mut rng),
            None => Vec::new(),
        };
        let mut out = Vec::with_capacity(horizons.len() * eps.len());
        for &h in horizons {
            for &e in &eps {
                let mut s = 0.0;
                let mut c = 0;
                for &(t, r) in &jumps {
                    if t <= h && r <= e {
                        s += r * r * r;
                        c += 1;
                    }
                }
                out.push((s + h * small_mean_rate, c));
            }
        }
        out
    });

    let mut cells = Vec::new();
    let mut k = 0;
    for &h in horizons {
        for &e in &eps {
            let mut values = Vec::with_capacity(n_paths);
            let mut zero = 0;
            for path in &per_path {
                let (s, c) = path[k];
                if c == 0 {
                    zero += 1;
                } else {
                    values.push(s.powf(-p));
                }
            }
            k += 1;
            let under_resolved = 2 * zero > n_paths;
            cells.push(InverseMomentCell {
                eps: e,
                horizon: h,
                estimate: Estimate::from_samples(&values),
                envelope: envelope(m.beta, p, e, h),
                zero_jump_paths: zero,
                under_resolved,
            });
        }
    }

    let under_resolved = cells.iter().any(|c| c.under_resolved);
    let fitted_constant =
        cells.iter().filter(|c| !c.under_resolved).map(|c| c.ratio()).fold(0.0, f64::max);
    let mut monotone = cells.iter().all(|c| c.estimate.mean.is_finite());
    for a in &cells {
        for b in &cells {
            if b.horizon >= a.horizon && b.eps >= a.eps {
                // allow for sampling noise on the conditioned estimates
                let tol = 3.0 * a.estimate.stderr.hypot(b.estimate.stderr);
                if b.estimate.mean > a.estimate.mean + tol {
                    monotone = false;
                }
            }
        }
    }
    Ok(InverseMomentReport { p, cells, fitted_constant, monotone, under_resolved })
}

/// Single-cell version of [`inverse_moment_check`].
pub fn inverse_moment_estimate(
    m: &StableLikeMeasure,
    p: f64,
    eps: f64,
    horizon: f64,
    n_paths: usize,
    key: StreamKey,
) -> Result<InverseMomentCell> {
    let mut report = inverse_moment_check(m, p, &[eps], &[horizon], n_paths, key)?;
    Ok(report.cells.remove(0))
}
