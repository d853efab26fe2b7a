//! Stable-like intensity measures on the punctured unit ball.
//!
//! The measure has density `k(u) = a(u) |u|^{-l-beta}` on `0 < |u| <= 1`.
//! Integrals against it are split at a small radius: inside, integrands are
//! replaced by their leading power and integrated in closed form; outside, a
//! tensor rule (Gauss–Legendre in `log r`, uniform in angle) is used.

mod checks;
mod cutoff;
mod sampling;

pub use checks::{
    check_assumptions, inverse_moment_check, inverse_moment_estimate, AssumptionReport,
    InverseMomentCell, InverseMomentReport,
};
pub use cutoff::CutoffZeta;
pub use sampling::{sample_jump_events, JumpEvent, JumpSampler};

use std::f64::consts::PI;

use crate::error::{domain, Error, Result};
use crate::quadrature::composite;
use crate::Vector;

/// Angular profile `a(u)` of the Lévy density.
#[derive(Clone, Debug, PartialEq)]
pub enum Amplitude {
    /// `a(u) = value`.
    Constant(f64),
    /// `a(u) = 1 + kappa cos(pi |u|)`; radial and symmetric.
    CosineBump { kappa: f64 },
    /// `a(u) = 1 + kappa u_1`; breaks the symmetry `a(u) = a(-u)`.
    Tilted { kappa: f64 },
}

impl Amplitude {
    pub fn value(&self, u: &[f64]) -> f64 {
        match *self {
            Amplitude::Constant(c) => c,
            Amplitude::CosineBump { kappa } => 1.0 + kappa * (PI * norm(u)).cos(),
            Amplitude::Tilted { kappa } => 1.0 + kappa * u[0],
        }
    }

    /// Writes `grad a(u)` into `out`.
    pub fn gradient(&self, u: &[f64], out: &mut [f64]) {
        match *self {
            Amplitude::Constant(_) => out.iter_mut().for_each(|o| *o = 0.0),
            Amplitude::CosineBump { kappa } => {
                let r = norm(u);
                // sin(pi r) / r is smooth at the origin
                let f = if r < 1e-8 { PI } else { (PI * r).sin() / r };
                for (o, ui) in out.iter_mut().zip(u) {
                    *o = -kappa * PI * f * ui;
                }
            }
            Amplitude::Tilted { kappa } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[0] = kappa;
            }
        }
    }

    /// `(a0, a1)` with `a0 <= a(u) <= a1` on the unit ball.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Amplitude::Constant(c) => (c, c),
            Amplitude::CosineBump { kappa } | Amplitude::Tilted { kappa } => {
                (1.0 - kappa.abs(), 1.0 + kappa.abs())
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Amplitude::Tilted { kappa } if *kappa != 0.0)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Amplitude::Constant(_))
    }

    pub fn at_origin(&self) -> f64 {
        match *self {
            Amplitude::Constant(c) => c,
            Amplitude::CosineBump { kappa } => 1.0 + kappa,
            Amplitude::Tilted { .. } => 1.0,
        }
    }
}

/// Node counts and split radius for integrals against the measure.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSpec {
    /// Below this radius integrands are replaced by their leading power.
    pub split_radius: f64,
    pub panels_per_decade: usize,
    pub order: usize,
    /// Directions on the circle when `dim == 2`.
    pub angular_nodes: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self { split_radius: 1e-4, panels_per_decade: 4, order: 10, angular_nodes: 32 }
    }
}

/// Which part of the measure an integral runs over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Support {
    /// The whole punctured ball.
    #[default]
    Full,
    /// Only the marks the simulation draws, `|u| > truncation_radius`. This is
    /// the generator of the simulated process.
    Simulated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StableLikeMeasure {
    pub dim: usize,
    pub beta: f64,
    pub amplitude: Amplitude,
    /// Jumps with `|u| <= truncation_radius` are not simulated.
    pub truncation_radius: f64,
    pub quadrature: QuadratureSpec,
}

/// Quadrature nodes `(u, weight)` over a shell `r_lo < |u| <= r_hi`; the
/// weight already contains the density.
#[derive(Clone, Debug)]
pub struct ShellRule {
    pub dim: usize,
    pub nodes: Vec<([f64; 2], f64)>,
}

impl ShellRule {
    pub fn integrate<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().map(|(u, w)| w * f(&u[..self.dim])).sum()
    }

    pub fn iter_fixed<const D: usize>(&self) -> impl Iterator<Item = (Vector<D>, f64)> + '_ {
        assert_eq!(D, self.dim);
        self.nodes.iter().map(|(u, w)| (Vector::<D>::from_column_slice(&u[..D]), *w))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

pub(crate) fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl StableLikeMeasure {
    pub fn new(dim: usize, beta: f64, amplitude: Amplitude, truncation_radius: f64) -> Result<Self> {
        if dim == 0 {
            return domain("dimension must be positive");
        }
        if !(beta > 0.0 && beta < 2.0) {
            return domain(format!("stability index {beta} outside (0, 2)"));
        }
        if !(truncation_radius > 0.0) {
            return domain(format!("truncation radius {truncation_radius} must be positive"));
        }
        let (a0, _) = amplitude.bounds();
        if !(a0 > 0.0) {
            return domain("amplitude must be bounded away from zero");
        }
        Ok(Self { dim, beta, amplitude, truncation_radius, quadrature: QuadratureSpec::default() })
    }

    /// `a = 1`, the reference measure.
    pub fn symmetric(dim: usize, beta: f64, truncation_radius: f64) -> Result<Self> {
        Self::new(dim, beta, Amplitude::Constant(1.0), truncation_radius)
    }

    pub fn with_quadrature(mut self, spec: QuadratureSpec) -> Self {
        self.quadrature = spec;
        self
    }

    pub fn with_truncation(&self, radius: f64) -> Self {
        Self { truncation_radius: radius, ..self.clone() }
    }

    pub fn is_symmetric(&self) -> bool {
        self.amplitude.is_symmetric()
    }

    /// Surface measure of the unit sphere in `R^dim` (counting measure for `dim = 1`).
    pub fn sphere_area(&self) -> f64 {
        let l = self.dim as f64;
        2.0 * PI.powf(l / 2.0) / gamma_half_integer(self.dim)
    }

    fn check_dim(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dim {
            return domain(format!("mark has dimension {} but the measure has {}", u.len(), self.dim));
        }
        Ok(())
    }

    /// `k(u) = a(u) |u|^{-l-beta}`.
    pub fn density(&self, u: &[f64]) -> Result<f64> {
        self.check_dim(u)?;
        let r = norm(u);
        if r == 0.0 || r > 1.0 {
            return domain(format!("|u| = {r} outside the punctured unit ball"));
        }
        Ok(self.amplitude.value(u) * r.powf(-(self.dim as f64) - self.beta))
    }

    /// `grad log k(u) = grad log a(u) - (l + beta) u / |u|^2`.
    pub fn log_density_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        let r2: f64 = u.iter().map(|x| x * x).sum();
        if r2 == 0.0 {
            return domain("log-density gradient is singular at u = 0");
        }
        let mut out = vec![0.0; self.dim];
        self.log_density_grad_into(u, r2, &mut out);
        Ok(out)
    }

    fn log_density_grad_into(&self, u: &[f64], r2: f64, out: &mut [f64]) {
        self.amplitude.gradient(u, out);
        let a = self.amplitude.value(u);
        let c = (self.dim as f64 + self.beta) / r2;
        for (o, ui) in out.iter_mut().zip(u) {
            *o = *o / a - c * ui;
        }
    }

    /// Unchecked fixed-size variant of [`Self::log_density_grad`].
    pub fn log_density_grad_fixed<const D: usize>(&self, u: &Vector<D>) -> Vector<D> {
        let mut out = Vector::<D>::zeros();
        self.log_density_grad_into(u.as_slice(), u.norm_squared(), out.as_mut_slice());
        out
    }

    /// Radius below which integrals are done in closed form.
    pub fn split_radius(&self) -> f64 {
        self.quadrature.split_radius
    }

    /// Smallest radius covered by integrals over `support`.
    pub fn support_floor(&self, support: Support) -> f64 {
        match support {
            Support::Full => 0.0,
            Support::Simulated => self.truncation_radius.min(1.0),
        }
    }

    /// Tensor rule on the shell `r_lo < |u| <= r_hi` (requires `r_lo > 0`).
    pub fn shell_rule(&self, r_lo: f64, r_hi: f64) -> Result<ShellRule> {
        if self.dim > 2 {
            return Err(Error::Capability(format!(
                "quadrature over the measure is implemented for dim <= 2, got {}",
                self.dim
            )));
        }
        if !(r_lo > 0.0) || r_hi <= r_lo {
            return Ok(ShellRule { dim: self.dim, nodes: Vec::new() });
        }
        let q = &self.quadrature;
        let decades = (r_hi / r_lo).log10();
        let panels = ((decades * q.panels_per_decade as f64).ceil() as usize).max(1);
        let radial = composite(r_lo.ln(), r_hi.ln(), panels, q.order);
        let mut nodes = Vec::with_capacity(radial.len() * if self.dim == 1 { 2 } else { q.angular_nodes });
        // In s = log r the volume element r^{l-1} dr dOmega times r^{-l-beta}
        // collapses to r^{-beta} ds dOmega.
        for (s, ws) in radial {
            let r = s.exp();
            let base = ws * r.powf(-self.beta);
            if self.dim == 1 {
                for sign in [-1.0, 1.0] {
                    let u = [sign * r, 0.0];
                    nodes.push((u, base * self.amplitude.value(&u[..1])));
                }
            } else {
                let n = q.angular_nodes;
                let dphi = 2.0 * PI / n as f64;
                for j in 0..n {
                    let phi = dphi * (j as f64 + 0.5);
                    let u = [r * phi.cos(), r * phi.sin()];
                    nodes.push((u, base * dphi * self.amplitude.value(&u)));
                }
            }
        }
        Ok(ShellRule { dim: self.dim, nodes })
    }

    /// `int_{|u| <= radius} |u|^q nu(du)` using `a(u) ~ a(0)`; exact for a
    /// constant amplitude.
    pub fn inner_power_mass(&self, q: f64, radius: f64) -> f64 {
        if radius <= 0.0 {
            return 0.0;
        }
        let e = q - self.beta;
        self.sphere_area() * self.amplitude.at_origin() * radius.powf(e) / e
    }

    /// `int_{|u| <= eps} |u|^p nu(du)`.
    pub fn moment_integral(&self, p: f64, eps: f64) -> Result<f64> {
        if p <= self.beta {
            return Err(Error::Divergence { p, beta: self.beta });
        }
        if eps < 0.0 || eps.is_nan() {
            return domain(format!("radius {eps} must be nonnegative"));
        }
        let eps = eps.min(1.0);
        if eps == 0.0 {
            return Ok(0.0);
        }
        let split = self.split_radius();
        if eps <= split {
            return Ok(self.inner_power_mass(p, eps));
        }
        let outer = self.shell_rule(split, eps)?.integrate(|u| norm(u).powf(p));
        Ok(self.inner_power_mass(p, split) + outer)
    }

    /// `nu(|u| > eps)`.
    pub fn tail_mass(&self, eps: f64) -> Result<f64> {
        if !(eps > 0.0) {
            return domain(format!("tail mass needs eps > 0, got {eps}"));
        }
        if eps >= 1.0 {
            return Ok(0.0);
        }
        Ok(self.shell_rule(eps, 1.0)?.integrate(|_| 1.0))
    }

    /// `lambda^{-beta/3} int (1 - exp(-lambda |u|^3)) nu(du)`.
    pub fn laplace_functional_ratio(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return domain(format!("lambda must be positive, got {lambda}"));
        }
        // keep the two-term Taylor expansion accurate inside the split
        let split = self.split_radius().min((1e-3 / lambda).cbrt());
        let inner = lambda * self.inner_power_mass(3.0, split)
            - 0.5 * lambda * lambda * self.inner_power_mass(6.0, split);
        let outer = self.shell_rule(split, 1.0)?.integrate(|u| -(-lambda * norm(u).powi(3)).exp_m1());
        Ok(lambda.powf(-self.beta / 3.0) * (inner + outer))
    }
}

/// `Gamma(l / 2)` for positive integers `l`.
fn gamma_half_integer(l: usize) -> f64 {
    if l.is_multiple_of(2) {
        (1..l / 2).map(|k| k as f64).product()
    } else {
        // Gamma(1/2) * prod_{k=0}^{(l-3)/2} (k + 1/2)
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x + 1.0 <= l as f64 / 2.0 {
            g *= x;
            x += 1.0;
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m1() -> StableLikeMeasure {
        StableLikeMeasure::symmetric(1, 1.5, 0.01).unwrap()
    }

    #[test]
    fn density_matches_power_law() {
        assert_relative_eq!(m1().density(&[0.5]).unwrap(), 0.5f64.powf(-2.5), max_relative = 1e-14);
        assert_eq!(m1().density(&[1.0]).unwrap(), 1.0);
        let m2 = StableLikeMeasure::symmetric(2, 1.0, 0.01).unwrap();
        assert_relative_eq!(m2.density(&[0.5, 0.0]).unwrap(), 8.0, max_relative = 1e-14);
    }

    #[test]
    fn density_rejects_points_outside_the_ball() {
        assert!(matches!(m1().density(&[0.0]), Err(Error::Domain(_))));
        assert!(matches!(m1().density(&[1.5]), Err(Error::Domain(_))));
        assert!(m1().density(&[0.1, 0.1]).is_err());
    }

    #[test]
    fn log_density_gradient_examples() {
        assert_relative_eq!(m1().log_density_grad(&[0.1]).unwrap()[0], -25.0, max_relative = 1e-14);
        assert_relative_eq!(m1().log_density_grad(&[-0.1]).unwrap()[0], 25.0, max_relative = 1e-14);
        let m2 = StableLikeMeasure::symmetric(2, 1.0, 0.01).unwrap();
        let g = m2.log_density_grad(&[0.3, 0.4]).unwrap();
        assert_relative_eq!(g[0], -3.6, max_relative = 1e-13);
        assert_relative_eq!(g[1], -4.8, max_relative = 1e-13);
        assert!(m1().log_density_grad(&[0.0]).is_err());
    }

    #[test]
    fn log_density_gradient_matches_finite_differences_for_cosine_bump() {
        let m = StableLikeMeasure::new(2, 1.3, Amplitude::CosineBump { kappa: 0.5 }, 0.01).unwrap();
        let u = [0.3, -0.2];
        let g = m.log_density_grad(&u).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut up = u;
            let mut dn = u;
            up[i] += h;
            dn[i] -= h;
            let fd = (m.density(&up).unwrap().ln() - m.density(&dn).unwrap().ln()) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn moment_integral_examples() {
        assert_relative_eq!(m1().moment_integral(2.0, 0.5).unwrap(), 4.0 * 0.5f64.sqrt(), max_relative = 1e-9);
        assert_relative_eq!(m1().moment_integral(3.0, 1.0).unwrap(), 2.0 / 1.5, max_relative = 1e-9);
        assert_eq!(m1().moment_integral(2.0, 0.0).unwrap(), 0.0);
        assert!(m1().moment_integral(2.0, 1e-12).unwrap() < 1e-5);
        assert!(matches!(m1().moment_integral(1.5, 0.5), Err(Error::Divergence { .. })));
    }

    #[test]
    fn tail_mass_examples() {
        let closed = |e: f64| (4.0 / 3.0) * (e.powf(-1.5) - 1.0);
        assert_relative_eq!(m1().tail_mass(0.5).unwrap(), closed(0.5), max_relative = 1e-10);
        assert_relative_eq!(m1().tail_mass(0.25).unwrap(), closed(0.25), max_relative = 1e-10);
        assert_eq!(m1().tail_mass(1.0).unwrap(), 0.0);
        assert!(m1().tail_mass(0.0).is_err());
    }

    #[test]
    fn two_dimensional_moments_use_the_circle() {
        // int_{|u|<=e} |u|^p |u|^{-2-beta} du = 2 pi e^{p-beta}/(p-beta)
        let m = StableLikeMeasure::symmetric(2, 1.2, 0.01).unwrap();
        let closed = 2.0 * PI * 0.7f64.powf(0.8) / 0.8;
        assert_relative_eq!(m.moment_integral(2.0, 0.7).unwrap(), closed, max_relative = 1e-9);
    }

    #[test]
    fn sphere_area_low_dimensions() {
        let m = |d| StableLikeMeasure::symmetric(d, 1.0, 0.1).unwrap().sphere_area();
        assert_relative_eq!(m(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(m(2), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(m(3), 4.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn laplace_ratio_vanishes_for_small_lambda() {
        // lambda^{1 - beta/3} int |u|^3 nu(du) to leading order
        let r = m1().laplace_functional_ratio(1e-12).unwrap();
        assert_relative_eq!(r, 1e-6 * 4.0 / 3.0, max_relative = 1e-6);
    }
}
