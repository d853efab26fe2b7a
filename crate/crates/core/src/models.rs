//! Coefficients of the forward-backward system and the built-in models.
//!
//! The forward part `(b, sigma)` is a trait object over a fixed state
//! dimension; the backward data are a driver `psi(t, x, y, z)`, a terminal
//! function `phi` and the weight `l(u)` entering `z = int Z l dnu`.

use std::fmt::Debug;
use std::sync::Arc;

use crate::Matrix;
use crate::Vector;

pub trait ForwardCoefficients<const D: usize>: Debug + Send + Sync {
    fn drift(&self, t: f64, x: &Vector<D>) -> Vector<D>;
    fn drift_jacobian(&self, t: f64, x: &Vector<D>) -> Matrix<D>;
    fn sigma(&self, t: f64, x: &Vector<D>) -> Matrix<D>;
    fn sigma_inverse(&self, t: f64, x: &Vector<D>) -> Option<Matrix<D>> {
        self.sigma(t, x).try_inverse()
    }
    /// `D sigma(t, x)[y]`: the Jacobian in `x` of `x -> sigma(t, x) y`.
    fn sigma_derivative(&self, t: f64, x: &Vector<D>, y: &Vector<D>) -> Matrix<D>;
}

/// `psi(t, x, y, z)`.
pub trait Driver<const D: usize>: Debug + Send + Sync {
    fn value(&self, t: f64, x: &Vector<D>, y: f64, z: f64) -> f64;
    /// `(grad_x psi, d_y psi, d_z psi)` when the driver is differentiable.
    fn gradient(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> Option<(Vector<D>, f64, f64)> {
        None
    }
    fn depends_on_y(&self) -> bool {
        true
    }
    fn depends_on_z(&self) -> bool {
        true
    }
    fn is_zero(&self) -> bool {
        false
    }
}

/// `phi(x)`.
pub trait Terminal<const D: usize>: Debug + Send + Sync {
    fn value(&self, x: &Vector<D>) -> f64;
    fn gradient(&self, _x: &Vector<D>) -> Option<Vector<D>> {
        None
    }
}

/// The weight `l(u)`, with `|l(u)| <= C (1 ∧ |u|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LWeight {
    /// `l(u) = u_1`.
    #[default]
    FirstCoordinate,
    /// `l(u) = u_1 / (1 + |u|)`.
    Bounded,
}

impl LWeight {
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            LWeight::FirstCoordinate => u[0],
            LWeight::Bounded => u[0] / (1.0 + crate::levy_model::norm(u)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Smoothness {
    /// Lipschitz data only.
    Lipschitz,
    /// Driver and terminal are differentiable with the gradients exposed.
    Differentiable,
}

#[derive(Clone, Debug)]
pub struct ModelCoefficients<const D: usize> {
    pub forward: Arc<dyn ForwardCoefficients<D>>,
    pub driver: Arc<dyn Driver<D>>,
    pub terminal: Arc<dyn Terminal<D>>,
    pub l_weight: LWeight,
    /// Declared; `smoothness()` additionally requires the gradients to exist.
    pub differentiable: bool,
}

impl<const D: usize> ModelCoefficients<D> {
    pub fn new(
        forward: Arc<dyn ForwardCoefficients<D>>,
        driver: Arc<dyn Driver<D>>,
        terminal: Arc<dyn Terminal<D>>,
    ) -> Self {
        let x = Vector::<D>::zeros();
        let differentiable = driver.gradient(0.0, &x, 0.0, 0.0).is_some() && terminal.gradient(&x).is_some();
        Self { forward, driver, terminal, l_weight: LWeight::default(), differentiable }
    }

    pub fn with_driver(&self, driver: Arc<dyn Driver<D>>) -> Self {
        Self::new(self.forward.clone(), driver, self.terminal.clone()).with_l_weight(self.l_weight)
    }

    pub fn with_terminal(&self, terminal: Arc<dyn Terminal<D>>) -> Self {
        Self::new(self.forward.clone(), self.driver.clone(), terminal).with_l_weight(self.l_weight)
    }

    pub fn with_l_weight(mut self, l: LWeight) -> Self {
        self.l_weight = l;
        self
    }

    pub fn smoothness(&self) -> Smoothness {
        if self.differentiable {
            Smoothness::Differentiable
        } else {
            Smoothness::Lipschitz
        }
    }
}

// ---------------------------------------------------------------- forward

/// `b = -theta x`, `sigma = s0 I`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Additive {
    pub s0: f64,
    pub theta: f64,
}

impl Additive {
    pub fn new(s0: f64) -> Self {
        Self { s0, theta: 0.0 }
    }
}

impl<const D: usize> ForwardCoefficients<D> for Additive {
    fn drift(&self, _t: f64, x: &Vector<D>) -> Vector<D> {
        x * -self.theta
    }
    fn drift_jacobian(&self, _t: f64, _x: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::identity() * -self.theta
    }
    fn sigma(&self, _t: f64, _x: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::identity() * self.s0
    }
    fn sigma_derivative(&self, _t: f64, _x: &Vector<D>, _y: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::zeros()
    }
}

/// `b = 0`, `sigma = 0`: nothing moves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frozen;

impl<const D: usize> ForwardCoefficients<D> for Frozen {
    fn drift(&self, _t: f64, _x: &Vector<D>) -> Vector<D> {
        Vector::<D>::zeros()
    }
    fn drift_jacobian(&self, _t: f64, _x: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::zeros()
    }
    fn sigma(&self, _t: f64, _x: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::zeros()
    }
    fn sigma_derivative(&self, _t: f64, _x: &Vector<D>, _y: &Vector<D>) -> Matrix<D> {
        Matrix::<D>::zeros()
    }
}

/// `b(x) = -theta x`, `sigma(x) = s0 (1 + sin(x)/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Multiplicative1d {
    pub s0: f64,
    pub theta: f64,
}

impl ForwardCoefficients<1> for Multiplicative1d {
    fn drift(&self, _t: f64, x: &Vector<1>) -> Vector<1> {
        x * -self.theta
    }
    fn drift_jacobian(&self, _t: f64, _x: &Vector<1>) -> Matrix<1> {
        Matrix::<1>::new(-self.theta)
    }
    fn sigma(&self, _t: f64, x: &Vector<1>) -> Matrix<1> {
        Matrix::<1>::new(self.s0 * (1.0 + 0.5 * x[0].sin()))
    }
    fn sigma_derivative(&self, _t: f64, x: &Vector<1>, y: &Vector<1>) -> Matrix<1> {
        Matrix::<1>::new(self.s0 * 0.5 * x[0].cos() * y[0])
    }
}

/// Two-dimensional model with a full, state-dependent `sigma`:
///
/// ```text
/// sigma = s0 [[1 + 0.3 sin x1, 0.2 sin x2], [0.1 cos x1, 1 + 0.3 cos x2]]
/// ```
///
/// and `b = -theta x`. The determinant stays above `0.47 s0^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smooth2d {
    pub s0: f64,
    pub theta: f64,
}

impl ForwardCoefficients<2> for Smooth2d {
    fn drift(&self, _t: f64, x: &Vector<2>) -> Vector<2> {
        x * -self.theta
    }
    fn drift_jacobian(&self, _t: f64, _x: &Vector<2>) -> Matrix<2> {
        Matrix::<2>::identity() * -self.theta
    }
    fn sigma(&self, _t: f64, x: &Vector<2>) -> Matrix<2> {
        let (s1, c1) = x[0].sin_cos();
        let (s2, c2) = x[1].sin_cos();
        Matrix::<2>::new(1.0 + 0.3 * s1, 0.2 * s2, 0.1 * c1, 1.0 + 0.3 * c2) * self.s0
    }
    fn sigma_derivative(&self, _t: f64, x: &Vector<2>, y: &Vector<2>) -> Matrix<2> {
        let (s1, c1) = x[0].sin_cos();
        let (s2, c2) = x[1].sin_cos();
        Matrix::<2>::new(0.3 * c1 * y[0], 0.2 * c2 * y[1], -0.1 * s1 * y[0], -0.3 * s2 * y[1]) * self.s0
    }
}

// ----------------------------------------------------------------- driver

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroDriver;

impl<const D: usize> Driver<D> for ZeroDriver {
    fn value(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> f64 {
        0.0
    }
    fn gradient(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> Option<(Vector<D>, f64, f64)> {
        Some((Vector::<D>::zeros(), 0.0, 0.0))
    }
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
    fn is_zero(&self) -> bool {
        true
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantDriver(pub f64);

impl<const D: usize> Driver<D> for ConstantDriver {
    fn value(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> f64 {
        self.0
    }
    fn gradient(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> Option<(Vector<D>, f64, f64)> {
        Some((Vector::<D>::zeros(), 0.0, 0.0))
    }
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
}

/// `psi = lambda y + kappa z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDriver {
    pub lambda: f64,
    pub kappa: f64,
}

impl LinearDriver {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, kappa: 0.0 }
    }
}

impl<const D: usize> Driver<D> for LinearDriver {
    fn value(&self, _t: f64, _x: &Vector<D>, y: f64, z: f64) -> f64 {
        self.lambda * y + self.kappa * z
    }
    fn gradient(&self, _t: f64, _x: &Vector<D>, _y: f64, _z: f64) -> Option<(Vector<D>, f64, f64)> {
        Some((Vector::<D>::zeros(), self.lambda, self.kappa))
    }
    fn depends_on_y(&self) -> bool {
        self.lambda != 0.0
    }
    fn depends_on_z(&self) -> bool {
        self.kappa != 0.0
    }
}

// --------------------------------------------------------------- terminal

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantTerminal(pub f64);

impl<const D: usize> Terminal<D> for ConstantTerminal {
    fn value(&self, _x: &Vector<D>) -> f64 {
        self.0
    }
    fn gradient(&self, _x: &Vector<D>) -> Option<Vector<D>> {
        Some(Vector::<D>::zeros())
    }
}

/// `phi(x) = x_1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearTerminal;

impl<const D: usize> Terminal<D> for LinearTerminal {
    fn value(&self, x: &Vector<D>) -> f64 {
        x[0]
    }
    fn gradient(&self, _x: &Vector<D>) -> Option<Vector<D>> {
        let mut g = Vector::<D>::zeros();
        g[0] = 1.0;
        Some(g)
    }
}

/// `phi(x) = cos(omega x_1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineTerminal {
    pub omega: f64,
}

impl<const D: usize> Terminal<D> for CosineTerminal {
    fn value(&self, x: &Vector<D>) -> f64 {
        (self.omega * x[0]).cos()
    }
    fn gradient(&self, x: &Vector<D>) -> Option<Vector<D>> {
        let mut g = Vector::<D>::zeros();
        g[0] = -self.omega * (self.omega * x[0]).sin();
        Some(g)
    }
}

/// `phi(x) = sum_i tanh(x_i) + sin(x_1)/2`: bounded, smooth, non-symmetric.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothTerminal;

impl<const D: usize> Terminal<D> for SmoothTerminal {
    fn value(&self, x: &Vector<D>) -> f64 {
        x.iter().map(|v| v.tanh()).sum::<f64>() + 0.5 * x[0].sin()
    }
    fn gradient(&self, x: &Vector<D>) -> Option<Vector<D>> {
        let mut g = x.map(|v| 1.0 / (v.cosh() * v.cosh()));
        g[0] += 0.5 * x[0].cos();
        Some(g)
    }
}

/// `phi(x) = min(|x_1 - x0|, cap)`: Lipschitz with kinks at `x0` and
/// `x0 +- cap`, no gradient exposed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KinkedTerminal {
    pub x0: f64,
    pub cap: f64,
}

impl<const D: usize> Terminal<D> for KinkedTerminal {
    fn value(&self, x: &Vector<D>) -> f64 {
        (x[0] - self.x0).abs().min(self.cap)
    }
}

/// A scalar terminal function given by closures, for one-dimensional data
/// built elsewhere (manufactured solutions, mollifications).
#[derive(Clone)]
pub struct FnTerminal {
    pub name: String,
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub df: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl Debug for FnTerminal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FnTerminal({})", self.name)
    }
}

impl Terminal<1> for FnTerminal {
    fn value(&self, x: &Vector<1>) -> f64 {
        (self.f)(x[0])
    }
    fn gradient(&self, x: &Vector<1>) -> Option<Vector<1>> {
        self.df.as_ref().map(|df| Vector::<1>::new(df(x[0])))
    }
}
