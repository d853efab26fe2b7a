use std::fmt::Debug;
use std::sync::Arc;

use rand::Rng;

use crate::bsde_engine::SpaceGrid;
use crate::error::{domain, Error, Result};
use crate::levy_model::{QuadratureSpec, StableLikeMeasure, Support};
use crate::models::{Driver, FnTerminal, ForwardCoefficients, ModelCoefficients};
use crate::rng::{tags, StreamKey};
use crate::Vector;

use super::{apply_rule, cubic_eval, generator_rule};

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `psi(t, x) = d_t v* + L v*` for `v*(t, x) = e^{-kappa t} f(x)`, with `L f`
/// tabulated on a fine grid and evaluated directly outside it.
#[derive(Clone)]
pub struct InducedDriver {
    kappa: f64,
    f: Scalar,
    table_grid: SpaceGrid,
    table: Vec<f64>,
    forward: Arc<dyn ForwardCoefficients<1>>,
    nodes: Arc<Vec<(Vector<1>, f64)>>,
    inner_mass: f64,
}

impl Debug for InducedDriver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "InducedDriver(kappa={})", self.kappa)
    }
}

impl InducedDriver {
    /// `L f(x)`.
    pub fn generator_of_profile(&self, x: f64) -> f64 {
        if x.abs() <= self.table_grid.half_width {
            cubic_eval(&self.table_grid, &self.table, x)
        } else {
            let f = &self.f;
            apply_rule(self.forward.as_ref(), &self.nodes, self.inner_mass, &|y: &Vector<1>| f(y[0]), 0.0, &Vector::<1>::new(x))
        }
    }
}

impl Driver<1> for InducedDriver {
    fn value(&self, t: f64, x: &Vector<1>, _y: f64, _z: f64) -> f64 {
        (-self.kappa * t).exp() * (-self.kappa * (self.f)(x[0]) + self.generator_of_profile(x[0]))
    }
    fn gradient(&self, t: f64, x: &Vector<1>, y: f64, z: f64) -> Option<(Vector<1>, f64, f64)> {
        let h = 1e-4;
        let up = self.value(t, &Vector::<1>::new(x[0] + h), y, z);
        let down = self.value(t, &Vector::<1>::new(x[0] - h), y, z);
        Some((Vector::<1>::new((up - down) / (2.0 * h)), 0.0, 0.0))
    }
    fn depends_on_y(&self) -> bool {
        false
    }
    fn depends_on_z(&self) -> bool {
        false
    }
}

/// A problem whose solution `v*(t, x) = e^{-kappa t} f(x)` is known.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub kappa: f64,
    pub horizon: f64,
    pub support: Support,
    pub driver: Arc<InducedDriver>,
    pub coefficients: ModelCoefficients<1>,
    /// Largest self-test residual.
    pub residual: f64,
    df: Option<Scalar>,
}

impl Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ManufacturedProblem(kappa={}, horizon={}, {:?})", self.kappa, self.horizon, self.support)
    }
}

impl ManufacturedProblem {
    pub fn v_star(&self, t: f64, x: f64) -> f64 {
        (-self.kappa * t).exp() * (self.driver.f)(x)
    }

    pub fn dt_v_star(&self, t: f64, x: f64) -> f64 {
        -self.kappa * self.v_star(t, x)
    }

    pub fn grad_v_star(&self, t: f64, x: f64) -> Option<f64> {
        self.df.as_ref().map(|df| (-self.kappa * t).exp() * df(x))
    }

    pub fn induced_psi(&self, t: f64, x: f64) -> f64 {
        self.driver.value(t, &Vector::<1>::new(x), 0.0, 0.0)
    }
}

const TABLE_SPACING: f64 = 0.01;
const SELF_TEST_POINTS: usize = 100;
const SELF_TEST_TOL: f64 = 1e-6;

/// Builds `psi` from `v*(t, x) = e^{-kappa t} f(x)` and checks the equation
/// residual at random points against a finer quadrature. The forward
/// coefficients must not depend on time.
#[allow(clippy::too_many_arguments)]
pub fn make_manufactured(
    kappa: f64,
    f: Scalar,
    df: Option<Scalar>,
    forward: Arc<dyn ForwardCoefficients<1>>,
    m: &StableLikeMeasure,
    support: Support,
    horizon: f64,
    table_half_width: f64,
) -> Result<ManufacturedProblem> {
    if !(table_half_width > 0.0) {
        return domain("table half width must be positive");
    }
    let (nodes, inner_mass) = generator_rule::<1>(m, support)?;
    let table_grid = SpaceGrid::new(table_half_width, (2.0 * table_half_width / TABLE_SPACING).round() as usize + 1)?;
    let fr = f.clone();
    let table: Vec<f64> = crate::stats::par_indexed(table_grid.nodes_per_axis, |i| {
        apply_rule(forward.as_ref(), &nodes, inner_mass, &|y: &Vector<1>| fr(y[0]), 0.0, &table_grid.node::<1>(i))
    });
    let driver = Arc::new(InducedDriver {
        kappa,
        f: f.clone(),
        table_grid,
        table,
        forward: forward.clone(),
        nodes: Arc::new(nodes),
        inner_mass,
    });

    let fine = m.clone().with_quadrature(QuadratureSpec {
        panels_per_decade: 2 * m.quadrature.panels_per_decade,
        order: m.quadrature.order + 6,
        ..m.quadrature.clone()
    });
    let (fine_nodes, fine_inner) = generator_rule::<1>(&fine, support)?;
    let mut rng = StreamKey::new(0x5e1f).child(tags::CHECKS).rng();
    let mut residual: f64 = 0.0;
    for _ in 0..SELF_TEST_POINTS {
        let t = rng.random::<f64>() * horizon;
        let x = (2.0 * rng.random::<f64>() - 1.0) * table_half_width;
        let xv = Vector::<1>::new(x);
        let decay = (-kappa * t).exp();
        let lv = apply_rule(forward.as_ref(), &fine_nodes, fine_inner, &|y: &Vector<1>| decay * f(y[0]), t, &xv);
        let r = -kappa * decay * f(x) + lv - driver.value(t, &xv, 0.0, 0.0);
        residual = residual.max(r.abs() / (1.0 + lv.abs()));
    }
    if residual > SELF_TEST_TOL {
        return Err(Error::Construction(format!("manufactured residual {residual:e} exceeds {SELF_TEST_TOL:e}")));
    }
    let terminal_decay = (-kappa * horizon).exp();
    let (tf, tdf) = (f.clone(), df.clone());
    let terminal = FnTerminal {
        name: "manufactured".into(),
        f: Arc::new(move |x| terminal_decay * tf(x)),
        df: tdf.map(|d| Arc::new(move |x| terminal_decay * d(x)) as Scalar),
    };
    let coefficients = ModelCoefficients::new(forward, driver.clone(), Arc::new(terminal));
    Ok(ManufacturedProblem { kappa, horizon, support, driver, coefficients, residual, df })
}
