use std::sync::Arc;

use approx::assert_relative_eq;

use super::*;
use crate::levy_model::Amplitude;
use crate::models::{Additive, ConstantTerminal, FnTerminal, LinearDriver, ZeroDriver};

fn measure() -> StableLikeMeasure {
    StableLikeMeasure::symmetric(1, 1.5, 0.05).unwrap()
}

#[test]
fn generator_examples() {
    let m = measure();
    let f = Additive::new(1.0);
    let x = Vector::<1>::new(0.7);
    assert_eq!(generator_apply(&f, &m, Support::Full, |_| 3.0, 0.0, &x).unwrap(), 0.0);
    assert!(generator_apply(&f, &m, Support::Full, |y| y[0], 0.0, &x).unwrap().abs() < 1e-10);
    let sq = generator_apply(&f, &m, Support::Full, |y| y[0] * y[0], 0.0, &x).unwrap();
    assert_relative_eq!(sq, 4.0, max_relative = 1e-6);
    // only the simulated marks
    let sim = generator_apply(&f, &m, Support::Simulated, |y| y[0] * y[0], 0.0, &x).unwrap();
    assert_relative_eq!(sim, 4.0 - m.moment_integral(2.0, 0.05).unwrap(), max_relative = 1e-6);
    // drift part
    let ou = Additive { s0: 1.0, theta: 0.5 };
    let lin = generator_apply(&ou, &m, Support::Full, |y| y[0], 0.0, &x).unwrap();
    assert!((lin + 0.35).abs() < 1e-8);
}

#[test]
fn generator_of_cosine_matches_the_symbol() {
    let m = measure();
    let s0 = 0.8;
    let symbol = m.shell_rule(m.split_radius(), 1.0).unwrap().integrate(|u| (s0 * u[0]).cos() - 1.0)
        - 0.5 * s0 * s0 * m.inner_power_mass(2.0, m.split_radius());
    for x in [-1.0, 0.0, 0.4, 2.0] {
        let g = generator_apply(&Additive::new(s0), &m, Support::Full, |y| y[0].cos(), 0.0, &Vector::<1>::new(x)).unwrap();
        assert!((g - symbol * x.cos()).abs() < 1e-7, "{x}: {g} vs {}", symbol * x.cos());
    }
}

#[test]
fn asymmetric_measures_are_refused() {
    let m = StableLikeMeasure::new(1, 1.5, Amplitude::Tilted { kappa: 0.3 }, 0.05).unwrap();
    let err = generator_apply(&Additive::new(1.0), &m, Support::Full, |y| y[0], 0.0, &Vector::<1>::zeros());
    assert!(matches!(err, Err(Error::Capability(_))));
}

#[test]
fn semigroup_examples() {
    let m = measure();
    let f = Additive::new(1.0);
    let x = Vector::<1>::new(0.3);
    let c = semigroup_apply(&f, &m, |_| 2.0, 0.0, 1.0, x, 500, 4, StreamKey::new(1)).unwrap();
    assert_eq!((c.mean, c.stderr), (2.0, 0.0));
    let id = semigroup_apply(&f, &m, |y| y[0], 0.0, 1.0, x, 20_000, 4, StreamKey::new(2)).unwrap();
    assert!((id.mean - 0.3).abs() <= 3.0 * id.stderr);
    let now = semigroup_apply(&f, &m, |y| y[0].sin(), 0.5, 0.5, x, 10, 4, StreamKey::new(3)).unwrap();
    assert_eq!(now.mean, 0.3f64.sin());
}

#[test]
fn kolmogorov_derivative_at_time_zero() {
    let m = measure();
    let f = Additive::new(1.0);
    let x = Vector::<1>::new(0.4);
    let dt = 0.01;
    let g = |y: &Vector<1>| y[0].cos();
    let est = semigroup_apply(&f, &m, |y| g(y) - g(&x), 0.0, dt, x, 100_000, 1, StreamKey::new(4)).unwrap();
    let lg = generator_apply(&f, &m, Support::Simulated, g, 0.0, &x).unwrap();
    let slope = est.mean / dt;
    // bias O(dt) from the second-order term
    assert!((slope - lg).abs() <= 3.0 * est.stderr / dt + 0.02, "{slope} vs {lg}");
}

fn det_config(nodes: usize, support: Support) -> DeterministicConfig {
    DeterministicConfig {
        horizon: 1.0,
        t_min: 0.0,
        grid: SpaceGrid::new(8.0, nodes).unwrap(),
        slices: 4,
        dt: None,
        support,
    }
}

#[test]
fn constants_are_harmonic() {
    let m = measure();
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(ConstantTerminal(1.5)));
    let v = deterministic_solve(&c, &m, &det_config(41, Support::Full)).unwrap();
    for row in &v.values {
        assert!(row.iter().all(|x| (x - 1.5).abs() < 1e-10));
    }
}

#[test]
fn explicit_scheme_reports_instability() {
    let m = measure();
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(ConstantTerminal(1.5)));
    let mut cfg = det_config(81, Support::Full);
    cfg.dt = Some(0.5);
    match deterministic_solve(&c, &m, &cfg) {
        Err(Error::Instability { dt, suggested }) => {
            assert_eq!(dt, 0.5);
            cfg.dt = Some(suggested);
            assert!(deterministic_solve(&c, &m, &cfg).is_ok());
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        deterministic_solve(&c, &StableLikeMeasure::symmetric(2, 1.5, 0.05).unwrap(), &cfg),
        Err(Error::Capability(_))
    ));
}

fn cosine_problem(support: Support) -> ManufacturedProblem {
    make_manufactured(
        1.0,
        Arc::new(f64::cos),
        Some(Arc::new(|x: f64| -x.sin())),
        Arc::new(Additive::new(0.8)),
        &measure(),
        support,
        1.0,
        10.0,
    )
    .unwrap()
}

#[test]
fn manufactured_examples() {
    let m = measure();
    let constant = make_manufactured(0.0, Arc::new(|_| 2.0), None, Arc::new(Additive::new(1.0)), &m, Support::Full, 1.0, 3.0).unwrap();
    assert_eq!(constant.induced_psi(0.3, 0.2), 0.0);
    assert_eq!(constant.coefficients.terminal.value(&Vector::<1>::new(5.0)), 2.0);
    let ou = Additive { s0: 1.0, theta: 0.7 };
    let linear = make_manufactured(0.0, Arc::new(|x| x), None, Arc::new(ou), &m, Support::Full, 1.0, 3.0).unwrap();
    for x in [-2.0, 0.5, 4.0] {
        assert!((linear.induced_psi(0.1, x) + 0.7 * x).abs() < 1e-8);
    }
    let cos = cosine_problem(Support::Full);
    assert!(cos.residual < 1e-6);
    assert_eq!(cos.v_star(0.0, 0.0), 1.0);
    assert!((cos.grad_v_star(1.0, 0.5).unwrap() + (-1.0f64).exp() * 0.5f64.sin()).abs() < 1e-15);
}

fn interior_error(v: &ValueFunction<1>, p: &ManufacturedProblem, width: f64) -> f64 {
    let mut err: f64 = 0.0;
    for (j, t) in v.times.iter().enumerate() {
        for g in 0..v.grid.nodes_per_axis {
            let x = v.grid.coordinate(g);
            if x.abs() <= width {
                err = err.max((v.values[j][g] - p.v_star(*t, x)).abs());
            }
        }
    }
    err
}

#[test]
fn manufactured_solution_converges_under_refinement() {
    for support in [Support::Full, Support::Simulated] {
        let p = cosine_problem(support);
        let m = measure();
        let errs: Vec<f64> = [41, 81, 161]
            .iter()
            .map(|n| interior_error(&deterministic_solve(&p.coefficients, &m, &det_config(*n, support)).unwrap(), &p, 2.0))
            .collect();
        assert!(errs[2] < 2e-3, "{support:?} {errs:?}");
        assert!(errs[1] < errs[0] && errs[2] < errs[1], "{support:?} {errs:?}");
    }
}

#[test]
fn linear_driver_scales_the_free_solution() {
    let m = measure();
    let phi = Arc::new(FnTerminal { name: "sech".into(), f: Arc::new(|x: f64| 1.0 / x.cosh()), df: None });
    let base = ModelCoefficients::new(Arc::new(Additive::new(0.8)), Arc::new(ZeroDriver), phi);
    let cfg = det_config(81, Support::Full);
    let free = deterministic_solve(&base, &m, &cfg).unwrap();
    let lam = 0.5;
    let v = deterministic_solve(&base.with_driver(Arc::new(LinearDriver::new(lam))), &m, &cfg).unwrap();
    for j in 0..v.times.len() {
        let factor = (-lam * (1.0 - v.times[j])).exp();
        for g in 0..v.grid.nodes_per_axis {
            assert!((v.values[j][g] - factor * free.values[j][g]).abs() < 1e-3);
        }
    }
}
