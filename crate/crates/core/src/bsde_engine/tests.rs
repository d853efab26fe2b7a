use std::sync::Arc;

use approx::assert_relative_eq;

use super::*;
use crate::forward_flow::simulate_path_observed;
use crate::models::{
    Additive, ConstantDriver, ConstantTerminal, FnTerminal, LinearDriver, LinearTerminal, ZeroDriver,
};

fn measure() -> StableLikeMeasure {
    StableLikeMeasure::symmetric(1, 1.5, 0.05).unwrap()
}

fn bounded_phi() -> Arc<FnTerminal> {
    Arc::new(FnTerminal { name: "1+tanh/2".into(), f: Arc::new(|x: f64| 1.0 + 0.5 * x.tanh()), df: None })
}

fn model(driver: Arc<dyn crate::models::Driver<1>>, terminal: Arc<dyn Terminal<1>>) -> ModelCoefficients<1> {
    ModelCoefficients::new(Arc::new(Additive::new(0.5)), driver, terminal)
}

fn config() -> SolveConfig {
    let mut cfg = SolveConfig::new(1.0, SpaceGrid::new(3.0, 25).unwrap());
    cfg.slices = 5;
    cfg.paths_per_node = 300;
    cfg
}

#[test]
fn nonlocal_term_examples() {
    let m = measure();
    let c = model(Arc::new(LinearDriver::new(0.0)), Arc::new(LinearTerminal));
    let grid = SpaceGrid::new(4.0, 33).unwrap();
    let linear = ValueFunction::<1>::from_fn(vec![1.0, 0.0], grid, |_, x| x[0]).unwrap();
    let c1 = ModelCoefficients::new(Arc::new(Additive::new(1.0)), c.driver.clone(), c.terminal.clone());
    let z = nonlocal_term(&linear, &c1, &m, 0.5, &Vector::<1>::new(0.3)).unwrap();
    assert_relative_eq!(z, 4.0, max_relative = 1e-6);
    let constant = ValueFunction::<1>::from_fn(vec![1.0, 0.0], grid, |_, _| 2.5).unwrap();
    assert_eq!(nonlocal_term(&constant, &c1, &m, 0.5, &Vector::<1>::new(0.3)).unwrap(), 0.0);

    let rule = NonlocalRule::<1>::new(&m, LWeight::FirstCoordinate).unwrap();
    for x in [-1.0, 0.2, 1.7] {
        let xv = Vector::<1>::new(x);
        let z = rule.apply(|y| y[0] * y[0], &xv, x * x, &Vector::<1>::new(2.0 * x), &Matrix::<1>::identity());
        assert!((z - 8.0 * x).abs() < 1e-6 * (1.0 + x.abs()), "{x}: {z}");
    }
}

#[test]
fn zero_driver_is_one_expectation() {
    let m = measure();
    let c = model(Arc::new(ZeroDriver), Arc::new(LinearTerminal));
    let (v, report) = solve_value_function(&c, &m, 0.0, &config(), StreamKey::new(1)).unwrap();
    assert_eq!(report.iterates, 1);
    assert!(report.converged);
    // E[X_T] = x for the driftless symmetric model
    for g in (0..v.grid.len::<1>()).step_by(4) {
        let x = v.grid.node::<1>(g)[0];
        for j in 1..v.times.len() {
            let se = report.node_stderr[j][g];
            assert!((v.values[j][g] - x).abs() <= 4.0 * se + 1e-12, "{j} {g}");
        }
        assert_eq!(v.values[0][g], x);
    }
}

#[test]
fn constant_driver_subtracts_elapsed_time() {
    let m = measure();
    let key = StreamKey::new(2);
    let base = model(Arc::new(ZeroDriver), Arc::new(LinearTerminal));
    let (v0, _) = solve_value_function(&base, &m, 0.0, &config(), key).unwrap();
    let (vc, r) = solve_value_function(&base.with_driver(Arc::new(ConstantDriver(0.7))), &m, 0.0, &config(), key).unwrap();
    assert_eq!(r.iterates, 1);
    for j in 0..v0.times.len() {
        for g in 0..v0.grid.len::<1>() {
            let expected = v0.values[j][g] - 0.7 * (1.0 - v0.times[j]);
            assert!((vc.values[j][g] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn linear_driver_fixed_point_and_contraction() {
    let m = measure();
    let key = StreamKey::new(3);
    let lambda = 0.5;
    let base = model(Arc::new(ZeroDriver), bounded_phi());
    let (p_phi, _) = solve_value_function(&base, &m, 0.0, &config(), key).unwrap();
    let mut cfg = config();
    cfg.tol = 1e-10;
    let (v, r) = solve_value_function(&base.with_driver(Arc::new(LinearDriver::new(lambda))), &m, 0.0, &cfg, key).unwrap();
    assert!(r.converged);
    assert!((r.contraction_ratios[0] - 0.5).abs() < 0.1, "{:?}", r.contraction_ratios);
    for (n, ratio) in r.contraction_ratios.iter().enumerate().take(4) {
        // exact linear Picard: successive differences shrink by lambda (T - t) / (n + 1)
        assert!((ratio - lambda / (n as f64 + 1.0)).abs() < 0.1, "{n}: {ratio}");
    }
    for w in r.sup_diffs.windows(2).skip(1) {
        assert!(w[1] <= w[0]);
    }
    // the fixed point is e^{-lambda (T - s)} P phi up to the trapezoid rule and
    // the noise of the later slices, which use other paths
    for j in 0..v.times.len() {
        let factor = (-lambda * (1.0 - v.times[j])).exp();
        for g in 0..v.grid.len::<1>() {
            let expected = factor * p_phi.values[j][g];
            assert!((v.values[j][g] - expected).abs() <= 3.0 * r.node_stderr[j][g] + 1e-3 * expected.abs(), "{j} {g}");
        }
    }
}

#[test]
fn non_contraction_is_reported() {
    let m = measure();
    let c = model(Arc::new(LinearDriver::new(6.0)), bounded_phi());
    let mut cfg = config();
    cfg.paths_per_node = 20;
    cfg.tol = 0.0;
    let err = solve_value_function(&c, &m, 0.0, &cfg, StreamKey::new(4)).unwrap_err();
    assert!(matches!(err, Error::NonContraction { .. }), "{err}");
    cfg.sub_intervals = 5;
    assert!(solve_value_function(&c, &m, 0.0, &cfg, StreamKey::new(4)).is_ok());
}

#[test]
fn horizon_splitting_agrees_with_a_single_solve() {
    let m = measure();
    let c = model(Arc::new(LinearDriver::new(0.5)), bounded_phi());
    let mut cfg = config();
    cfg.slices = 4;
    let (v1, r1) = solve_value_function(&c, &m, 0.0, &cfg, StreamKey::new(5)).unwrap();
    cfg.sub_intervals = 2;
    let (v2, r2) = solve_value_function(&c, &m, 0.0, &cfg, StreamKey::new(6)).unwrap();
    assert_eq!(r2.piece_iterates.len(), 2);
    assert_eq!(v1.times, v2.times);
    let g = v1.grid.len::<1>() / 2;
    let se = (r1.node_stderr[4][g].powi(2) + r2.node_stderr[4][g].powi(2)).sqrt();
    assert!((v1.values[4][g] - v2.values[4][g]).abs() < 4.0 * se + 1e-3);
}

#[test]
fn pathwise_z_and_norms() {
    let m = measure();
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(LinearTerminal));
    let grid = SpaceGrid::new(50.0, 101).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| 1.0 - 0.1 * k as f64).collect();
    let v = ValueFunction::<1>::from_fn(times.clone(), grid, |_, x| x[0]).unwrap();
    let samples: Vec<PathwiseYZ<'_, 1>> = (0..200)
        .map(|i| {
            let p = simulate_path_observed(&m, c.forward.as_ref(), 0.0, Vector::<1>::zeros(), 1.0, 10, &times, StreamKey::new(i)).unwrap();
            pathwise_yz(&p, &v, &c).unwrap()
        })
        .collect();
    for u in [-0.7, 0.01, 0.4] {
        assert!((samples[0].z(3, &Vector::<1>::new(u)) - u).abs() < 1e-12);
    }
    let norms = norm_estimators(&samples, &c, &m, 2.0, 0.0).unwrap();
    assert_relative_eq!(norms.m_norm, 2.0, max_relative = 1e-6);
    let weighted = norm_estimators(&samples, &c, &m, 2.0, 1.0).unwrap();
    assert!(weighted.m_norm == norms.m_norm && weighted.weighted_m_norm > norms.m_norm);
    for k in [0, 5, 10] {
        let (lhs, rhs) = jensen_check(&samples[0], k, &c, &m).unwrap();
        assert!(lhs <= rhs * (1.0 + 1e-9));
    }

    let zero = ValueFunction::<1>::zeros(times.clone(), grid).unwrap();
    let p = simulate_path_observed(&m, c.forward.as_ref(), 0.0, Vector::<1>::zeros(), 1.0, 10, &times, StreamKey::new(9)).unwrap();
    let yz = pathwise_yz(&p, &zero, &c).unwrap();
    assert_eq!(yz.z(2, &Vector::<1>::new(0.5)), 0.0);
    let n0 = norm_estimators(&[yz], &c, &m, 2.0, 0.0).unwrap();
    assert_eq!((n0.s_norm, n0.m_norm), (0.0, 0.0));
}

#[test]
fn apriori_estimate() {
    let m = measure();
    let grid = SpaceGrid::new(20.0, 81).unwrap();
    let times: Vec<f64> = (0..=5).map(|k| 1.0 - 0.2 * k as f64).collect();
    let starts: Vec<Vector<1>> = [0.0, 1.0, 3.0, 6.0].iter().map(|x| Vector::<1>::new(*x)).collect();

    let zero = model(Arc::new(ZeroDriver), Arc::new(ConstantTerminal(0.0)));
    let v0 = ValueFunction::<1>::zeros(times.clone(), grid).unwrap();
    let r0 = apriori_check(&v0, &zero, &m, 0.0, &starts, 50, 5, StreamKey::new(1)).unwrap();
    assert!(r0.rows.iter().all(|r| r.lhs == 0.0 && r.rhs == 0.0));

    let lin = model(Arc::new(ZeroDriver), Arc::new(LinearTerminal));
    let v = ValueFunction::<1>::from_fn(times, grid, |_, x| x[0]).unwrap();
    let r = apriori_check(&v, &lin, &m, 0.0, &starts, 2000, 5, StreamKey::new(2)).unwrap();
    let ratios: Vec<f64> = r.rows.iter().map(|r| r.ratio).collect();
    assert!(r.fitted_constant.is_finite());
    // both sides grow like x^2; the ratio settles towards 1
    assert!(ratios.iter().all(|q| *q >= 1.0 && *q <= r.fitted_constant));
    assert!((ratios[3] - 1.0).abs() < 0.2, "{ratios:?}");
}

#[test]
fn martingale_residual_vanishes_for_the_linear_problem() {
    let m = measure();
    let c = model(Arc::new(LinearDriver::new(0.5)), bounded_phi());
    let (v, r) = solve_value_function(&c, &m, 0.0, &config(), StreamKey::new(7)).unwrap();
    let x = Vector::<1>::new(0.25);
    let res = martingale_residual(&v, &c, &m, 0.0, x, 4000, 10, StreamKey::new(8)).unwrap();
    let g = v.grid.len::<1>() / 2;
    let grid_se = r.node_stderr[v.times.len() - 1][g];
    assert!(res.mean.abs() <= 3.0 * (res.stderr.powi(2) + grid_se.powi(2)).sqrt() + 2e-3, "{res:?}");
}

#[test]
fn terminal_slice_is_exact() {
    let m = measure();
    let c = model(Arc::new(LinearDriver::new(0.3)), bounded_phi());
    let (v, _) = solve_value_function(&c, &m, 0.0, &config(), StreamKey::new(9)).unwrap();
    for g in 0..v.grid.len::<1>() {
        assert_eq!(v.values[0][g], 1.0 + 0.5 * v.grid.node::<1>(g)[0].tanh());
    }
}
