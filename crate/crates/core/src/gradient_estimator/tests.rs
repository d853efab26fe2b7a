use std::sync::Arc;

use super::*;
use crate::bsde_engine::{solve_value_function, SolveConfig, SpaceGrid};
use crate::models::{
    Additive, ConstantTerminal, KinkedTerminal, LinearDriver, Multiplicative1d, Smooth2d, SmoothTerminal, ZeroDriver,
};

fn measure(dim: usize) -> StableLikeMeasure {
    StableLikeMeasure::symmetric(dim, 1.5, 0.05).unwrap()
}

fn bel_cfg(n_paths: usize) -> BelConfig {
    BelConfig { n_paths, ..BelConfig::default() }
}

fn fd_cfg(n_paths: usize) -> FdConfig {
    FdConfig { n_paths, ..FdConfig::default() }
}

#[test]
fn graded_nodes_integrate_polynomials_in_w() {
    let nodes = graded_nodes(1.5, 0.2, 1.2, 64);
    let total: f64 = nodes.iter().map(|n| n.1).sum();
    assert!((total - 1.0).abs() < 1e-3);
    // int_t^T (s - t)^{-2/3} ds = 3 (T - t)^{1/3}: integrable singularity of the weight
    let sing: f64 = nodes.iter().map(|(s, w)| w * (s - 0.2).powf(-2.0 / 3.0)).sum();
    assert!((sing - 3.0).abs() < 1e-3, "{sing}");
    assert!(nodes.windows(2).all(|w| w[0].0 < w[1].0));
}

#[test]
fn zero_direction_gives_exact_zeros() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let (x, h) = (Vector::<1>::new(0.2), Vector::<1>::zeros());
    let key = StreamKey::new(1);
    assert_eq!(bel_gradient(&c, &m, None, 0.0, x, h, 1.0, &bel_cfg(10), key).unwrap().value, 0.0);
    assert_eq!(fd_gradient(&c, &m, None, 0.0, x, h, 1.0, &fd_cfg(10), key).unwrap().value, 0.0);
    assert_eq!(variational_gradient(&c, &m, None, 0.0, x, h, 1.0, &fd_cfg(10), key).unwrap().value, 0.0);
}

#[test]
fn bel_is_linear_in_h() {
    let m = measure(2);
    let c = ModelCoefficients::new(Arc::new(Smooth2d { s0: 0.8, theta: 0.3 }), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let x = Vector::<2>::new(0.3, -0.2);
    let cfg = bel_cfg(200);
    let key = StreamKey::new(2);
    let e1 = bel_gradient(&c, &m, None, 0.0, x, Vector::<2>::new(1.0, 0.0), 1.0, &cfg, key).unwrap();
    let e2 = bel_gradient(&c, &m, None, 0.0, x, Vector::<2>::new(0.0, 1.0), 1.0, &cfg, key).unwrap();
    let e12 = bel_gradient(&c, &m, None, 0.0, x, Vector::<2>::new(2.0, -3.0), 1.0, &cfg, key).unwrap();
    assert!((e12.value - (2.0 * e1.value - 3.0 * e2.value)).abs() < 1e-10 * (1.0 + e12.value.abs()));
}

#[test]
fn constant_terminal_has_zero_mean_weight() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(ConstantTerminal(3.0)));
    let cfg = BelConfig { centered: false, ..bel_cfg(4000) };
    let e = bel_gradient(&c, &m, None, 0.0, Vector::<1>::new(0.5), Vector::<1>::new(1.0), 1.0, &cfg, StreamKey::new(3)).unwrap();
    assert!(e.stderr > 0.0);
    assert!(e.value.abs() <= 3.0 * e.stderr, "{e:?}");
    let centered = bel_gradient(&c, &m, None, 0.0, Vector::<1>::new(0.5), Vector::<1>::new(1.0), 1.0, &bel_cfg(100), StreamKey::new(3)).unwrap();
    assert_eq!((centered.value, centered.stderr), (0.0, 0.0));
}

/// Finite differences on the measure the weight estimator simulated with.
fn fd_reference<const D: usize>(c: &ModelCoefficients<D>, m: &StableLikeMeasure, e: &GradientEstimate, t: f64, x: Vector<D>, h: Vector<D>, n: usize) -> GradientEstimate {
    let m_sim = m.with_truncation(e.truncation_radius);
    fd_gradient(c, &m_sim, None, t, x, h, 1.0, &fd_cfg(n), StreamKey::new(99)).unwrap()
}

#[test]
fn bel_agrees_with_common_noise_differences_in_one_dimension() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Multiplicative1d { s0: 0.7, theta: 0.2 }), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let (x, h) = (Vector::<1>::new(0.4), Vector::<1>::new(1.0));
    let e = bel_gradient(&c, &m, None, 0.5, x, h, 1.0, &bel_cfg(6000), StreamKey::new(4)).unwrap();
    let fd = fd_reference(&c, &m, &e, 0.5, x, h, 4000);
    assert!(e.estimate().agrees_with(&fd.estimate(), 3.0), "{e:?} {fd:?}");
    assert!(e.no_small_jumps_fraction < 1e-2);
}

#[test]
fn bel_agrees_with_common_noise_differences_in_two_dimensions() {
    // a full, state-dependent sigma tells M h apart from its adjoint
    let m = measure(2);
    let c = ModelCoefficients::new(Arc::new(Smooth2d { s0: 0.8, theta: 0.3 }), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let (x, h) = (Vector::<2>::new(0.3, -0.5), Vector::<2>::new(0.4, -1.0));
    let e = bel_gradient(&c, &m, None, 0.5, x, h, 1.0, &bel_cfg(6000), StreamKey::new(5)).unwrap();
    let fd = fd_reference(&c, &m, &e, 0.5, x, h, 4000);
    assert!(e.estimate().agrees_with(&fd.estimate(), 3.0), "{e:?} {fd:?}");
    let var = variational_gradient(&c, &m.with_truncation(e.truncation_radius), None, 0.5, x, h, 1.0, &fd_cfg(4000), StreamKey::new(6)).unwrap();
    assert!(var.estimate().agrees_with(&fd.estimate(), 3.0), "{var:?} {fd:?}");
}

#[test]
fn three_estimators_agree_with_a_linear_driver() {
    let m = measure(1);
    let lambda = 0.5;
    let c = ModelCoefficients::new(Arc::new(Additive::new(0.8)), Arc::new(LinearDriver::new(lambda)), Arc::new(SmoothTerminal));
    let mut sc = SolveConfig::new(1.0, SpaceGrid::new(4.0, 33).unwrap());
    sc.slices = 5;
    sc.paths_per_node = 400;
    let (v, _) = solve_value_function(&c, &m, 0.0, &sc, StreamKey::new(7)).unwrap();
    let (x, h) = (Vector::<1>::new(0.2), Vector::<1>::new(1.0));
    let bel = bel_gradient(&c, &m, Some(&v), 0.0, x, h, 1.0, &bel_cfg(6000), StreamKey::new(8)).unwrap();
    let m_sim = m.with_truncation(bel.truncation_radius);
    // the variational formula does not need v for a constant d_y psi
    let var = variational_gradient(&c, &m_sim, Some(&v), 0.0, x, h, 1.0, &fd_cfg(4000), StreamKey::new(9)).unwrap();
    let free = c.with_driver(Arc::new(ZeroDriver));
    let var0 = variational_gradient(&free, &m_sim, None, 0.0, x, h, 1.0, &fd_cfg(4000), StreamKey::new(9)).unwrap();
    assert!((var.value - (-lambda).exp() * var0.value).abs() < 1e-12);
    let fd = fd_gradient(&c, &m_sim, Some(&v), 0.0, x, h, 1.0, &fd_cfg(4000), StreamKey::new(10)).unwrap();
    // v carries Monte Carlo and grid error of its own
    let slack = 0.02;
    assert!((bel.value - var.value).abs() <= 3.0 * bel.stderr.hypot(var.stderr) + slack, "{bel:?} {var:?}");
    assert!((fd.value - var.value).abs() <= 3.0 * fd.stderr.hypot(var.stderr) + slack, "{fd:?} {var:?}");
}

#[test]
fn variational_refuses_kinked_data() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(KinkedTerminal { x0: 0.0, cap: 1.0 }));
    let err = variational_gradient(&c, &m, None, 0.0, Vector::<1>::zeros(), Vector::<1>::new(1.0), 1.0, &fd_cfg(10), StreamKey::new(1));
    assert!(matches!(err, Err(Error::Capability(_))));
    // the weight estimator needs no derivative
    let e = bel_gradient(&c, &m, None, 0.0, Vector::<1>::new(0.3), Vector::<1>::new(1.0), 1.0, &bel_cfg(2000), StreamKey::new(2)).unwrap();
    assert!(e.value.is_finite() && e.value.abs() <= 1.0 + 3.0 * e.stderr);
}

#[test]
fn missing_value_function_is_a_domain_error() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(LinearDriver::new(0.5)), Arc::new(SmoothTerminal));
    let err = bel_gradient(&c, &m, None, 0.0, Vector::<1>::zeros(), Vector::<1>::new(1.0), 1.0, &bel_cfg(10), StreamKey::new(1));
    assert!(matches!(err, Err(Error::Domain(_))));
}

#[test]
fn no_small_jumps_policies() {
    // model truncation and a short window: G = 0 is common
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(SmoothTerminal));
    let base = BelConfig { truncation: Truncation::Model, ..bel_cfg(2000) };
    let (x, h) = (Vector::<1>::zeros(), Vector::<1>::new(1.0));
    let drop = BelConfig { policy: NoSmallJumpsPolicy::DropAndReweight, ..base.clone() };
    let d = bel_gradient(&c, &m, None, 0.97, x, h, 1.0, &drop, StreamKey::new(11)).unwrap();
    assert!(d.no_small_jumps_fraction > 0.05, "{d:?}");
    assert_eq!(d.resampled, 0);
    assert_eq!(d.n_paths + d.dropped, 2000);
    let r = bel_gradient(&c, &m, None, 0.97, x, h, 1.0, &base, StreamKey::new(11)).unwrap();
    assert_eq!(r.resampled, 2);
    assert_eq!(r.n_paths + r.dropped, 2000);
    assert_eq!(r.no_small_jumps_fraction, d.no_small_jumps_fraction);
}

#[test]
fn weight_scaling_and_envelope() {
    let m = measure(1);
    let c = ModelCoefficients::new(Arc::new(Additive::new(1.0)), Arc::new(ZeroDriver), Arc::new(KinkedTerminal { x0: 0.0, cap: 1.0 }));
    let elapsed = [0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
    let r = gradient_scaling_experiment(&c, &m, Vector::<1>::new(0.1), Vector::<1>::new(1.0), 1.0, &elapsed, 1.0, 0.0, &bel_cfg(2000), StreamKey::new(12))
        .unwrap();
    assert!((r.weight_slope - r.expected_slope()).abs() <= 0.15 + 3.0 * r.weight_slope_stderr, "{r:?}");
    assert!(r.within_envelope, "{r:?}");
}

#[test]
fn csv_rows() {
    let e = GradientEstimate::exact(Method::Fd, 0.5, &Vector::<2>::new(1.0, 2.0), &Vector::<2>::new(0.0, 1.0), 0.25, 0.05);
    let mut buf = Vec::new();
    write_gradient_csv(&[e], &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "method,t,x,h,value,stderr,n_paths,schedule,nosmalljumps_fraction");
    assert!(lines[1].starts_with("fd,0.5,1;2,0;1,2.5"));
}
