//! Bismut–Elworthy–Li weights from per-jump contributions.
//!
//! For a jump `(alpha, y)` with pre-jump state `X-` and Jacobian `J-` put
//!
//! ```text
//! M   = sigma^{-1}(alpha, X-) (I + D sigma(alpha, X-)[y]) J-
//! A_i = sigma^{-1}(alpha, X-) D sigma(alpha, X-)[e_i] J-
//! v   = M h
//! ```
//!
//! so that `v` is the mark direction that moves `X(T)` by `grad X(T) h`, and
//! `A_i h = d v / d y_i`. The three running sums of a window `(t, tau]` are
//!
//! ```text
//! A = -sum [ (zeta grad log k + grad zeta) . v + zeta sum_i (A_i h)_i ]
//! G =  sum zeta(y)
//! B =  sum zeta(y) grad zeta(y) . v
//! ```
//!
//! and the weight is `U = A / G + B / G^2`.

mod oracle;
mod scaling;

pub use oracle::mark_sampling_oracle;
pub use scaling::{weight_moment_scaling, ScalingRow, WeightScalingReport};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward_flow::{EventRecord, PathRecord};
use crate::levy_model::{CutoffZeta, StableLikeMeasure};
use crate::models::ForwardCoefficients;
use crate::Vector;

/// `(a, g, b)` contributed by one jump.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventTerms {
    pub a: f64,
    pub g: f64,
    pub b: f64,
}

/// The `epsilon`-independent part of a jump's contribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventGeometry {
    pub time: f64,
    pub radius: f64,
    /// `grad log k(y) . v`
    pub s1: f64,
    /// `y . v / |y|`
    pub s2: f64,
    /// `sum_i (A_i h)_i`
    pub trace: f64,
}

impl EventGeometry {
    pub fn terms(&self, zeta: &CutoffZeta) -> EventTerms {
        let (g, dg) = zeta.radial(self.radius);
        if g == 0.0 && dg == 0.0 {
            return EventTerms::default();
        }
        EventTerms { a: -(g * self.s1 + dg * self.s2) - g * self.trace, g, b: g * dg * self.s2 }
    }
}

/// The cutoff used with a simulated measure: tapered at the truncation radius.
pub fn cutoff_for(m: &StableLikeMeasure, epsilon: f64) -> Result<CutoffZeta> {
    CutoffZeta::tapered(epsilon.min(1.0), m.truncation_radius)
}

fn singular(t: f64) -> Error {
    Error::SingularSigma { t, condition: f64::INFINITY }
}

pub fn event_geometry<const D: usize>(
    ev: &EventRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    h: &Vector<D>,
) -> Result<EventGeometry> {
    let sigma_inv = forward.sigma_inverse(ev.time, &ev.pre_state).ok_or_else(|| singular(ev.time))?;
    let ds = forward.sigma_derivative(ev.time, &ev.pre_state, &ev.mark);
    let jh = ev.pre_jacobian * h;
    let v = sigma_inv * (jh + ds * jh);
    let mut trace = 0.0;
    for i in 0..D {
        let mut e = Vector::<D>::zeros();
        e[i] = 1.0;
        let ai_h = sigma_inv * (forward.sigma_derivative(ev.time, &ev.pre_state, &e) * jh);
        trace += ai_h[i];
    }
    let radius = ev.mark.norm();
    let grad_log_k = m.log_density_grad_fixed(&ev.mark);
    Ok(EventGeometry { time: ev.time, radius, s1: grad_log_k.dot(&v), s2: ev.mark.dot(&v) / radius, trace })
}

/// Contribution of one jump; zero without further work when the mark lies
/// outside the support of `zeta`.
pub fn event_weight_terms<const D: usize>(
    ev: &EventRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    zeta: &CutoffZeta,
    h: &Vector<D>,
) -> Result<EventTerms> {
    if ev.mark.norm() > zeta.support_radius() {
        return Ok(EventTerms::default());
    }
    Ok(event_geometry(ev, m, forward, h)?.terms(zeta))
}

/// Geometry of the jumps of `path` in `(t, tau_max]` with `|y| <= max_radius`.
pub fn path_geometry<const D: usize>(
    path: &PathRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    h: &Vector<D>,
    t: f64,
    tau_max: f64,
    max_radius: f64,
) -> Result<Vec<EventGeometry>> {
    path.events
        .iter()
        .filter(|e| e.time > t && e.time <= tau_max && e.mark.norm() <= max_radius)
        .map(|e| event_geometry(e, m, forward, h))
        .collect()
}

/// Running sums over a window `(t, tau]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightState<const D: usize> {
    pub t: f64,
    pub tau: f64,
    pub epsilon: f64,
    pub h: Vector<D>,
    pub a: f64,
    pub g: f64,
    pub b: f64,
}

impl<const D: usize> WeightState<D> {
    pub fn new(t: f64, epsilon: f64, h: Vector<D>) -> Self {
        Self { t, tau: t, epsilon, h, a: 0.0, g: 0.0, b: 0.0 }
    }

    pub fn push(&mut self, time: f64, terms: EventTerms) {
        self.tau = self.tau.max(time);
        self.a += terms.a;
        self.g += terms.g;
        self.b += terms.b;
    }

    /// Appends the later window `other`.
    pub fn merge(&mut self, other: &WeightState<D>) {
        self.tau = self.tau.max(other.tau);
        self.a += other.a;
        self.g += other.g;
        self.b += other.b;
    }

    pub fn weight(&self) -> Result<f64> {
        if !(self.g > 0.0) {
            return Err(Error::NoSmallJumps { t: self.t, tau: self.tau });
        }
        Ok(self.a / self.g + self.b / (self.g * self.g))
    }
}

/// The weight `U_{tau, epsilon}^h` of `path` over `(t, tau]`.
pub fn accumulate_weight<const D: usize>(
    path: &PathRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    tau: f64,
    zeta: &CutoffZeta,
    h: &Vector<D>,
) -> Result<f64> {
    weight_state(path, m, forward, t, tau, zeta, h)?.weight()
}

pub fn weight_state<const D: usize>(
    path: &PathRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    tau: f64,
    zeta: &CutoffZeta,
    h: &Vector<D>,
) -> Result<WeightState<D>> {
    let mut state = WeightState::new(t, zeta.epsilon, *h);
    for ev in path.events.iter().filter(|e| e.time > t && e.time <= tau) {
        state.push(ev.time, event_weight_terms(ev, m, forward, zeta, h)?);
    }
    state.tau = tau;
    Ok(state)
}

/// How the cutoff scale depends on the node `s` of the time integral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EpsSchedule {
    Fixed(f64),
    /// `epsilon(s) = (s - t)^{1/beta}`.
    Singular,
    /// `epsilon = (T - t)^{1/beta}` at every node.
    FixedHorizon,
}

impl EpsSchedule {
    /// Always in `(0, 1]`.
    pub fn epsilon(&self, beta: f64, t: f64, s: f64, horizon: f64) -> f64 {
        let e = match *self {
            EpsSchedule::Fixed(e) => e,
            EpsSchedule::Singular => (s - t).max(0.0).powf(1.0 / beta),
            EpsSchedule::FixedHorizon => (horizon - t).powf(1.0 / beta),
        };
        e.min(1.0)
    }

    /// Smallest scale used on `(t, horizon]` when the first node is `s_min`.
    pub fn min_epsilon(&self, beta: f64, t: f64, s_min: f64, horizon: f64) -> f64 {
        self.epsilon(beta, t, s_min, horizon).min(self.epsilon(beta, t, horizon, horizon))
    }

    pub fn tag(&self) -> String {
        match self {
            EpsSchedule::Fixed(e) => format!("fixed:{e}"),
            EpsSchedule::Singular => "singular".into(),
            EpsSchedule::FixedHorizon => "fixed-horizon".into(),
        }
    }
}

/// `U` at each of the increasing `nodes` from precomputed geometry. For a
/// scale that does not change with the node the sums are swept once.
pub fn schedule_from_geometry(
    geometry: &[EventGeometry],
    m: &StableLikeMeasure,
    t: f64,
    horizon: f64,
    nodes: &[f64],
    schedule: EpsSchedule,
) -> Result<Vec<Result<f64>>> {
    let constant = !matches!(schedule, EpsSchedule::Singular);
    let mut out = Vec::with_capacity(nodes.len());
    if constant {
        let zeta = cutoff_for(m, schedule.epsilon(m.beta, t, horizon, horizon))?;
        let (mut a, mut g, mut b) = (0.0, 0.0, 0.0);
        let mut k = 0;
        for &s in nodes {
            while k < geometry.len() && geometry[k].time <= s {
                let terms = geometry[k].terms(&zeta);
                a += terms.a;
                g += terms.g;
                b += terms.b;
                k += 1;
            }
            out.push(if g > 0.0 { Ok(a / g + b / (g * g)) } else { Err(Error::NoSmallJumps { t, tau: s }) });
        }
    } else {
        for &s in nodes {
            let eps = schedule.epsilon(m.beta, t, s, horizon);
            if !(eps > 0.0) {
                out.push(Err(Error::NoSmallJumps { t, tau: s }));
                continue;
            }
            let zeta = cutoff_for(m, eps)?;
            let (mut a, mut g, mut b) = (0.0, 0.0, 0.0);
            for geo in geometry.iter().take_while(|e| e.time <= s) {
                let terms = geo.terms(&zeta);
                a += terms.a;
                g += terms.g;
                b += terms.b;
            }
            out.push(if g > 0.0 { Ok(a / g + b / (g * g)) } else { Err(Error::NoSmallJumps { t, tau: s }) });
        }
    }
    Ok(out)
}

/// `U` at each node under `schedule`; the outer error is a singular `sigma`,
/// the inner ones flag nodes without small jumps.
pub fn weight_schedule<const D: usize>(
    path: &PathRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    nodes: &[f64],
    schedule: EpsSchedule,
    h: &Vector<D>,
) -> Result<Vec<Result<f64>>> {
    let horizon = path.horizon;
    let s_max = nodes.iter().cloned().fold(t, f64::max);
    let max_eps = nodes.iter().map(|s| schedule.epsilon(m.beta, t, *s, horizon)).fold(0.0, f64::max);
    let geometry = path_geometry(path, m, forward, h, t, s_max, 2.0 * max_eps / 3.0)?;
    schedule_from_geometry(&geometry, m, t, horizon, nodes, schedule)
}

/// Diagnostic rows `(tau, epsilon, A, G, B, U)`.
pub fn write_weight_diagnostics<W: Write>(rows: &[(f64, f64, f64, f64, f64, f64)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "epsilon", "A", "G", "B", "U"])?;
    for r in rows {
        w.write_record([r.0, r.1, r.2, r.3, r.4, r.5].iter().map(|v| format!("{v:e}")))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_flow::{euler_flow, simulate_path};
    use crate::levy_model::JumpEvent;
    use crate::models::{Additive, Smooth2d};
    use crate::rng::StreamKey;
    use approx::assert_relative_eq;

    fn single_jump_path(y: f64) -> PathRecord<1> {
        let ev = JumpEvent { time: 0.5, mark: Vector::<1>::new(y) };
        euler_flow(&Additive::new(1.0), Vector::<1>::new(0.0), &[0.0, 1.0], &[(ev, false)])
    }

    fn m1() -> StableLikeMeasure {
        StableLikeMeasure::symmetric(1, 1.5, 0.01).unwrap()
    }

    #[test]
    fn single_core_jump_terms() {
        let p = single_jump_path(0.1);
        let z = cutoff_for(&m1(), 0.9).unwrap();
        let terms = event_weight_terms(&p.events[0], &m1(), &Additive::new(1.0), &z, &Vector::<1>::new(1.0)).unwrap();
        assert_relative_eq!(terms.a, -0.005, max_relative = 1e-12);
        assert_relative_eq!(terms.g, 1e-3, max_relative = 1e-12);
        assert_relative_eq!(terms.b, 3e-5, max_relative = 1e-12);
        let s0 = 2.0;
        let terms2 = event_weight_terms(&p.events[0], &m1(), &Additive::new(s0), &z, &Vector::<1>::new(1.0)).unwrap();
        assert_relative_eq!(terms2.a, -0.005 / s0, max_relative = 1e-12);
        assert_relative_eq!(terms2.b, 3e-5 / s0, max_relative = 1e-12);
        let zero_h = event_weight_terms(&p.events[0], &m1(), &Additive::new(1.0), &z, &Vector::<1>::zeros()).unwrap();
        assert_eq!(zero_h, EventTerms { a: 0.0, g: terms.g, b: 0.0 });
    }

    #[test]
    fn marks_outside_the_cutoff_support_contribute_nothing() {
        let p = single_jump_path(0.8);
        let z = cutoff_for(&m1(), 0.9).unwrap();
        let terms = event_weight_terms(&p.events[0], &m1(), &Additive::new(1.0), &z, &Vector::<1>::new(1.0)).unwrap();
        assert_eq!(terms, EventTerms::default());
    }

    #[test]
    fn single_jump_weight_is_25() {
        let p = single_jump_path(0.1);
        let z = cutoff_for(&m1(), 0.9).unwrap();
        let f = Additive::new(1.0);
        let u = accumulate_weight(&p, &m1(), &f, 0.0, 1.0, &z, &Vector::<1>::new(1.0)).unwrap();
        assert_relative_eq!(u, 25.0, max_relative = 1e-12);
        assert_eq!(accumulate_weight(&p, &m1(), &f, 0.0, 1.0, &z, &Vector::<1>::zeros()).unwrap(), 0.0);
        let u2 = accumulate_weight(&p, &m1(), &f, 0.0, 1.0, &z, &Vector::<1>::new(2.0)).unwrap();
        assert_eq!(u2, 2.0 * u);
        assert!(matches!(
            accumulate_weight(&p, &m1(), &f, 0.0, 0.4, &z, &Vector::<1>::new(1.0)),
            Err(Error::NoSmallJumps { .. })
        ));
    }

    #[test]
    fn weights_are_exactly_linear_in_h_for_two_dimensional_paths() {
        let m = StableLikeMeasure::symmetric(2, 1.5, 0.01).unwrap();
        let f = Smooth2d { s0: 0.8, theta: 0.3 };
        let p = simulate_path(&m, &f, 0.0, Vector::<2>::new(0.1, 0.2), 1.0, 8, StreamKey::new(3)).unwrap();
        let z = cutoff_for(&m, 0.5).unwrap();
        let h1 = Vector::<2>::new(1.0, 0.0);
        let h2 = Vector::<2>::new(0.0, 1.0);
        let u1 = accumulate_weight(&p, &m, &f, 0.0, 1.0, &z, &h1).unwrap();
        let u2 = accumulate_weight(&p, &m, &f, 0.0, 1.0, &z, &h2).unwrap();
        let u = accumulate_weight(&p, &m, &f, 0.0, 1.0, &z, &(h1 * 0.3 - h2 * 1.7)).unwrap();
        assert!((u - (0.3 * u1 - 1.7 * u2)).abs() <= 1e-12 * (1.0 + u.abs()));
    }

    #[test]
    fn states_merge_over_disjoint_windows() {
        let m = m1();
        let f = Additive::new(1.0);
        let p = simulate_path(&m, &f, 0.0, Vector::<1>::new(0.0), 1.0, 4, StreamKey::new(5)).unwrap();
        let z = cutoff_for(&m, 0.5).unwrap();
        let h = Vector::<1>::new(1.0);
        let mut first = weight_state(&p, &m, &f, 0.0, 0.4, &z, &h).unwrap();
        let second = weight_state(&p, &m, &f, 0.4, 1.0, &z, &h).unwrap();
        let whole = weight_state(&p, &m, &f, 0.0, 1.0, &z, &h).unwrap();
        first.merge(&second);
        assert_relative_eq!(first.a, whole.a, max_relative = 1e-12);
        assert_relative_eq!(first.g, whole.g, max_relative = 1e-12);
        assert_relative_eq!(first.b, whole.b, max_relative = 1e-12);
        assert!(whole.g >= first.g - second.g);
    }

    #[test]
    fn schedules() {
        let m = m1();
        let f = Additive::new(1.0);
        let p = single_jump_path(0.1);
        let h = Vector::<1>::new(1.0);
        // no events between 0.6 and 0.9: constant
        let fixed = weight_schedule(&p, &m, &f, 0.0, &[0.6, 0.7, 0.9], EpsSchedule::Fixed(0.9), &h).unwrap();
        assert_eq!(fixed[0].as_ref().unwrap(), fixed[2].as_ref().unwrap());
        let singular = weight_schedule(&p, &m, &f, 0.0, &[1e-3, 1.0], EpsSchedule::Singular, &h).unwrap();
        assert!(matches!(singular[0], Err(Error::NoSmallJumps { .. })));
        let horizon = weight_schedule(&p, &m, &f, 0.0, &[1.0], EpsSchedule::FixedHorizon, &h).unwrap();
        assert_eq!(singular[1].as_ref().unwrap(), horizon[0].as_ref().unwrap());
    }

    #[test]
    fn diagnostics_csv() {
        let mut buf = Vec::new();
        write_weight_diagnostics(&[(1.0, 0.9, -0.005, 1e-3, 3e-5, 25.0)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
