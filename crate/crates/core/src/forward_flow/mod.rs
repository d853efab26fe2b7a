//! Jump-adapted Euler simulation of the forward SDE and its Jacobian flow.
//!
//! The grid of a path is the union of a deterministic mesh and the jump
//! times. Between grid nodes the drift is integrated with the left-point rule
//! and the Jacobian with the derivative of that step, so `jacobians` are the
//! exact derivatives of the discrete flow map. At a jump `(alpha, y)`:
//!
//! ```text
//! X(alpha)     = X(alpha-) + sigma(alpha, X(alpha-)) y
//! J(alpha)     = (I + D sigma(alpha, X(alpha-))[y]) J(alpha-)
//! ```
//!
//! Small jumps below the truncation radius are not simulated; for a symmetric
//! measure their compensator vanishes, so no drift correction is applied.

mod io;
mod moments;

pub use io::{events_from_json, events_to_json, write_path_csv};
pub use moments::{moment_check, sup_moment, MomentReport, MomentRow};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::levy_model::{sample_jump_events, JumpEvent, StableLikeMeasure};
use crate::models::ForwardCoefficients;
use crate::rng::StreamKey;
use crate::{Matrix, Vector};

/// Condition number of `sigma` above which a visited state is reported as
/// degenerate.
pub const CONDITION_LIMIT: f64 = 1e8;

/// A jump together with the state just before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord<const D: usize> {
    pub time: f64,
    pub mark: Vector<D>,
    pub pre_state: Vector<D>,
    pub pre_jacobian: Matrix<D>,
    /// Index of the grid node carrying the post-jump state.
    pub node: usize,
    /// Added by [`insert_particle`] rather than sampled.
    pub inserted: bool,
}

impl<const D: usize> EventRecord<D> {
    pub fn event(&self) -> JumpEvent<D> {
        JumpEvent { time: self.time, mark: self.mark }
    }
}

/// One simulated trajectory. `states[k]` and `jacobians[k]` are the
/// right-continuous values at `grid[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRecord<const D: usize> {
    pub t: f64,
    pub x: Vector<D>,
    pub horizon: f64,
    pub grid: Vec<f64>,
    pub is_jump: Vec<bool>,
    pub states: Vec<Vector<D>>,
    pub jacobians: Vec<Matrix<D>>,
    pub events: Vec<EventRecord<D>>,
    /// Non-jump times the path was stepped through.
    pub mesh: Vec<f64>,
    pub key: Option<StreamKey>,
    pub valid: bool,
    /// `sigma` was singular or badly conditioned at a visited jump.
    pub degenerate_sigma: bool,
    pub diagnostic: Option<String>,
}

impl<const D: usize> PathRecord<D> {
    pub fn terminal_state(&self) -> Vector<D> {
        *self.states.last().expect("path has nodes")
    }

    pub fn terminal_jacobian(&self) -> Matrix<D> {
        *self.jacobians.last().expect("path has nodes")
    }

    /// Index of the last grid node at or before `time`.
    pub fn node_at(&self, time: f64) -> usize {
        match self.grid.partition_point(|g| *g <= time) {
            0 => 0,
            k => k - 1,
        }
    }

    /// `X(time)` for a time on the grid; between nodes the value at the
    /// preceding node is returned.
    pub fn state_at(&self, time: f64) -> Vector<D> {
        self.states[self.node_at(time)]
    }

    pub fn sampled_events(&self) -> impl Iterator<Item = &EventRecord<D>> {
        self.events.iter().filter(|e| !e.inserted)
    }

    pub fn jump_events(&self) -> Vec<JumpEvent<D>> {
        self.events.iter().map(|e| e.event()).collect()
    }

    /// Largest `|X|` over grid nodes and pre-jump states.
    pub fn sup_norm(&self) -> f64 {
        let nodes = self.states.iter().map(|s| s.norm());
        let pre = self.events.iter().map(|e| e.pre_state.norm());
        nodes.chain(pre).fold(0.0, f64::max)
    }
}

/// `t = t_0 < ... < t_n = horizon`, uniform.
pub fn uniform_mesh(t: f64, horizon: f64, n_steps: usize) -> Vec<f64> {
    let n = n_steps.max(1);
    let mut mesh: Vec<f64> = (0..=n).map(|k| t + (horizon - t) * k as f64 / n as f64).collect();
    mesh[n] = horizon;
    mesh
}

/// Sorted union of `mesh` and `extra` inside `[t, horizon]`.
pub fn refine_mesh(mesh: &[f64], extra: &[f64]) -> Vec<f64> {
    let (lo, hi) = (mesh[0], *mesh.last().unwrap());
    let mut out: Vec<f64> = mesh.iter().chain(extra.iter().filter(|s| **s >= lo && **s <= hi)).copied().collect();
    out.sort_by(|a, b| a.total_cmp(b));
    out.dedup();
    out
}

/// Frobenius-norm condition number; within a factor `D` of the spectral one.
fn condition_number<const D: usize>(s: &Matrix<D>) -> f64 {
    match s.try_inverse() {
        Some(inv) => s.norm() * inv.norm(),
        None => f64::INFINITY,
    }
}

/// Deterministic core: steps `(x, I)` from `mesh[0]` to the last mesh time
/// through the given events. Events must be sorted, inside `(mesh[0], end]`.
pub fn euler_flow<const D: usize>(
    forward: &dyn ForwardCoefficients<D>,
    x: Vector<D>,
    mesh: &[f64],
    events: &[(JumpEvent<D>, bool)],
) -> PathRecord<D> {
    let t = mesh[0];
    let horizon = *mesh.last().unwrap();
    let n_nodes = mesh.len() + events.len();
    let mut grid = Vec::with_capacity(n_nodes);
    let mut is_jump = Vec::with_capacity(n_nodes);
    let mut states = Vec::with_capacity(n_nodes);
    let mut jacobians = Vec::with_capacity(n_nodes);
    let mut records = Vec::with_capacity(events.len());

    let mut xs = x;
    let mut jac = Matrix::<D>::identity();
    let mut now = t;
    grid.push(t);
    is_jump.push(false);
    states.push(xs);
    jacobians.push(jac);

    let mut valid = true;
    let mut degenerate = false;
    let mut diagnostic = None;
    let (mut i_mesh, mut i_ev) = (1, 0);
    while i_mesh < mesh.len() || i_ev < events.len() {
        let next_mesh = mesh.get(i_mesh).copied().unwrap_or(f64::INFINITY);
        let next_ev = events.get(i_ev).map(|e| e.0.time).unwrap_or(f64::INFINITY);
        let next = next_mesh.min(next_ev);
        let dt = next - now;
        if dt > 0.0 {
            let b = forward.drift(now, &xs);
            let db = forward.drift_jacobian(now, &xs);
            jac += db * jac * dt;
            xs += b * dt;
            now = next;
        }
        if next_ev <= next_mesh {
            let (ev, inserted) = &events[i_ev];
            i_ev += 1;
            let sigma = forward.sigma(now, &xs);
            if !degenerate && condition_number(&sigma) > CONDITION_LIMIT {
                degenerate = true;
                diagnostic.get_or_insert_with(|| format!("sigma is degenerate at t={now}"));
            }
            let ds = forward.sigma_derivative(now, &xs, &ev.mark);
            records.push(EventRecord {
                time: now,
                mark: ev.mark,
                pre_state: xs,
                pre_jacobian: jac,
                node: grid.len(),
                inserted: *inserted,
            });
            xs += sigma * ev.mark;
            jac = (Matrix::<D>::identity() + ds) * jac;
            grid.push(now);
            is_jump.push(true);
            if next_mesh == next_ev {
                // the mesh time coincides with the jump; one node for both
                i_mesh += 1;
            }
        } else {
            i_mesh += 1;
            grid.push(now);
            is_jump.push(false);
        }
        if valid && !(xs.iter().all(|v| v.is_finite()) && jac.iter().all(|v| v.is_finite())) {
            valid = false;
            diagnostic = Some(format!("non-finite state at t={now}"));
        }
        states.push(xs);
        jacobians.push(jac);
    }

    PathRecord {
        t,
        x,
        horizon,
        grid,
        is_jump,
        states,
        jacobians,
        events: records,
        mesh: mesh.to_vec(),
        key: None,
        valid,
        degenerate_sigma: degenerate,
        diagnostic,
    }
}

fn check_origin(t: f64, horizon: f64) -> Result<()> {
    if !(t < horizon) || !t.is_finite() || !horizon.is_finite() {
        return domain(format!("need t < T, got t={t}, T={horizon}"));
    }
    Ok(())
}

/// Simulates `X(., t, x)` on `[t, horizon]` with a uniform `n_steps` mesh
/// refined by `observation_times`; the events are drawn from `key`.
pub fn simulate_path_observed<const D: usize>(
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    x: Vector<D>,
    horizon: f64,
    n_steps: usize,
    observation_times: &[f64],
    key: StreamKey,
) -> Result<PathRecord<D>> {
    check_origin(t, horizon)?;
    if n_steps == 0 {
        return domain("n_steps must be at least 1");
    }
    let events = sample_jump_events::<D>(m, t, horizon, key)?;
    let mesh = refine_mesh(&uniform_mesh(t, horizon, n_steps), observation_times);
    let tagged: Vec<_> = events.into_iter().map(|e| (e, false)).collect();
    let mut path = euler_flow(forward, x, &mesh, &tagged);
    path.key = Some(key);
    if !path.valid {
        log::warn!("invalid path {key:?}: {}", path.diagnostic.as_deref().unwrap_or(""));
    }
    Ok(path)
}

pub fn simulate_path<const D: usize>(
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    x: Vector<D>,
    horizon: f64,
    n_steps: usize,
    key: StreamKey,
) -> Result<PathRecord<D>> {
    simulate_path_observed(m, forward, t, x, horizon, n_steps, &[], key)
}

/// Re-solves `path` with the same mesh and the given events.
pub fn resolve_with_events<const D: usize>(
    path: &PathRecord<D>,
    forward: &dyn ForwardCoefficients<D>,
    x: Vector<D>,
    events: &[(JumpEvent<D>, bool)],
) -> PathRecord<D> {
    let mut out = euler_flow(forward, x, &path.mesh, events);
    out.key = path.key;
    out
}

fn tagged_events<const D: usize>(path: &PathRecord<D>) -> Vec<(JumpEvent<D>, bool)> {
    path.events.iter().map(|e| (e.event(), e.inserted)).collect()
}

/// Same noise, different starting point.
pub fn with_start<const D: usize>(path: &PathRecord<D>, forward: &dyn ForwardCoefficients<D>, x: Vector<D>) -> PathRecord<D> {
    resolve_with_events(path, forward, x, &tagged_events(path))
}

/// The flow started at grid node `node` from the path's own state there,
/// driven by the remaining events: `X(., s, X(s, t, x))` with `s = grid[node]`.
/// Its Jacobian starts at the identity.
pub fn restart<const D: usize>(path: &PathRecord<D>, forward: &dyn ForwardCoefficients<D>, node: usize) -> Result<PathRecord<D>> {
    if node >= path.grid.len() {
        return domain(format!("node {node} outside the path grid"));
    }
    let s = path.grid[node];
    if s >= path.horizon {
        return domain("cannot restart at the horizon");
    }
    // the mesh of the restarted flow is the remaining grid without jump nodes,
    // so every step is the one the original path took
    let mut mesh: Vec<f64> = vec![s];
    mesh.extend(path.grid.iter().zip(&path.is_jump).skip(node + 1).filter(|(_, j)| !**j).map(|(g, _)| *g));
    if *mesh.last().unwrap() < path.horizon {
        mesh.push(path.horizon);
    }
    let events: Vec<_> = path.events.iter().filter(|e| e.node > node).map(|e| (e.event(), e.inserted)).collect();
    let mut out = euler_flow(forward, path.states[node], &mesh, &events);
    out.key = path.key;
    Ok(out)
}

/// The same path with `times` added to the mesh.
pub fn refine_path<const D: usize>(path: &PathRecord<D>, forward: &dyn ForwardCoefficients<D>, times: &[f64]) -> PathRecord<D> {
    let mesh = refine_mesh(&path.mesh, times);
    let mut out = euler_flow(forward, path.x, &mesh, &tagged_events(path));
    out.key = path.key;
    out
}

/// Lent particle: the path of `X^{(alpha, y)}`, i.e. the same configuration
/// plus one jump of mark `y` at `alpha`. `alpha` is added to the mesh, so the
/// comparison path is `refine_path(path, &[alpha])`.
pub fn insert_particle<const D: usize>(
    path: &PathRecord<D>,
    alpha: f64,
    y: Vector<D>,
    forward: &dyn ForwardCoefficients<D>,
) -> Result<PathRecord<D>> {
    if !(alpha > path.t && alpha <= path.horizon) {
        return domain(format!("particle time {alpha} outside ({}, {}]", path.t, path.horizon));
    }
    if !(y.norm() <= 1.0) {
        return domain(format!("particle mark |y| = {} outside the unit ball", y.norm()));
    }
    let mut events = tagged_events(path);
    let pos = events.partition_point(|(e, _)| e.time <= alpha);
    events.insert(pos, (JumpEvent { time: alpha, mark: y }, true));
    let mesh = refine_mesh(&path.mesh, &[alpha]);
    let mut out = euler_flow(forward, path.x, &mesh, &events);
    out.key = path.key;
    Ok(out)
}

/// `[X^{(alpha, y + delta e_i)}(T) - X^{(alpha, y - delta e_i)}(T)] / (2 delta)`
/// for the event `event_index`, moving that event's mark with the rest of the
/// configuration held fixed. `delta` is halved (up to 20 times) until both
/// perturbed marks lie in the punctured unit ball.
pub fn mark_sensitivity<const D: usize>(
    path: &PathRecord<D>,
    event_index: usize,
    direction: usize,
    delta: f64,
    forward: &dyn ForwardCoefficients<D>,
) -> Result<Vector<D>> {
    let ev = path.events.get(event_index).ok_or_else(|| Error::Domain(format!("no event {event_index}")))?;
    if direction >= D {
        return domain(format!("direction {direction} outside dimension {D}"));
    }
    let mut e = Vector::<D>::zeros();
    e[direction] = 1.0;
    let mut d = delta;
    let inside = |u: Vector<D>| u.norm() > 0.0 && u.norm() <= 1.0;
    let mut tries = 0;
    while !(inside(ev.mark + e * d) && inside(ev.mark - e * d)) {
        d *= 0.5;
        tries += 1;
        if tries > 20 {
            return domain(format!("event {event_index} is too close to the boundary of the ball"));
        }
    }
    let mut events = tagged_events(path);
    let terminal = |events: &[(JumpEvent<D>, bool)]| euler_flow(forward, path.x, &path.mesh, events).terminal_state();
    events[event_index].0.mark = ev.mark + e * d;
    let up = terminal(&events);
    events[event_index].0.mark = ev.mark - e * d;
    let down = terminal(&events);
    Ok((up - down) / (2.0 * d))
}

/// `grad X(T, alpha) sigma(alpha, X(alpha-)) e_i` for event `event_index`,
/// where `grad X(T, alpha)` is the Jacobian of the flow restarted just after
/// the jump.
pub fn lent_particle_derivative<const D: usize>(
    path: &PathRecord<D>,
    event_index: usize,
    direction: usize,
    forward: &dyn ForwardCoefficients<D>,
) -> Result<Vector<D>> {
    let ev = path.events.get(event_index).ok_or_else(|| Error::Domain(format!("no event {event_index}")))?;
    let restarted = if ev.time < path.horizon { Some(restart(path, forward, ev.node)?) } else { None };
    let jac = restarted.map(|p| p.terminal_jacobian()).unwrap_or_else(Matrix::<D>::identity);
    let sigma = forward.sigma(ev.time, &ev.pre_state);
    Ok(jac * sigma.column(direction))
}
