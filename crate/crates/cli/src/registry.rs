//! Named models. A model string joins entries with `+`, one per role:
//!
//! ```text
//! forward:   additive | multiplicative-1d | smooth-2d
//! driver:    zero-driver | linear-driver:<lambda> | constant-driver:<c>
//! terminal:  smooth-terminal | cosine-terminal[:<omega>] | linear-terminal
//!            | kinked-terminal | constant-terminal:<c>
//! modifier:  mollify:<n>            (d = 1)
//! problem:   manufactured:cosine    (d = 1, v* = e^{-t} cos x)
//! ```
//!
//! Missing roles default to `additive`, `zero-driver` and `smooth-terminal`.

use std::sync::Arc;

use levyfbsde_core::levy_model::{StableLikeMeasure, Support};
use levyfbsde_core::models::{
    Additive, ConstantDriver, ConstantTerminal, CosineTerminal, Driver, FnTerminal, ForwardCoefficients, KinkedTerminal,
    LinearDriver, LinearTerminal, ModelCoefficients, Multiplicative1d, Smooth2d, SmoothTerminal, Terminal, ZeroDriver,
};
use levyfbsde_core::pde_solver::{make_manufactured, mollify_terminal, ManufacturedProblem};

use crate::config::{ConfigError, ForwardParams};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ForwardKind {
    Additive,
    Multiplicative1d,
    Smooth2d,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DriverKind {
    Zero,
    Linear(f64),
    Constant(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TerminalKind {
    Smooth,
    Cosine(f64),
    Linear,
    Kinked,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub forward: ForwardKind,
    pub driver: DriverKind,
    pub terminal: TerminalKind,
    pub mollify: Option<usize>,
    pub manufactured: bool,
}

fn err<T>(msg: String) -> Result<T, ConfigError> {
    Err(ConfigError(msg))
}

fn number(entry: &str, arg: Option<&str>) -> Result<f64, ConfigError> {
    match arg.map(str::parse::<f64>) {
        Some(Ok(v)) if v.is_finite() => Ok(v),
        _ => err(format!("model entry `{entry}` needs a numeric argument")),
    }
}

fn set<T>(slot: &mut Option<T>, v: T, entry: &str) -> Result<(), ConfigError> {
    if slot.is_some() {
        return err(format!("model entry `{entry}` repeats a role"));
    }
    *slot = Some(v);
    Ok(())
}

pub fn parse(model: &str, dim: usize) -> Result<ModelSpec, ConfigError> {
    let (mut forward, mut driver, mut terminal, mut mollify, mut manufactured) = (None, None, None, None, false);
    for entry in model.split('+').map(str::trim) {
        let (name, arg) = match entry.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (entry, None),
        };
        match name {
            "additive" => set(&mut forward, ForwardKind::Additive, entry)?,
            "multiplicative-1d" => set(&mut forward, ForwardKind::Multiplicative1d, entry)?,
            "smooth-2d" => set(&mut forward, ForwardKind::Smooth2d, entry)?,
            "zero-driver" => set(&mut driver, DriverKind::Zero, entry)?,
            "linear-driver" => set(&mut driver, DriverKind::Linear(number(entry, arg)?), entry)?,
            "constant-driver" => set(&mut driver, DriverKind::Constant(number(entry, arg)?), entry)?,
            "smooth-terminal" => set(&mut terminal, TerminalKind::Smooth, entry)?,
            "cosine-terminal" => {
                let omega = if arg.is_some() { number(entry, arg)? } else { 1.0 };
                set(&mut terminal, TerminalKind::Cosine(omega), entry)?
            }
            "linear-terminal" => set(&mut terminal, TerminalKind::Linear, entry)?,
            "kinked-terminal" => set(&mut terminal, TerminalKind::Kinked, entry)?,
            "constant-terminal" => set(&mut terminal, TerminalKind::Constant(number(entry, arg)?), entry)?,
            "mollify" => {
                let n = number(entry, arg)?;
                if !(n >= 1.0 && n.fract() == 0.0) {
                    return err(format!("`{entry}`: n must be a positive integer"));
                }
                set(&mut mollify, n as usize, entry)?
            }
            "manufactured" => {
                if arg != Some("cosine") {
                    return err(format!("unknown manufactured problem `{entry}` (available: manufactured:cosine)"));
                }
                manufactured = true;
            }
            _ => return err(format!("unknown model entry `{entry}`")),
        }
    }
    let spec = ModelSpec {
        forward: forward.unwrap_or(ForwardKind::Additive),
        driver: driver.unwrap_or(DriverKind::Zero),
        terminal: terminal.unwrap_or(TerminalKind::Smooth),
        mollify,
        manufactured,
    };
    match (spec.forward, dim) {
        (ForwardKind::Multiplicative1d, d) if d != 1 => return err("multiplicative-1d needs dim = 1".into()),
        (ForwardKind::Smooth2d, d) if d != 2 => return err("smooth-2d needs dim = 2".into()),
        _ => {}
    }
    if dim != 1 && (spec.mollify.is_some() || spec.manufactured) {
        return err("mollify and manufactured problems are one-dimensional".into());
    }
    if spec.manufactured && (driver.is_some() || terminal.is_some() || mollify.is_some()) {
        return err("a manufactured problem fixes its own driver and terminal".into());
    }
    Ok(spec)
}

pub struct Built<const D: usize> {
    pub coefficients: ModelCoefficients<D>,
    pub manufactured: Option<ManufacturedProblem>,
    /// Bound on `|phi(y) - phi(x)|` when `phi` is bounded.
    pub phi_oscillation: Option<f64>,
}

pub enum BuiltModel {
    One(Built<1>),
    Two(Built<2>),
}

fn driver<const D: usize>(kind: DriverKind) -> Arc<dyn Driver<D>> {
    match kind {
        DriverKind::Zero => Arc::new(ZeroDriver),
        DriverKind::Linear(l) => Arc::new(LinearDriver::new(l)),
        DriverKind::Constant(c) => Arc::new(ConstantDriver(c)),
    }
}

fn terminal<const D: usize>(kind: TerminalKind) -> (Arc<dyn Terminal<D>>, Option<f64>) {
    match kind {
        TerminalKind::Smooth => (Arc::new(SmoothTerminal), Some(2.0 * D as f64 + 1.0)),
        TerminalKind::Cosine(omega) => (Arc::new(CosineTerminal { omega }), Some(2.0)),
        TerminalKind::Linear => (Arc::new(LinearTerminal), None),
        TerminalKind::Kinked => (Arc::new(KinkedTerminal { x0: 0.0, cap: 1.0 }), Some(1.0)),
        TerminalKind::Constant(c) => (Arc::new(ConstantTerminal(c)), Some(0.0)),
    }
}

fn manufactured(
    forward: Arc<dyn ForwardCoefficients<1>>,
    m: &StableLikeMeasure,
    horizon: f64,
) -> Result<ManufacturedProblem, ConfigError> {
    make_manufactured(1.0, Arc::new(f64::cos), Some(Arc::new(|x: f64| -x.sin())), forward, m, Support::Simulated, horizon, 10.0)
        .map_err(|e| ConfigError(e.to_string()))
}

pub fn build(spec: &ModelSpec, p: ForwardParams, m: &StableLikeMeasure, horizon: f64) -> Result<BuiltModel, ConfigError> {
    match m.dim {
        1 => {
            let forward: Arc<dyn ForwardCoefficients<1>> = match spec.forward {
                ForwardKind::Additive => Arc::new(Additive { s0: p.s0, theta: p.theta }),
                ForwardKind::Multiplicative1d => Arc::new(Multiplicative1d { s0: p.s0, theta: p.theta }),
                ForwardKind::Smooth2d => return err("smooth-2d needs dim = 2".into()),
            };
            if spec.manufactured {
                let problem = manufactured(forward, m, horizon)?;
                return Ok(BuiltModel::One(Built {
                    coefficients: problem.coefficients.clone(),
                    phi_oscillation: Some(2.0),
                    manufactured: Some(problem),
                }));
            }
            let (mut phi, osc) = terminal::<1>(spec.terminal);
            if let Some(n) = spec.mollify {
                let inner = phi.clone();
                let f = Arc::new(move |x: f64| inner.value(&levyfbsde_core::Vector::<1>::new(x)));
                phi = Arc::new(mollify_terminal(&format!("{:?}", spec.terminal), f, n)) as Arc<FnTerminal> as Arc<dyn Terminal<1>>;
            }
            let coefficients = ModelCoefficients::new(forward, driver::<1>(spec.driver), phi);
            Ok(BuiltModel::One(Built { coefficients, manufactured: None, phi_oscillation: osc }))
        }
        2 => {
            let forward: Arc<dyn ForwardCoefficients<2>> = match spec.forward {
                ForwardKind::Additive => Arc::new(Additive { s0: p.s0, theta: p.theta }),
                ForwardKind::Smooth2d => Arc::new(Smooth2d { s0: p.s0, theta: p.theta }),
                ForwardKind::Multiplicative1d => return err("multiplicative-1d needs dim = 1".into()),
            };
            let (phi, osc) = terminal::<2>(spec.terminal);
            let coefficients = ModelCoefficients::new(forward, driver::<2>(spec.driver), phi);
            Ok(BuiltModel::Two(Built { coefficients, manufactured: None, phi_oscillation: osc }))
        }
        d => err(format!("dim = {d} is not supported")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_combinations() {
        let s = parse("multiplicative-1d+linear-driver:0.5+kinked-terminal", 1).unwrap();
        assert_eq!(s.forward, ForwardKind::Multiplicative1d);
        assert_eq!(s.driver, DriverKind::Linear(0.5));
        assert_eq!(s.terminal, TerminalKind::Kinked);
        assert_eq!(parse("kinked-terminal+mollify:16", 1).unwrap().mollify, Some(16));
        assert!(parse("manufactured:cosine", 1).unwrap().manufactured);
        assert_eq!(parse("smooth-2d", 2).unwrap().terminal, TerminalKind::Smooth);
    }

    #[test]
    fn rejects_conflicts() {
        for (model, dim) in [
            ("smooth-2d", 1),
            ("multiplicative-1d", 2),
            ("additive+smooth-2d", 2),
            ("linear-driver", 1),
            ("linear-driver:x", 1),
            ("mollify:0", 1),
            ("kinked-terminal+mollify:4", 2),
            ("manufactured:cosine+kinked-terminal", 1),
            ("manufactured:tanh", 1),
        ] {
            assert!(parse(model, dim).is_err(), "{model}");
        }
    }

    #[test]
    fn mollified_terminal_is_differentiable() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 0.05).unwrap();
        let spec = parse("kinked-terminal+mollify:8", 1).unwrap();
        let BuiltModel::One(b) = build(&spec, ForwardParams::default(), &m, 1.0).unwrap() else { panic!() };
        assert!(b.coefficients.terminal.gradient(&levyfbsde_core::Vector::<1>::new(0.3)).is_some());
        let raw = parse("kinked-terminal", 1).unwrap();
        let BuiltModel::One(k) = build(&raw, ForwardParams::default(), &m, 1.0).unwrap() else { panic!() };
        assert!(k.coefficients.terminal.gradient(&levyfbsde_core::Vector::<1>::new(0.3)).is_none());
    }
}
