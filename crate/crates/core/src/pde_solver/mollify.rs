use std::sync::Arc;

use crate::models::FnTerminal;
use crate::quadrature::composite;

type Scalar = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// `f * rho_n` with `rho_n(y) = n rho(n y)`, `rho(s) ∝ exp(-1/(1 - s^2))` on
/// `(-1, 1)`. The discrete kernel weights are positive and sum to one, so the
/// Lipschitz constant of `f` is preserved exactly.
#[derive(Clone)]
pub struct Mollified {
    pub n: f64,
    f: Scalar,
    /// `(s, weight, derivative weight)`
    nodes: Arc<Vec<(f64, f64, f64)>>,
}

impl Mollified {
    pub fn value(&self, x: f64) -> f64 {
        self.nodes.iter().map(|(s, w, _)| w * (self.f)(x - s / self.n)).sum()
    }

    /// `n int f(x - s/n) rho'(s) ds`; needs no derivative of `f`.
    pub fn derivative(&self, x: f64) -> f64 {
        self.n * self.nodes.iter().map(|(s, _, dw)| dw * (self.f)(x - s / self.n)).sum::<f64>()
    }
}

pub fn mollify(f: Scalar, n: usize) -> Mollified {
    let raw: Vec<(f64, f64, f64)> = composite(-1.0, 1.0, 16, 12)
        .into_iter()
        .map(|(s, w)| {
            let q = 1.0 - s * s;
            let rho = (-1.0 / q).exp();
            (s, w * rho, w * rho * (-2.0 * s / (q * q)))
        })
        .collect();
    let norm: f64 = raw.iter().map(|r| r.1).sum();
    let nodes = raw.into_iter().map(|(s, w, dw)| (s, w / norm, dw / norm)).collect();
    Mollified { n: n.max(1) as f64, f, nodes: Arc::new(nodes) }
}

/// A terminal function with the mollified values and their derivative.
pub fn mollify_terminal(name: &str, f: Scalar, n: usize) -> FnTerminal {
    let m = mollify(f, n);
    let md = m.clone();
    FnTerminal {
        name: format!("{name}*rho_{n}"),
        f: Arc::new(move |x| m.value(x)),
        df: Some(Arc::new(move |x| md.derivative(x))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn smooth_functions_move_by_at_most_lip_over_n() {
        for n in [4, 16, 64] {
            let m = mollify(Arc::new(f64::sin), n);
            for k in -50..=50 {
                let x = 0.1 * k as f64;
                assert!((m.value(x) - x.sin()).abs() <= 1.0 / n as f64);
                assert!((m.derivative(x) - x.cos()).abs() <= 1.0 / n as f64 + 1e-6);
            }
        }
    }

    #[test]
    fn absolute_value_at_the_kink_decreases_to_zero() {
        let vals: Vec<f64> = [4, 16, 64, 256].iter().map(|n| mollify(Arc::new(f64::abs), *n).value(0.0)).collect();
        assert!(vals.iter().all(|v| *v >= 0.0));
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
        assert!(vals[3] < 1e-2);
    }

    #[test]
    fn affine_functions_are_kept() {
        let m = mollify(Arc::new(|x| 2.0 * x - 1.0), 8);
        assert!((m.value(0.3) + 0.4).abs() < 1e-12);
        assert!((m.derivative(0.3) - 2.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn lipschitz_constant_is_preserved(x in -3.0f64..3.0, dx in 1e-3f64..1.0, n in 1usize..100) {
            let m = mollify(Arc::new(|x: f64| (x - 0.3).abs().min(1.5)), n);
            let q = (m.value(x + dx) - m.value(x)).abs() / dx;
            prop_assert!(q <= 1.0 + 1e-12);
        }
    }
}
