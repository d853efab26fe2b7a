use crate::error::{domain, Result};
use crate::Vector;

/// Radial cutoff `zeta_eps(u) = g(|u|)` localising the Malliavin structure on
/// small marks.
///
/// `g(r) = r^3` on `r <= eps/3`, `g(r) = r^3 s((2 eps/3 - r)/(eps/3))` on the
/// bridge, `0` beyond `2 eps/3`, with `s(w) = 10w^3 - 15w^4 + 6w^5`. This `s`
/// has vanishing first and second derivatives at both ends, so `g` is `C^2`.
///
/// With an inner taper at `delta`, `g` is further multiplied by
/// `s((r - delta)/delta)` on `[delta, 2 delta]` and vanishes below `delta`. A
/// simulation that drops marks with `|u| <= delta` needs this: the
/// integration by parts in the mark then has no boundary term at `delta`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffZeta {
    pub epsilon: f64,
    pub taper: Option<f64>,
}

#[inline]
fn smoothstep(w: f64) -> (f64, f64) {
    if w <= 0.0 {
        (0.0, 0.0)
    } else if w >= 1.0 {
        (1.0, 0.0)
    } else {
        let w2 = w * w;
        (w2 * w * (10.0 - 15.0 * w + 6.0 * w2), 30.0 * w2 * (1.0 - w) * (1.0 - w))
    }
}

impl CutoffZeta {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return domain(format!("cutoff scale {epsilon} outside (0, 1]"));
        }
        Ok(Self { epsilon, taper: None })
    }

    /// Cutoff tapered at the simulation's truncation radius.
    pub fn tapered(epsilon: f64, delta: f64) -> Result<Self> {
        let mut z = Self::new(epsilon)?;
        if delta > 0.0 {
            z.taper = Some(delta);
        }
        Ok(z)
    }

    /// Marks beyond this radius carry no mass.
    #[inline]
    pub fn support_radius(&self) -> f64 {
        2.0 * self.epsilon / 3.0
    }

    /// `(g(r), g'(r))`.
    #[inline]
    pub fn radial(&self, r: f64) -> (f64, f64) {
        let third = self.epsilon / 3.0;
        if r <= 0.0 || r > 2.0 * third {
            return (0.0, 0.0);
        }
        let r2 = r * r;
        let (mut g, mut dg) = if r <= third {
            (r2 * r, 3.0 * r2)
        } else {
            let (s, ds) = smoothstep((2.0 * third - r) / third);
            (r2 * r * s, 3.0 * r2 * s - r2 * r * ds / third)
        };
        if let Some(delta) = self.taper {
            if r <= delta {
                return (0.0, 0.0);
            }
            if r < 2.0 * delta {
                let (c, dc) = smoothstep((r - delta) / delta);
                dg = dg * c + g * dc / delta;
                g *= c;
            }
        }
        (g, dg)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.radial(super::norm(u)).0
    }

    pub fn grad(&self, u: &[f64]) -> Vec<f64> {
        let r = super::norm(u);
        let (_, dg) = self.radial(r);
        if r == 0.0 || dg == 0.0 {
            return vec![0.0; u.len()];
        }
        u.iter().map(|ui| dg * ui / r).collect()
    }

    pub fn eval_fixed<const D: usize>(&self, u: &Vector<D>) -> f64 {
        self.radial(u.norm()).0
    }

    pub fn grad_fixed<const D: usize>(&self, u: &Vector<D>) -> Vector<D> {
        let r = u.norm();
        let (_, dg) = self.radial(r);
        if r == 0.0 || dg == 0.0 {
            return Vector::<D>::zeros();
        }
        u * (dg / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn core_bridge_and_zero_regions() {
        let z = CutoffZeta::new(0.9).unwrap();
        assert_relative_eq!(z.eval(&[0.1]), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(z.grad(&[0.1])[0], 0.03, max_relative = 1e-12);
        assert_eq!(z.eval(&[0.7]), 0.0);
        assert_eq!(z.grad(&[0.7])[0], 0.0);
        let z = CutoffZeta::new(0.3).unwrap();
        let r = (0.05f64 * 0.05 * 2.0).sqrt();
        assert_relative_eq!(z.eval(&[0.05, 0.05]), r.powi(3), max_relative = 1e-12);
        assert_relative_eq!(r.powi(3), 3.5355e-4, max_relative = 1e-4);
    }

    #[test]
    fn rejects_scales_outside_unit_interval() {
        assert!(CutoffZeta::new(0.0).is_err());
        assert!(CutoffZeta::new(1.2).is_err());
    }

    #[test]
    fn gradient_bound_is_uniform_in_epsilon() {
        let mut worst: f64 = 0.0;
        for eps in [1e-3, 1e-2, 0.05, 0.1, 0.3, 0.6, 0.9] {
            let z = CutoffZeta::new(eps).unwrap();
            for k in 0..400 {
                let r = 10f64.powf(-6.0 + 6.0 * k as f64 / 399.0);
                let (_, dg) = z.radial(r);
                worst = worst.max(dg.abs() / (r * r));
            }
        }
        // the bridge gives |g'| <= 3 r^2 + r^3 (15/8)/(eps/3) <= 6.75 r^2
        assert!(worst <= 6.75 + 1e-12, "worst ratio {worst}");
    }

    // |g'''| <= 480 on the bridge, so the central difference error is at most
    // 80 h^2; rounding adds about 1e-16 g / h.
    fn fd_tolerance(h: f64, r: f64) -> f64 {
        100.0 * h * h + 1e-9 * r * r
    }

    #[test]
    fn gradient_matches_central_differences_at_bridge_endpoints() {
        let h = 1e-6;
        for eps in [0.3, 0.9] {
            let z = CutoffZeta::new(eps).unwrap();
            for r in [eps / 3.0, 2.0 * eps / 3.0, 0.5 * eps] {
                let fd = (z.radial(r + h).0 - z.radial(r - h).0) / (2.0 * h);
                assert!((fd - z.radial(r).1).abs() <= fd_tolerance(h, r));
            }
        }
    }

    #[test]
    fn central_difference_error_is_second_order_at_the_endpoints() {
        let z = CutoffZeta::new(0.9).unwrap();
        for r in [0.3, 0.6] {
            let err = |h: f64| ((z.radial(r + h).0 - z.radial(r - h).0) / (2.0 * h) - z.radial(r).1).abs();
            let ratio = err(2e-3) / err(1e-3);
            assert!((ratio - 4.0).abs() < 0.3, "r={r} ratio {ratio}");
        }
    }

    #[test]
    fn taper_keeps_bounds() {
        let z = CutoffZeta::tapered(0.3, 0.01).unwrap();
        assert_eq!(z.radial(0.009).0, 0.0);
        assert_eq!(z.radial(0.05).0, 0.05f64.powi(3));
        for k in 1..1000 {
            let r = 0.3 * k as f64 / 1000.0;
            let (g, dg) = z.radial(r);
            assert!(g >= 0.0 && g <= r.powi(3) + 1e-18);
            assert!(dg.abs() <= 6.75 * r * r + 1e-15);
        }
    }

    proptest! {
        #[test]
        fn central_differences_agree_in_every_region(eps in 0.01f64..0.9, frac in 0.01f64..0.99, taper in prop::bool::ANY) {
            let z = if taper { CutoffZeta::tapered(eps, eps / 40.0).unwrap() } else { CutoffZeta::new(eps).unwrap() };
            let r = frac * eps;
            let h = 1e-6;
            let fd = (z.radial(r + h).0 - z.radial(r - h).0) / (2.0 * h);
            let (g, dg) = z.radial(r);
            prop_assert!(g >= 0.0 && g <= r.powi(3) * (1.0 + 1e-12));
            prop_assert!((fd - dg).abs() <= fd_tolerance(h, r));
        }
    }
}
