use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use super::StableLikeMeasure;
use crate::error::{domain, Error, Result};
use crate::rng::StreamKey;
use crate::Vector;

/// An atom `(time, mark)` of the Poisson random measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent<const D: usize> {
    pub time: f64,
    pub mark: Vector<D>,
}

/// Draws the marks with `r_lo < |u| <= r_hi`.
///
/// The radius is sampled by inverting the CDF of `r^{-1-beta}` on the
/// annulus and the direction uniformly; for a non-constant amplitude the
/// proposal runs at the envelope rate `a1 * ...` and is thinned with
/// probability `a(u)/a1`.
#[derive(Clone, Debug)]
pub struct JumpSampler<const D: usize> {
    measure: StableLikeMeasure,
    r_lo: f64,
    r_hi: f64,
    envelope_rate: f64,
    a1: f64,
}

impl<const D: usize> JumpSampler<D> {
    /// Sampler for every simulated mark, `truncation_radius < |u| <= 1`.
    pub fn new(measure: &StableLikeMeasure) -> Result<Self> {
        Self::annulus(measure, measure.truncation_radius, 1.0)
    }

    pub fn annulus(measure: &StableLikeMeasure, r_lo: f64, r_hi: f64) -> Result<Self> {
        if measure.dim != D {
            return domain(format!("measure dimension {} != state dimension {D}", measure.dim));
        }
        if r_lo >= 1.0 || r_lo >= r_hi {
            return Err(Error::EmptyMeasure { radius: r_lo });
        }
        let r_hi = r_hi.min(1.0);
        let beta = measure.beta;
        let (_, a1) = measure.amplitude.bounds();
        let radial_mass = (r_lo.powf(-beta) - r_hi.powf(-beta)) / beta;
        let envelope_rate = a1 * measure.sphere_area() * radial_mass;
        let sampler = Self { measure: measure.clone(), r_lo, r_hi, envelope_rate, a1 };
        if !measure.amplitude.is_constant() {
            if let Ok(mass) = measure.tail_mass(r_lo) {
                log::debug!("mark sampler acceptance ratio {:.4}", mass / envelope_rate);
            }
        }
        Ok(sampler)
    }

    /// Expected number of proposals per unit time.
    pub fn envelope_rate(&self) -> f64 {
        self.envelope_rate
    }

    fn sample_mark<R: Rng + ?Sized>(&self, rng: &mut R) -> Vector<D> {
        let beta = self.measure.beta;
        let lo = self.r_lo.powf(-beta);
        let hi = self.r_hi.powf(-beta);
        let v: f64 = rng.random();
        let r = (lo - v * (lo - hi)).powf(-1.0 / beta);
        let mut dir = Vector::<D>::zeros();
        match D {
            1 => dir[0] = if rng.random::<bool>() { 1.0 } else { -1.0 },
            2 => {
                let phi = 2.0 * PI * rng.random::<f64>();
                dir[0] = phi.cos();
                dir[1] = phi.sin();
            }
            _ => loop {
                for i in 0..D {
                    dir[i] = StandardNormal.sample(rng);
                }
                let n = dir.norm();
                if n > 1e-12 {
                    dir /= n;
                    break;
                }
            },
        }
        dir * r
    }

    /// Events on `(t0, t1]`, sorted by time. Arrival times come from
    /// exponential gaps, which gives a Poisson count with uniform times.
    pub fn sample<R: Rng + ?Sized>(&self, t0: f64, t1: f64, rng: &mut R) -> Vec<JumpEvent<D>> {
        let mut events = Vec::new();
        if !(t1 > t0) {
            return events;
        }
        let gap = Exp::new(self.envelope_rate).expect("positive rate");
        let constant = self.measure.amplitude.is_constant();
        let mut t = t0;
        loop {
            t += gap.sample(rng);
            if t > t1 {
                break;
            }
            let mark = self.sample_mark(rng);
            if !constant {
                let accept = self.measure.amplitude.value(mark.as_slice()) / self.a1;
                if rng.random::<f64>() >= accept {
                    continue;
                }
            }
            events.push(JumpEvent { time: t, mark });
        }
        events
    }
}

/// Poisson point process on `(t0, t1] x {truncation_radius < |u| <= 1}` with
/// intensity `dt x nu`, deterministic given `key`.
pub fn sample_jump_events<const D: usize>(
    measure: &StableLikeMeasure,
    t0: f64,
    t1: f64,
    key: StreamKey,
) -> Result<Vec<JumpEvent<D>>> {
    let sampler = JumpSampler::<D>::new(measure)?;
    Ok(sampler.sample(t0, t1, &mut key.rng()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levy_model::Amplitude;
    use crate::stats::{ks_uniform, Estimate};

    #[test]
    fn empty_interval_gives_no_events() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 0.5).unwrap();
        assert!(sample_jump_events::<1>(&m, 0.3, 0.3, StreamKey::new(1)).unwrap().is_empty());
    }

    #[test]
    fn truncation_at_or_above_one_is_an_empty_measure() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 1.0).unwrap();
        assert!(matches!(sample_jump_events::<1>(&m, 0.0, 1.0, StreamKey::new(1)), Err(Error::EmptyMeasure { .. })));
    }

    #[test]
    fn events_are_sorted_inside_the_annulus_and_reproducible() {
        let m = StableLikeMeasure::symmetric(2, 1.2, 0.05).unwrap();
        let a = sample_jump_events::<2>(&m, 0.0, 2.0, StreamKey::new(9)).unwrap();
        let b = sample_jump_events::<2>(&m, 0.0, 2.0, StreamKey::new(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.iter().all(|e| e.mark.norm() > 0.05 && e.mark.norm() <= 1.0 + 1e-12));
    }

    #[test]
    fn mean_count_equals_tail_mass() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 0.5).unwrap();
        let sampler = JumpSampler::<1>::new(&m).unwrap();
        let key = StreamKey::new(2024);
        let counts: Vec<f64> = (0..100_000u64)
            .map(|i| sampler.sample(0.0, 1.0, &mut key.child(i).rng()).len() as f64)
            .collect();
        let est = Estimate::from_samples(&counts);
        let expected = m.tail_mass(0.5).unwrap();
        assert!((expected - 2.43790).abs() < 1e-5);
        assert!((est.mean - expected).abs() <= 3.0 * est.stderr, "{est:?} vs {expected}");
    }

    #[test]
    fn mean_mark_size_matches_quadrature() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 0.5).unwrap();
        let sampler = JumpSampler::<1>::new(&m).unwrap();
        let key = StreamKey::new(77);
        let mut sizes = Vec::new();
        for i in 0..40_000u64 {
            for e in sampler.sample(0.0, 1.0, &mut key.child(i).rng()) {
                sizes.push(e.mark.norm());
            }
        }
        let est = Estimate::from_samples(&sizes);
        let rule = m.shell_rule(0.5, 1.0).unwrap();
        let expected = rule.integrate(|u| u[0].abs()) / rule.integrate(|_| 1.0);
        assert!((est.mean - expected).abs() <= 3.0 * est.stderr, "{est:?} vs {expected}");
    }

    #[test]
    fn event_times_are_uniform() {
        let m = StableLikeMeasure::symmetric(1, 1.5, 0.01).unwrap();
        // about 10^4 events
        let horizon = 7.5;
        let events = sample_jump_events::<1>(&m, 0.0, horizon, StreamKey::new(5)).unwrap();
        assert!(events.len() > 9_000);
        let times: Vec<f64> = events.iter().map(|e| e.time / horizon).collect();
        let (_, p) = ks_uniform(&times);
        assert!(p > 1e-3, "KS p-value {p}");
    }

    #[test]
    fn thinning_reproduces_the_tail_mass_of_a_non_constant_amplitude() {
        let m = StableLikeMeasure::new(1, 1.5, Amplitude::CosineBump { kappa: 0.6 }, 0.3).unwrap();
        let sampler = JumpSampler::<1>::new(&m).unwrap();
        let key = StreamKey::new(31);
        let counts: Vec<f64> = (0..50_000u64)
            .map(|i| sampler.sample(0.0, 1.0, &mut key.child(i).rng()).len() as f64)
            .collect();
        let est = Estimate::from_samples(&counts);
        let expected = m.tail_mass(0.3).unwrap();
        assert!((est.mean - expected).abs() <= 3.0 * est.stderr, "{est:?} vs {expected}");
    }
}
