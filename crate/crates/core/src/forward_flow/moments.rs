use serde::{Deserialize, Serialize};

use super::{simulate_path, PathRecord};
use crate::error::{domain, Result};
use crate::levy_model::StableLikeMeasure;
use crate::models::ForwardCoefficients;
use crate::rng::StreamKey;
use crate::stats::{par_indexed, Estimate};
use crate::Vector;

/// `E[sup_tau |X(tau)|^p]` over the given paths (grid nodes and pre-jump
/// states).
pub fn sup_moment<const D: usize>(paths: &[PathRecord<D>], p: f64) -> Estimate {
    let values: Vec<f64> = paths.iter().filter(|q| q.valid).map(|q| q.sup_norm().powf(p)).collect();
    Estimate::from_samples(&values)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentRow {
    pub x_norm: f64,
    pub sup_moment: Estimate,
    /// `sup_moment / (1 + |x|^p)`.
    pub ratio: Estimate,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MomentReport {
    pub p: f64,
    pub rows: Vec<MomentRow>,
    pub max_ratio: f64,
    /// Largest ratio divided by the ratio at the first starting point.
    pub max_relative_to_first: f64,
    pub min_relative_to_first: f64,
}

/// Estimates `E[sup |X|^p] / (1 + |x|^p)` for each starting point. The same
/// event streams are used for every starting point.
pub fn moment_check<const D: usize>(
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    starts: &[Vector<D>],
    t: f64,
    horizon: f64,
    p: f64,
    n_steps: usize,
    n_paths: usize,
    key: StreamKey,
) -> Result<MomentReport> {
    if !(p >= 2.0) {
        return domain(format!("moment order {p} must be >= 2"));
    }
    if starts.is_empty() || n_paths == 0 {
        return domain("moment check needs starting points and paths");
    }
    let mut rows = Vec::with_capacity(starts.len());
    for x in starts {
        let sups: Vec<Result<f64>> = par_indexed(n_paths, |i| {
            let path = simulate_path(m, forward, t, *x, horizon, n_steps, key.child(i as u64))?;
            Ok(path.sup_norm().powf(p))
        });
        let sups = sups.into_iter().collect::<Result<Vec<f64>>>()?;
        let scale = 1.0 + x.norm().powf(p);
        let est = Estimate::from_samples(&sups);
        rows.push(MomentRow {
            x_norm: x.norm(),
            sup_moment: est,
            ratio: Estimate { mean: est.mean / scale, stderr: est.stderr / scale, n: est.n },
        });
    }
    let first = rows[0].ratio.mean;
    let max_ratio = rows.iter().map(|r| r.ratio.mean).fold(0.0, f64::max);
    let min_ratio = rows.iter().map(|r| r.ratio.mean).fold(f64::INFINITY, f64::min);
    Ok(MomentReport {
        p,
        rows,
        max_ratio,
        max_relative_to_first: max_ratio / first,
        min_relative_to_first: min_ratio / first,
    })
}
