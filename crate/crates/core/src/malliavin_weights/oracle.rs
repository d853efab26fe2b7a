use rand::Rng;

use crate::error::{Error, Result};
use crate::forward_flow::PathRecord;
use crate::levy_model::{CutoffZeta, StableLikeMeasure};
use crate::models::ForwardCoefficients;
use crate::rng::StreamKey;
use crate::stats::{par_indexed, Estimate};
use crate::{Matrix, Vector};

struct Literal<const D: usize> {
    zeta: f64,
    grad_zeta: Vector<D>,
    /// `d_i (zeta^{1/2} k) / k`
    theta: Vector<D>,
    v: Vector<D>,
    /// column `i` is `d v / d y_i`
    dv: Matrix<D>,
}

/// Brute-force `U` with Rademacher auxiliary marks: the divergence and the
/// sharp-gradient of `G` are built as literal sums over the jumps and
/// averaged over `n_marks` draws. The mark derivative of `v` is taken by
/// central differences in `y`, independently of the closed form.
#[allow(clippy::too_many_arguments)]
pub fn mark_sampling_oracle<const D: usize>(
    path: &PathRecord<D>,
    m: &StableLikeMeasure,
    forward: &dyn ForwardCoefficients<D>,
    t: f64,
    tau: f64,
    zeta: &CutoffZeta,
    h: &Vector<D>,
    n_marks: usize,
    key: StreamKey,
) -> Result<Estimate> {
    let mut jumps = Vec::new();
    for ev in path.events.iter().filter(|e| e.time > t && e.time <= tau) {
        let z = zeta.eval_fixed(&ev.mark);
        if z <= 0.0 {
            continue;
        }
        let sigma_inv = forward
            .sigma_inverse(ev.time, &ev.pre_state)
            .ok_or(Error::SingularSigma { t: ev.time, condition: f64::INFINITY })?;
        let v_at = |y: &Vector<D>| {
            let jh = ev.pre_jacobian * h;
            sigma_inv * (jh + forward.sigma_derivative(ev.time, &ev.pre_state, y) * jh)
        };
        let step = 1e-2 * ev.mark.norm();
        let mut dv = Matrix::<D>::zeros();
        for i in 0..D {
            let mut e = Vector::<D>::zeros();
            e[i] = step;
            dv.set_column(i, &((v_at(&(ev.mark + e)) - v_at(&(ev.mark - e))) / (2.0 * step)));
        }
        let grad_zeta = zeta.grad_fixed(&ev.mark);
        let sqrt_z = z.sqrt();
        let theta = grad_zeta * (0.5 / sqrt_z) + m.log_density_grad_fixed(&ev.mark) * sqrt_z;
        jumps.push(Literal { zeta: z, grad_zeta, theta, v: v_at(&ev.mark), dv });
    }
    let g: f64 = jumps.iter().map(|j| j.zeta).sum();
    if !(g > 0.0) {
        return Err(Error::NoSmallJumps { t, tau });
    }
    let samples = par_indexed(n_marks, |s| {
        let mut rng = key.child(s as u64).rng();
        let (mut a, mut f_sum, mut g_sharp) = (0.0, 0.0, 0.0);
        for j in &jumps {
            let xi = Vector::<D>::from_fn(|_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let sqrt_z = j.zeta.sqrt();
            let xi_v = xi.dot(&j.v);
            // j_flat . v and its mark derivative along j_flat
            let flat_v = sqrt_z * xi_v;
            let mut deriv = 0.0;
            for i in 0..D {
                let d_i = 0.5 / sqrt_z * j.grad_zeta[i] * xi_v + sqrt_z * xi.dot(&j.dv.column(i));
                deriv += sqrt_z * xi[i] * d_i;
            }
            a -= j.theta.dot(&xi) * flat_v + deriv;
            f_sum += flat_v;
            g_sharp += sqrt_z * j.grad_zeta.dot(&xi);
        }
        a / g + f_sum * g_sharp / (g * g)
    });
    Ok(Estimate::from_samples(&samples))
}
