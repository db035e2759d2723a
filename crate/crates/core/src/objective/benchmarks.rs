//! Benchmark objectives whose smoothness constant `L` and gradient bound
//! `sigma` are known in closed form.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{FiniteSumObjective, ObjectiveHandle, ObjectiveMeta};
use crate::error::{Error, Result};
use crate::linalg::{dot, is_symmetric, jacobi_eigenvalues, matvec, norm};

/// `f(x) = 1/2 x^T A x` for symmetric `A`.
///
/// `L` is the spectral norm of `A`. The gradient is unbounded on `R^d`, so
/// `sigma = |A|_2 * sqrt(d) * radius` is only valid on the box
/// `|x|_inf <= radius`, which is recorded in `sigma_box`. For positive
/// semidefinite `A` the minimum is `0` at the origin; otherwise `f_star` is
/// `-inf`.
pub fn quadratic(a: Vec<Vec<f64>>, box_radius: f64) -> Result<ObjectiveHandle> {
    let d = a.len();
    if d == 0 {
        return Err(Error::Empty("quadratic matrix"));
    }
    if !is_symmetric(&a, 1e-12) {
        return Err(Error::invalid("A", "matrix must be square and symmetric"));
    }
    if !(box_radius > 0.0) {
        return Err(Error::invalid("box_radius", "must be positive"));
    }
    let eig = jacobi_eigenvalues(&a);
    let lipschitz = eig.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if lipschitz == 0.0 {
        return Err(Error::invalid("A", "zero matrix has no positive smoothness constant"));
    }
    let psd = eig[0] >= -1e-12 * lipschitz;
    let mut meta = ObjectiveMeta::new(lipschitz, lipschitz * (d as f64).sqrt() * box_radius, 0.0);
    meta.sigma_box = Some(box_radius);
    if psd {
        meta = meta.with_minimizer(vec![0.0; d]).with_bounds(Some(0.0), None);
    } else {
        meta.f_star = f64::NEG_INFINITY;
    }

    let (av, ag, ah) = (a.clone(), a.clone(), a);
    Ok(ObjectiveHandle::new(
        "quadratic",
        d,
        meta,
        move |x| 0.5 * dot(x, &matvec(&av, x)),
        move |x| matvec(&ag, x),
    )
    .with_hvp(move |_x, v| matvec(&ah, v)))
}

/// `log(1 + e^u) + log(1 + e^-u)`, evaluated without overflow.
fn softplus_pair(u: f64) -> f64 {
    let a = u.abs();
    a + 2.0 * (-a).exp().ln_1p()
}

/// Sum of softplus terms over symmetric pairs of directions:
/// `f(x) = sum_i softplus(a_i^T x) + softplus(-a_i^T x)`.
///
/// The gradient `sum_i tanh(a_i^T x / 2) a_i` is a sum of (shifted)
/// sigmoids, so it is bounded by `sigma = sum_i |a_i|` everywhere. The
/// Hessian is `sum_i 1/2 sech^2(a_i^T x / 2) a_i a_i^T`, giving
/// `L = 1/2 lambda_max(sum_i a_i a_i^T)`. Each pair is minimized at
/// `a_i^T x = 0`, so the minimum is `k log 2` at the origin with `k = 2m`
/// softplus terms.
pub fn logistic_sum(directions: Vec<Vec<f64>>) -> Result<ObjectiveHandle> {
    let d = directions.first().ok_or(Error::Empty("logistic-sum directions"))?.len();
    if d == 0 || directions.iter().any(|a| a.len() != d) {
        return Err(Error::invalid("directions", "all directions must share a positive dimension"));
    }
    let gram: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| directions.iter().map(|a| a[i] * a[j]).sum()).collect())
        .collect();
    let lam_max = *jacobi_eigenvalues(&gram).last().unwrap();
    if !(lam_max > 0.0) {
        return Err(Error::invalid("directions", "directions must not all vanish"));
    }
    let sigma: f64 = directions.iter().map(|a| norm(a)).sum();
    let k = 2 * directions.len();
    let f_star = k as f64 * std::f64::consts::LN_2;
    let meta = ObjectiveMeta::new(0.5 * lam_max, sigma, f_star)
        .with_minimizer(vec![0.0; d])
        .with_bounds(Some(f_star), None);

    let dirs = std::sync::Arc::new(directions);
    let (dv, dg, dh) = (dirs.clone(), dirs.clone(), dirs);
    Ok(ObjectiveHandle::new(
        "logistic_sum",
        d,
        meta,
        move |x| dv.iter().map(|a| softplus_pair(dot(a, x))).sum(),
        move |x| {
            let mut g = vec![0.0; x.len()];
            for a in dg.iter() {
                let w = (0.5 * dot(a, x)).tanh();
                g.iter_mut().zip(a).for_each(|(gi, ai)| *gi += w * ai);
            }
            g
        },
    )
    .with_hvp(move |x, v| {
        let mut h = vec![0.0; x.len()];
        for a in dh.iter() {
            let t = (0.5 * dot(a, x)).tanh();
            let w = 0.5 * (1.0 - t * t) * dot(a, v);
            h.iter_mut().zip(a).for_each(|(hi, ai)| *hi += w * ai);
        }
        h
    }))
}

/// [`logistic_sum`] with `pairs` Gaussian directions rescaled to norm `scale`.
pub fn logistic_sum_random<R: Rng + ?Sized>(
    rng: &mut R,
    dim: usize,
    pairs: usize,
    scale: f64,
) -> Result<ObjectiveHandle> {
    if pairs == 0 || dim == 0 {
        return Err(Error::Empty("logistic-sum directions"));
    }
    let directions = (0..pairs)
        .map(|_| {
            let a: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let n = norm(&a);
            a.into_iter().map(|x| scale * x / n).collect()
        })
        .collect();
    logistic_sum(directions)
}

/// Pseudo-Huber bowl `f(x) = delta * sqrt(delta^2 + |x|^2) - delta^2`.
///
/// `|grad f| < delta` everywhere and the Hessian `delta / r (I - x x^T / r^2)`
/// (with `r = sqrt(delta^2 + |x|^2)`) has largest eigenvalue `1` at the
/// origin, so `L = 1` and `sigma = delta`, both exact suprema.
pub fn pseudo_huber(dim: usize, delta: f64) -> Result<ObjectiveHandle> {
    if dim == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let meta = ObjectiveMeta::new(1.0, delta, 0.0)
        .with_minimizer(vec![0.0; dim])
        .with_bounds(Some(0.0), None);
    Ok(ObjectiveHandle::new(
        "pseudo_huber",
        dim,
        meta,
        move |x| {
            let s = dot(x, x);
            // delta*(r - delta) rewritten to avoid cancellation near 0
            delta * s / ((delta * delta + s).sqrt() + delta)
        },
        move |x| {
            let r = (delta * delta + dot(x, x)).sqrt();
            x.iter().map(|xi| delta * xi / r).collect()
        },
    )
    .with_hvp(move |x, v| {
        let r2 = delta * delta + dot(x, x);
        let r = r2.sqrt();
        let xv = dot(x, v);
        x.iter()
            .zip(v)
            .map(|(xi, vi)| delta / r * (vi - xi * xv / r2))
            .collect()
    }))
}

/// Finite sum `f_p = c_p * g` with every `c_p > 0`. All component gradients
/// are positive multiples of `grad g`, so they agree in sign everywhere.
pub fn scaled_finite_sum(base: &ObjectiveHandle, scales: &[f64]) -> Result<FiniteSumObjective> {
    if scales.is_empty() {
        return Err(Error::Empty("finite-sum scalings"));
    }
    if let Some(bad) = scales.iter().find(|&&c| !(c > 0.0 && c.is_finite())) {
        return Err(Error::invalid("scales", format!("scaling {bad} must be positive")));
    }
    let bm = base.meta().clone();
    let components = scales
        .iter()
        .enumerate()
        .map(|(p, &c)| {
            let mut meta = bm.clone();
            meta.lipschitz *= c;
            meta.sigma *= c;
            meta.f_star *= c;
            meta.lower_bound = bm.lower_bound.map(|b| b * c);
            meta.upper_bound = bm.upper_bound.map(|b| b * c);
            let (bv, bg) = (base.clone(), base.clone());
            let mut h = ObjectiveHandle::try_new(
                format!("{}*{}", base.name(), p),
                base.dim(),
                meta,
                move |x| Ok(c * bv.eval(x)?),
                move |x| Ok(bv_scale(bg.grad(x)?, c)),
            );
            if base.has_analytic_hvp() {
                let bh = base.clone();
                h = h.with_try_hvp(move |x, v| Ok(bv_scale(bh.hvp(x, v)?, c)));
            }
            h
        })
        .collect();
    let c_mean = scales.iter().sum::<f64>() / scales.len() as f64;
    let mut mean_meta = bm.clone();
    mean_meta.lipschitz *= c_mean;
    mean_meta.sigma *= c_mean;
    mean_meta.f_star *= c_mean;
    mean_meta.lower_bound = bm.lower_bound.map(|b| b * c_mean);
    mean_meta.upper_bound = bm.upper_bound.map(|b| b * c_mean);
    Ok(FiniteSumObjective::new(components)?.with_mean_meta(mean_meta))
}

fn bv_scale(mut v: Vec<f64>, c: f64) -> Vec<f64> {
    v.iter_mut().for_each(|x| *x *= c);
    v
}
