//! Objective functions and their first- and second-order oracles.
//!
//! An [`ObjectiveHandle`] bundles a value oracle, a gradient oracle, an
//! optional analytic Hessian-vector product and the smoothness metadata
//! ([`ObjectiveMeta`]) that the step-size and budget formulas consume.
//! Handles are immutable and cheap to clone, so independent runs can share
//! them across threads.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, dot, norm, norm_inf, sub};

pub mod benchmarks;

/// Central-difference step for gradients is `GRAD_FD_STEP * (1 + |x|_inf)`.
pub const GRAD_FD_STEP: f64 = 1e-5;
/// Base central-difference step for Hessian-vector products.
pub const HVP_FD_STEP: f64 = 1e-4;

/// Constants a theorem needs about `f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveMeta {
    /// Lipschitz constant of the gradient.
    pub lipschitz: f64,
    /// Upper bound on the gradient norm.
    pub sigma: f64,
    /// `f(x*)`; `-inf` when `f` is unbounded below.
    pub f_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimizer: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_bound: Option<f64>,
    /// When set, `sigma` only holds on the box `|x|_inf <= sigma_box`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_box: Option<f64>,
    #[serde(default)]
    pub sigma_estimated: bool,
    #[serde(default)]
    pub lipschitz_estimated: bool,
    /// `f_star` is only known to be a lower bound on the minimum.
    #[serde(default)]
    pub f_star_is_bound: bool,
}

impl ObjectiveMeta {
    pub fn new(lipschitz: f64, sigma: f64, f_star: f64) -> Self {
        ObjectiveMeta {
            lipschitz,
            sigma,
            f_star,
            minimizer: None,
            lower_bound: None,
            upper_bound: None,
            sigma_box: None,
            sigma_estimated: false,
            lipschitz_estimated: false,
            f_star_is_bound: false,
        }
    }

    pub fn with_minimizer(mut self, x_star: Vec<f64>) -> Self {
        self.minimizer = Some(x_star);
        self
    }

    pub fn with_bounds(mut self, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.lower_bound = lower;
        self.upper_bound = upper;
        self
    }

    /// True when both `L` and `sigma` are exact (not estimated) constants.
    pub fn is_exact(&self) -> bool {
        !self.sigma_estimated && !self.lipschitz_estimated
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(Error::Metadata(format!("L = {} must be positive", self.lipschitz)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Metadata(format!("sigma = {} must be positive", self.sigma)));
        }
        if self.f_star.is_nan() {
            return Err(Error::Metadata("f_star is NaN".into()));
        }
        if let Some(lo) = self.lower_bound {
            if lo > self.f_star {
                return Err(Error::Metadata(format!("lower bound {lo} exceeds f_star {}", self.f_star)));
            }
        }
        if let Some(hi) = self.upper_bound {
            if self.f_star > hi {
                return Err(Error::Metadata(format!("f_star {} exceeds upper bound {hi}", self.f_star)));
            }
        }
        Ok(())
    }
}

type ValueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync;
type ValueGradFn = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync;
type HvpFn = dyn Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync;

/// A differentiable function on `R^d` with metadata.
#[derive(Clone)]
pub struct ObjectiveHandle {
    name: String,
    dim: usize,
    value_fn: Arc<ValueFn>,
    grad_fn: Arc<GradFn>,
    value_grad_fn: Option<Arc<ValueGradFn>>,
    hvp_fn: Option<Arc<HvpFn>>,
    meta: ObjectiveMeta,
}

impl fmt::Debug for ObjectiveHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ObjectiveHandle")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("analytic_hvp", &self.hvp_fn.is_some())
            .field("meta", &self.meta)
            .finish()
    }
}

impl ObjectiveHandle {
    /// Builds a handle from infallible value and gradient closures.
    pub fn new<V, G>(name: impl Into<String>, dim: usize, meta: ObjectiveMeta, value: V, grad: G) -> Self
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self::try_new(name, dim, meta, move |x| Ok(value(x)), move |x| Ok(grad(x)))
    }

    pub fn try_new<V, G>(name: impl Into<String>, dim: usize, meta: ObjectiveMeta, value: V, grad: G) -> Self
    where
        V: Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
        G: Fn(&[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        ObjectiveHandle {
            name: name.into(),
            dim,
            value_fn: Arc::new(value),
            grad_fn: Arc::new(grad),
            value_grad_fn: None,
            hvp_fn: None,
            meta,
        }
    }

    pub fn with_hvp<H>(self, hvp: H) -> Self
    where
        H: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.with_try_hvp(move |x, v| Ok(hvp(x, v)))
    }

    pub fn with_try_hvp<H>(mut self, hvp: H) -> Self
    where
        H: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        self.hvp_fn = Some(Arc::new(hvp));
        self
    }

    /// Supplies a fused value-and-gradient oracle (one forward pass instead of two).
    pub fn with_value_and_grad<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync + 'static,
    {
        self.value_grad_fn = Some(Arc::new(f));
        self
    }

    pub fn with_meta(mut self, meta: ObjectiveMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn meta(&self) -> &ObjectiveMeta {
        &self.meta
    }

    pub fn has_analytic_hvp(&self) -> bool {
        self.hvp_fn.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        (self.value_fn)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        (self.grad_fn)(x)
    }

    pub fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim, x.len())?;
        match &self.value_grad_fn {
            Some(f) => f(x),
            None => Ok(((self.value_fn)(x)?, (self.grad_fn)(x)?)),
        }
    }

    /// `H(x) v`, analytic when available and by central differences of the
    /// gradient otherwise.
    pub fn hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, v.len())?;
        match &self.hvp_fn {
            Some(h) => h(x, v),
            None => self.fd_hvp(x, v),
        }
    }

    /// `(grad f(x + h v) - grad f(x - h v)) / 2h` with `h = 1e-4 / max(1, |v|)`.
    pub fn fd_hvp(&self, x: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, v.len())?;
        if v.iter().all(|&vi| vi == 0.0) {
            return Ok(vec![0.0; self.dim]);
        }
        let h = HVP_FD_STEP / norm(v).max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        axpy(h, v, &mut xp);
        axpy(-h, v, &mut xm);
        let gp = (self.grad_fn)(&xp)?;
        let gm = (self.grad_fn)(&xm)?;
        Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    }

    /// Central-difference gradient with step `1e-5 * (1 + |x|_inf)`.
    pub fn fd_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let h = GRAD_FD_STEP * (1.0 + norm_inf(x));
        let mut probe = x.to_vec();
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            probe[i] = x[i] + h;
            let fp = (self.value_fn)(&probe)?;
            probe[i] = x[i] - h;
            let fm = (self.value_fn)(&probe)?;
            probe[i] = x[i];
            out.push((fp - fm) / (2.0 * h));
        }
        Ok(out)
    }

    /// Dense Hessian assembled column by column from finite-difference HVPs,
    /// then symmetrized. Only sensible at small dimension.
    pub fn fd_hessian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let d = self.dim;
        let mut cols = Vec::with_capacity(d);
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            cols.push(self.fd_hvp(x, &e)?);
            e[j] = 0.0;
        }
        Ok((0..d)
            .map(|i| (0..d).map(|j| 0.5 * (cols[j][i] + cols[i][j])).collect())
            .collect())
    }

    /// `f(x) + <grad f(x), y - x> + L/2 |y - x|^2 - f(y)`; non-negative for an
    /// `L`-smooth function.
    pub fn smoothness_slack(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (fx, gx) = self.value_and_grad(x)?;
        let fy = self.eval(y)?;
        let d = sub(y, x);
        Ok(fx + dot(&gx, &d) + 0.5 * self.meta.lipschitz * dot(&d, &d) - fy)
    }
}

/// Draws a point uniformly from the box `[-radius, radius]^dim`.
pub fn sample_box<R: Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-radius..=radius)).collect()
}

/// Smallest smoothness slack over `pairs` random pairs in the box; an
/// `L`-smooth objective keeps this at or above zero up to round-off.
pub fn smoothness_audit<R: Rng + ?Sized>(
    obj: &ObjectiveHandle,
    rng: &mut R,
    pairs: usize,
    radius: f64,
) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for _ in 0..pairs {
        let x = sample_box(rng, obj.dim(), radius);
        let y = sample_box(rng, obj.dim(), radius);
        worst = worst.min(obj.smoothness_slack(&x, &y)?);
    }
    Ok(worst)
}

/// Largest gradient norm over `points` random points in the box.
pub fn gradient_norm_audit<R: Rng + ?Sized>(
    obj: &ObjectiveHandle,
    rng: &mut R,
    points: usize,
    radius: f64,
) -> Result<f64> {
    let mut worst = 0.0_f64;
    for _ in 0..points {
        let x = sample_box(rng, obj.dim(), radius);
        worst = worst.max(norm(&obj.grad(&x)?));
    }
    Ok(worst)
}

/// `+1` for non-negative entries and `-1` otherwise.
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// First place where two component gradients disagree in sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SignViolation {
    pub point_index: usize,
    pub point: Vec<f64>,
    pub coord: usize,
    /// Component indices (0-based) whose gradients disagree at `coord`.
    pub p: usize,
    pub q: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignAudit {
    pub points_checked: usize,
    pub violation: Option<SignViolation>,
}

impl SignAudit {
    pub fn holds(&self) -> bool {
        self.violation.is_none()
    }
}

/// `f = (1/k) sum_p f_p` together with its components.
#[derive(Debug, Clone)]
pub struct FiniteSumObjective {
    components: Vec<ObjectiveHandle>,
    mean: ObjectiveHandle,
}

impl FiniteSumObjective {
    /// Averages the components. The mean's metadata is the average of the
    /// component constants, with `f_star` flagged as a lower bound; use
    /// [`FiniteSumObjective::with_mean_meta`] when exact values are known.
    pub fn new(components: Vec<ObjectiveHandle>) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("finite-sum components"))?;
        let dim = first.dim();
        for c in &components {
            check_dim(dim, c.dim())?;
        }
        let k = components.len() as f64;
        let mut meta = ObjectiveMeta::new(
            components.iter().map(|c| c.meta().lipschitz).sum::<f64>() / k,
            components.iter().map(|c| c.meta().sigma).sum::<f64>() / k,
            components.iter().map(|c| c.meta().f_star).sum::<f64>() / k,
        );
        meta.f_star_is_bound = components.len() > 1;
        meta.sigma_estimated = components.iter().any(|c| c.meta().sigma_estimated);
        meta.lipschitz_estimated = components.iter().any(|c| c.meta().lipschitz_estimated);

        let comps: Arc<Vec<ObjectiveHandle>> = Arc::new(components.clone());
        let (cv, cg, ch) = (comps.clone(), comps.clone(), comps.clone());
        let name = format!("mean[{}]", first.name());
        let mut mean = ObjectiveHandle::try_new(
            name,
            dim,
            meta,
            move |x| {
                let mut s = 0.0;
                for c in cv.iter() {
                    s += c.eval(x)?;
                }
                Ok(s / cv.len() as f64)
            },
            move |x| mean_of(cg.iter().map(|c| c.grad(x))),
        );
        if components.iter().all(ObjectiveHandle::has_analytic_hvp) {
            mean = mean.with_try_hvp(move |x, v| mean_of(ch.iter().map(|c| c.hvp(x, v))));
        }
        Ok(FiniteSumObjective { components, mean })
    }

    pub fn with_mean_meta(mut self, meta: ObjectiveMeta) -> Self {
        self.mean = self.mean.with_meta(meta);
        self
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn components(&self) -> &[ObjectiveHandle] {
        &self.components
    }

    pub fn mean(&self) -> &ObjectiveHandle {
        &self.mean
    }

    /// Bound on the gradient norm of every component.
    pub fn sigma_f(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.meta().sigma)
            .fold(0.0, f64::max)
    }

    /// Gradient of one component picked uniformly at random.
    pub fn sample_gradient<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        let i = rng.random_range(0..self.components.len());
        self.components[i].grad(x)
    }

    /// Checks that every pair of component gradients agrees coordinatewise in
    /// sign at each point, reporting the first disagreement.
    pub fn check_sign_condition(&self, points: &[Vec<f64>]) -> Result<SignAudit> {
        if points.is_empty() {
            return Err(Error::Empty("sign-audit points"));
        }
        for (pi, x) in points.iter().enumerate() {
            let grads = self
                .components
                .iter()
                .map(|c| c.grad(x))
                .collect::<Result<Vec<_>>>()?;
            for coord in 0..self.dim() {
                let s0 = sign(grads[0][coord]);
                if let Some(q) = grads.iter().position(|g| sign(g[coord]) != s0) {
                    return Ok(SignAudit {
                        points_checked: pi + 1,
                        violation: Some(SignViolation {
                            point_index: pi,
                            point: x.clone(),
                            coord,
                            p: 0,
                            q,
                        }),
                    });
                }
            }
        }
        Ok(SignAudit {
            points_checked: points.len(),
            violation: None,
        })
    }
}

fn mean_of(vectors: impl Iterator<Item = Result<Vec<f64>>>) -> Result<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for v in vectors {
        let v = v?;
        count += 1;
        match acc.as_mut() {
            None => acc = Some(v),
            Some(a) => axpy(1.0, &v, a),
        }
    }
    let mut acc = acc.ok_or(Error::Empty("finite-sum components"))?;
    let inv = 1.0 / count as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}
