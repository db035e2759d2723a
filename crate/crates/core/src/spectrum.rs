//! Smallest Hessian eigenvalue by Lanczos iteration on a matrix-free
//! operator.
//!
//! Lanczos runs on `-H` so the target is the largest Ritz value, which the
//! iteration approximates from below; negating gives an estimate of
//! `lambda_min(H)` that is nonincreasing in the iteration count. Every new
//! basis vector is orthogonalized twice against all earlier ones.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, scale, solve_dense};
use crate::objective::ObjectiveHandle;
use crate::optim::{Observer, TraceRecord};
use crate::rng::{seeded, stream};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanczosResult {
    pub lambda_min: f64,
    /// `|H u - lambda u|` for the returned unit Ritz vector `u`.
    pub ritz_residual: f64,
    pub iters_used: usize,
    pub converged: bool,
    /// The Krylov space became invariant; the Ritz values are exact for it.
    pub breakdown: bool,
    /// Estimate after each iteration.
    pub history: Vec<f64>,
    #[serde(skip)]
    pub ritz_vector: Vec<f64>,
}

impl LanczosResult {
    /// Whether the estimates never increase, up to `tol` absolute.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.history.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

/// `min(dim, 200)`.
pub fn default_max_iters(dim: usize) -> usize {
    dim.min(DEFAULT_MAX_ITERS)
}

/// Number of eigenvalues of the symmetric tridiagonal `(a, b)` below `x`.
fn sturm_count(a: &[f64], b: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..a.len() {
        let off = if i == 0 { 0.0 } else { b[i - 1] * b[i - 1] / d };
        d = a[i] - x - off;
        if d == 0.0 {
            d = -f64::EPSILON * (a[i].abs() + x.abs() + f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal `a`
/// and off-diagonal `b`, by Sturm-sequence bisection.
pub fn tridiagonal_max_eigenvalue(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let radius = |i: usize| {
        (if i > 0 { b[i - 1].abs() } else { 0.0 }) + (if i + 1 < n { b[i].abs() } else { 0.0 })
    };
    let mut lo = (0..n).map(|i| a[i] - radius(i)).fold(f64::INFINITY, f64::min);
    let mut hi = (0..n).map(|i| a[i] + radius(i)).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(a, b, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn tridiagonal_eigenvector(a: &[f64], b: &[f64], theta: f64) -> Vec<f64> {
    let n = a.len();
    let shift = theta + 1e-10 * (1.0 + theta.abs());
    let m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        a[i] - shift
                    } else if j + 1 == i {
                        b[j]
                    } else if i + 1 == j {
                        b[i]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut y = vec![1.0; n];
    for _ in 0..3 {
        match solve_dense(&m, &y) {
            Some(next) => {
                let nn = norm(&next);
                if !(nn > 0.0 && nn.is_finite()) {
                    break;
                }
                y = next;
                scale(1.0 / nn, &mut y);
            }
            None => break,
        }
    }
    let ny = norm(&y);
    scale(1.0 / ny, &mut y);
    y
}

/// Estimates the smallest eigenvalue of the symmetric operator `hvp`.
///
/// Stops when consecutive estimates differ by less than `tol`, after
/// `max_iters` iterations, or on breakdown. A non-finite operator output is
/// an error.
pub fn lanczos_min_eig<F, R>(mut hvp: F, dim: usize, max_iters: usize, tol: f64, rng: &mut R) -> Result<LanczosResult>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
    R: Rng + ?Sized,
{
    if dim == 0 {
        return Err(Error::Empty("operator dimension"));
    }
    let max_iters = max_iters.clamp(1, dim);
    let mut q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nq = norm(&q);
    scale(1.0 / nq, &mut q);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_iters);
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut anorm = 0.0_f64;
    let mut converged = false;
    let mut breakdown = false;

    for j in 0..max_iters {
        let mut w = hvp(&q)?;
        if w.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: w.len() });
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::OperatorNotFinite { iteration: j + 1 });
        }
        scale(-1.0, &mut w);
        let alpha = dot(&q, &w);
        axpy(-alpha, &q, &mut w);
        if let (Some(prev), Some(&beta)) = (basis.last(), betas.last()) {
            axpy(-beta, prev, &mut w);
        }
        basis.push(q);
        for _ in 0..2 {
            for v in &basis {
                let c = dot(v, &w);
                axpy(-c, v, &mut w);
            }
        }
        alphas.push(alpha);
        let beta = norm(&w);
        anorm = anorm.max(alpha.abs() + beta + betas.last().map_or(0.0, |b: &f64| b.abs()));

        let theta = tridiagonal_max_eigenvalue(&alphas, &betas);
        history.push(-theta);
        if j > 0 && (history[j] - history[j - 1]).abs() < tol {
            converged = true;
            break;
        }
        if beta <= 1e-12 * anorm.max(f64::MIN_POSITIVE) {
            breakdown = true;
            break;
        }
        if j + 1 == max_iters {
            break;
        }
        betas.push(beta);
        scale(1.0 / beta, &mut w);
        q = w;
    }

    let k = alphas.len();
    let theta = -*history.last().expect("at least one iteration");
    let y = tridiagonal_eigenvector(&alphas, &betas[..k - 1], theta);
    let mut u = vec![0.0; dim];
    for (yi, v) in y.iter().zip(&basis) {
        axpy(*yi, v, &mut u);
    }
    let nu = norm(&u);
    scale(1.0 / nu, &mut u);
    let hu = hvp(&u)?;
    let lambda = -theta;
    let resid: Vec<f64> = hu.iter().zip(&u).map(|(h, ui)| h - lambda * ui).collect();
    Ok(LanczosResult {
        lambda_min: lambda,
        ritz_residual: norm(&resid),
        iters_used: k,
        converged,
        breakdown,
        history,
        ritz_vector: u,
    })
}

/// `v -> A v` for a dense matrix.
pub fn dense_operator(a: &[Vec<f64>]) -> impl FnMut(&[f64]) -> Result<Vec<f64>> + '_ {
    move |v| Ok(crate::linalg::matvec(a, v))
}

/// Fills `lambda_min` on trace rows `t = start, start + stride, ...` up to
/// `last_t`, using the objective's Hessian-vector product at the row's
/// iterate. Each evaluation uses its own seeded start vector.
pub struct MinEigTracker {
    obj: ObjectiveHandle,
    /// `None` disables tracking.
    stride: Option<u64>,
    start: u64,
    last_t: u64,
    max_iters: usize,
    tol: f64,
    seed: u64,
    pub results: Vec<(u64, LanczosResult)>,
}

impl MinEigTracker {
    pub fn new(obj: ObjectiveHandle, stride: Option<u64>, seed: u64) -> Self {
        let max_iters = default_max_iters(obj.dim());
        MinEigTracker {
            obj,
            stride: stride.filter(|&s| s > 0),
            start: 1,
            last_t: u64::MAX,
            max_iters,
            tol: DEFAULT_TOL,
            seed,
            results: Vec::new(),
        }
    }

    /// Only rows with `t <= last_t` are eligible.
    pub fn until(mut self, last_t: u64) -> Self {
        self.last_t = last_t;
        self
    }

    pub fn with_solver(mut self, max_iters: usize, tol: f64) -> Self {
        self.max_iters = max_iters;
        self.tol = tol;
        self
    }

    fn due(&self, t: u64) -> bool {
        match self.stride {
            Some(s) => t >= self.start && t <= self.last_t && (t - self.start) % s == 0,
            None => false,
        }
    }
}

impl Observer for MinEigTracker {
    fn observe(&mut self, x: &[f64], row: &mut TraceRecord) -> Result<()> {
        if !self.due(row.t) {
            return Ok(());
        }
        let mut rng = seeded(self.seed, &[stream::LANCZOS, row.t]);
        let obj = &self.obj;
        let res = lanczos_min_eig(|v| obj.hvp(x, v), obj.dim(), self.max_iters, self.tol, &mut rng)?;
        row.lambda_min = Some(res.lambda_min);
        self.results.push((row.t, res));
        Ok(())
    }
}
