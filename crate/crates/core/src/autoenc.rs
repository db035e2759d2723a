//! Fully connected autoencoder with tied weights and ReLU activations.
//!
//! With `ell` weight matrices `W_1 (h x d), W_2..W_ell (h x h)` the encoder
//! computes `a_i = relu(W_i a_{i-1} + b_i)` for `i = 1..ell`, and decoder
//! layer `j = 1..ell` applies `W_{ell+1-j}^T` with bias `b_{ell+j}`; the last
//! decoder layer is affine. Parameters live in one flat vector
//! `[W_1, .., W_ell, b_1, .., b_{2 ell}]` with row-major matrices.
//!
//! The loss is the batch mean of `|z - zhat|^2`. Gradients come from reverse
//! accumulation and Hessian-vector products from the R-operator applied to
//! the reverse pass. ReLU'(0) is taken as 0.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, scale};
use crate::objective::{ObjectiveHandle, ObjectiveMeta};
use crate::optim::GradientOracle;
use crate::rng::{seeded, stream, Rng as StreamRng};

pub mod data;

pub use data::{parse_idx_images, read_idx_images, synthetic_dataset, synthetic_images, Batch, Dataset};

/// Examples per parallel work unit. Partial sums are combined in chunk
/// order, so results do not depend on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AutoencoderShape {
    pub ell: usize,
    pub d: usize,
    pub h: usize,
}

impl AutoencoderShape {
    pub fn new(ell: usize, d: usize, h: usize) -> Result<Self> {
        if ell == 0 || d == 0 || h == 0 {
            return Err(Error::invalid("shape", format!("ell={ell}, d={d}, h={h} must all be positive")));
        }
        Ok(AutoencoderShape { ell, d, h })
    }

    /// `(rows, cols)` of `W_{i+1}`.
    pub fn weight_dims(&self, i: usize) -> (usize, usize) {
        if i == 0 {
            (self.h, self.d)
        } else {
            (self.h, self.h)
        }
    }

    pub fn weight_offset(&self, i: usize) -> usize {
        if i == 0 {
            0
        } else {
            self.h * self.d + (i - 1) * self.h * self.h
        }
    }

    fn weights_len(&self) -> usize {
        self.weight_offset(self.ell)
    }

    /// Length of `b_{j+1}`.
    pub fn bias_len(&self, j: usize) -> usize {
        if j + 1 == 2 * self.ell {
            self.d
        } else {
            self.h
        }
    }

    pub fn bias_offset(&self, j: usize) -> usize {
        self.weights_len() + j * self.h
    }

    pub fn param_len(&self) -> usize {
        self.weights_len() + (2 * self.ell - 1) * self.h + self.d
    }

    fn layers(&self) -> Vec<Layer> {
        let n = 2 * self.ell;
        (0..n)
            .map(|k| {
                let wi = if k < self.ell { k } else { n - 1 - k };
                let (rows, cols) = self.weight_dims(wi);
                let trans = k >= self.ell;
                Layer {
                    w_off: self.weight_offset(wi),
                    rows,
                    cols,
                    trans,
                    b_off: self.bias_offset(k),
                    in_dim: if trans { rows } else { cols },
                    out_dim: if trans { cols } else { rows },
                    relu: k + 1 < n,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w_off: usize,
    rows: usize,
    cols: usize,
    trans: bool,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
    relu: bool,
}

impl Layer {
    fn w<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.w_off..self.w_off + self.rows * self.cols]
    }

    fn b<'a>(&self, p: &'a [f64]) -> &'a [f64] {
        &p[self.b_off..self.b_off + self.out_dim]
    }

    /// `out += op(W) x` with `op` the identity or transpose per layer.
    fn mul(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        mul(w, self.rows, self.cols, self.trans, x, out);
    }

    /// `out += op(W)^T y`.
    fn mul_adj(&self, w: &[f64], y: &[f64], out: &mut [f64]) {
        mul(w, self.rows, self.cols, !self.trans, y, out);
    }

    /// Accumulates `d(gs . op(W) a) / dW` into `gw`.
    fn outer(&self, gw: &mut [f64], gs: &[f64], a: &[f64]) {
        let cols = self.cols;
        if self.trans {
            // s_j = sum_i W_ij a_i
            for (i, &ai) in a.iter().enumerate() {
                if ai != 0.0 {
                    for (g, &s) in gw[i * cols..(i + 1) * cols].iter_mut().zip(gs) {
                        *g += ai * s;
                    }
                }
            }
        } else {
            for (i, &si) in gs.iter().enumerate() {
                if si != 0.0 {
                    for (g, &aj) in gw[i * cols..(i + 1) * cols].iter_mut().zip(a) {
                        *g += si * aj;
                    }
                }
            }
        }
    }
}

fn mul(w: &[f64], rows: usize, cols: usize, trans: bool, x: &[f64], out: &mut [f64]) {
    if trans {
        for (i, &xi) in x.iter().enumerate().take(rows) {
            if xi != 0.0 {
                for (o, &wij) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
                    *o += wij * xi;
                }
            }
        }
    } else {
        for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
            *o += dot(row, x);
        }
    }
}

fn relu_mask(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Tied weights and biases as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    shape: AutoencoderShape,
    flat: Vec<f64>,
}

impl AutoencoderParams {
    pub fn from_flat(shape: AutoencoderShape, flat: Vec<f64>) -> Result<Self> {
        check_dim(shape.param_len(), flat.len())?;
        Ok(AutoencoderParams { shape, flat })
    }

    pub fn zeros(shape: AutoencoderShape) -> Self {
        AutoencoderParams {
            shape,
            flat: vec![0.0; shape.param_len()],
        }
    }

    /// Builds the flat vector from row-major weights `W_1..W_ell` and biases
    /// `b_1..b_{2 ell}`.
    pub fn from_parts(shape: AutoencoderShape, weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Result<Self> {
        check_dim(shape.ell, weights.len())?;
        check_dim(2 * shape.ell, biases.len())?;
        let mut flat = Vec::with_capacity(shape.param_len());
        for (i, w) in weights.iter().enumerate() {
            let (r, c) = shape.weight_dims(i);
            check_dim(r * c, w.len())?;
            flat.extend_from_slice(w);
        }
        for (j, b) in biases.iter().enumerate() {
            check_dim(shape.bias_len(j), b.len())?;
            flat.extend_from_slice(b);
        }
        Ok(AutoencoderParams { shape, flat })
    }

    pub fn to_parts(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let w = (0..self.shape.ell).map(|i| self.weight(i).to_vec()).collect();
        let b = (0..2 * self.shape.ell).map(|j| self.bias(j).to_vec()).collect();
        (w, b)
    }

    pub fn shape(&self) -> AutoencoderShape {
        self.shape
    }

    /// Row-major `W_{i+1}`.
    pub fn weight(&self, i: usize) -> &[f64] {
        let (r, c) = self.shape.weight_dims(i);
        let o = self.shape.weight_offset(i);
        &self.flat[o..o + r * c]
    }

    /// `b_{j+1}`.
    pub fn bias(&self, j: usize) -> &[f64] {
        let o = self.shape.bias_offset(j);
        &self.flat[o..o + self.shape.bias_len(j)]
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }
}

/// Weights uniform on `[-l, l]`, `l = sqrt(6 / (fan_in + fan_out))`, biases 0.
pub fn glorot_init<R: Rng + ?Sized>(rng: &mut R, ell: usize, d: usize, h: usize) -> Result<AutoencoderParams> {
    let shape = AutoencoderShape::new(ell, d, h)?;
    let mut p = AutoencoderParams::zeros(shape);
    for i in 0..ell {
        let (fan_out, fan_in) = shape.weight_dims(i);
        let limit = glorot_limit(fan_in, fan_out);
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
        let o = shape.weight_offset(i);
        for w in &mut p.flat[o..o + fan_in * fan_out] {
            *w = dist.sample(rng);
        }
    }
    Ok(p)
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

struct Activations {
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    /// `act[0]` is the input, `act[k + 1]` the output of layer `k`.
    act: Vec<Vec<f64>>,
}

fn forward_one(layers: &[Layer], p: &[f64], z: &[f64]) -> Result<Activations> {
    let mut pre = Vec::with_capacity(layers.len());
    let mut act = Vec::with_capacity(layers.len() + 1);
    act.push(z.to_vec());
    for (k, l) in layers.iter().enumerate() {
        let mut s = l.b(p).to_vec();
        l.mul(l.w(p), &act[k], &mut s);
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteActivation { layer: k + 1 });
        }
        let a = if l.relu { s.iter().map(|&v| v.max(0.0)).collect() } else { s.clone() };
        pre.push(s);
        act.push(a);
    }
    Ok(Activations { pre, act })
}

fn check_batch(shape: &AutoencoderShape, p: &[f64], batch: &Batch) -> Result<()> {
    check_dim(shape.param_len(), p.len())?;
    check_dim(shape.d, batch.d())
}

/// Reconstruction `zhat` of one example.
pub fn forward(params: &AutoencoderParams, z: &[f64]) -> Result<Vec<f64>> {
    check_dim(params.shape.d, z.len())?;
    let layers = params.shape.layers();
    let mut a = forward_one(&layers, &params.flat, z)?;
    Ok(a.act.pop().expect("at least one layer"))
}

/// Sums `per_chunk` over fixed-size chunks of the batch in parallel and
/// reduces the partial vectors in chunk order.
fn chunked_sum<F>(batch: &Batch, len: usize, per_chunk: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) -> Result<()> + Sync,
{
    let d = batch.d();
    let parts: Vec<Vec<f64>> = batch
        .as_flat()
        .par_chunks(CHUNK * d)
        .map(|rows| {
            let mut acc = vec![0.0; len];
            per_chunk(rows, &mut acc)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; len];
    for p in parts {
        for (t, x) in total.iter_mut().zip(&p) {
            *t += x;
        }
    }
    Ok(total)
}

/// Mean squared reconstruction error over the batch.
pub fn batch_loss_flat(shape: &AutoencoderShape, p: &[f64], batch: &Batch) -> Result<f64> {
    check_batch(shape, p, batch)?;
    let layers = shape.layers();
    let total = chunked_sum(batch, 1, |rows, acc| {
        for z in rows.chunks_exact(shape.d) {
            let a = forward_one(&layers, p, z)?;
            let out = a.act.last().expect("layers");
            acc[0] += out.iter().zip(z).map(|(o, zi)| (o - zi) * (o - zi)).sum::<f64>();
        }
        Ok(())
    })?;
    Ok(total[0] / batch.n() as f64)
}

/// Loss and gradient; the gradient slot is laid out like the parameters and
/// each `W_i` collects both its encoder and its decoder contribution.
pub fn batch_loss_and_grad_flat(shape: &AutoencoderShape, p: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
    check_batch(shape, p, batch)?;
    let layers = shape.layers();
    let np = shape.param_len();
    // slot np holds the loss
    let mut total = chunked_sum(batch, np + 1, |rows, acc| {
        let (grad, loss) = acc.split_at_mut(np);
        for z in rows.chunks_exact(shape.d) {
            let a = forward_one(&layers, p, z)?;
            let out = a.act.last().expect("layers");
            let mut delta: Vec<f64> = out.iter().zip(z).map(|(o, zi)| 2.0 * (o - zi)).collect();
            loss[0] += delta.iter().map(|e| 0.25 * e * e).sum::<f64>();
            for (k, l) in layers.iter().enumerate().rev() {
                if l.relu {
                    for (g, &s) in delta.iter_mut().zip(&a.pre[k]) {
                        *g *= relu_mask(s);
                    }
                }
                for (gb, &g) in grad[l.b_off..l.b_off + l.out_dim].iter_mut().zip(&delta) {
                    *gb += g;
                }
                l.outer(&mut grad[l.w_off..l.w_off + l.rows * l.cols], &delta, &a.act[k]);
                if k > 0 {
                    let mut d_in = vec![0.0; l.in_dim];
                    l.mul_adj(l.w(p), &delta, &mut d_in);
                    delta = d_in;
                }
            }
        }
        Ok(())
    })?;
    let inv = 1.0 / batch.n() as f64;
    let loss = total.pop().expect("loss slot") * inv;
    scale(inv, &mut total);
    Ok((loss, total))
}

/// Exact Hessian-vector product of the batch loss.
pub fn pearlmutter_hvp_flat(shape: &AutoencoderShape, p: &[f64], batch: &Batch, vdir: &[f64]) -> Result<Vec<f64>> {
    check_batch(shape, p, batch)?;
    check_dim(shape.param_len(), vdir.len())?;
    let layers = shape.layers();
    let np = shape.param_len();
    let mut total = chunked_sum(batch, np, |rows, hv| {
        for z in rows.chunks_exact(shape.d) {
            let a = forward_one(&layers, p, z)?;
            // R-forward: directional derivatives of pre-activations and activations
            let mut r_act = vec![vec![0.0; shape.d]];
            for (k, l) in layers.iter().enumerate() {
                let mut rs = l.b(vdir).to_vec();
                l.mul(l.w(p), &r_act[k], &mut rs);
                l.mul(l.w(vdir), &a.act[k], &mut rs);
                if l.relu {
                    for (r, &s) in rs.iter_mut().zip(&a.pre[k]) {
                        *r *= relu_mask(s);
                    }
                }
                r_act.push(rs);
            }
            let out = a.act.last().expect("layers");
            let mut delta: Vec<f64> = out.iter().zip(z).map(|(o, zi)| 2.0 * (o - zi)).collect();
            let mut r_delta: Vec<f64> = r_act.last().expect("layers").iter().map(|r| 2.0 * r).collect();
            for (k, l) in layers.iter().enumerate().rev() {
                if l.relu {
                    for ((g, rg), &s) in delta.iter_mut().zip(r_delta.iter_mut()).zip(&a.pre[k]) {
                        let m = relu_mask(s);
                        *g *= m;
                        *rg *= m;
                    }
                }
                for (h, &rg) in hv[l.b_off..l.b_off + l.out_dim].iter_mut().zip(&r_delta) {
                    *h += rg;
                }
                let hw = &mut hv[l.w_off..l.w_off + l.rows * l.cols];
                l.outer(hw, &r_delta, &a.act[k]);
                l.outer(hw, &delta, &r_act[k]);
                if k > 0 {
                    let mut d_in = vec![0.0; l.in_dim];
                    l.mul_adj(l.w(p), &delta, &mut d_in);
                    let mut rd_in = vec![0.0; l.in_dim];
                    l.mul_adj(l.w(p), &r_delta, &mut rd_in);
                    l.mul_adj(l.w(vdir), &delta, &mut rd_in);
                    delta = d_in;
                    r_delta = rd_in;
                }
            }
        }
        Ok(())
    })?;
    scale(1.0 / batch.n() as f64, &mut total);
    Ok(total)
}

pub fn batch_loss(params: &AutoencoderParams, batch: &Batch) -> Result<f64> {
    batch_loss_flat(&params.shape, &params.flat, batch)
}

pub fn batch_loss_and_grad(params: &AutoencoderParams, batch: &Batch) -> Result<(f64, Vec<f64>)> {
    batch_loss_and_grad_flat(&params.shape, &params.flat, batch)
}

pub fn pearlmutter_hvp(params: &AutoencoderParams, batch: &Batch, vdir: &[f64]) -> Result<Vec<f64>> {
    pearlmutter_hvp_flat(&params.shape, &params.flat, batch, vdir)
}

/// Sign pattern (`pre-activation > 0`) of every hidden unit over the batch.
/// Two parameter vectors with equal patterns lie in the same linear piece of
/// the loss.
pub fn activation_pattern(shape: &AutoencoderShape, p: &[f64], batch: &Batch) -> Result<Vec<bool>> {
    check_batch(shape, p, batch)?;
    let layers = shape.layers();
    let mut out = Vec::new();
    for i in 0..batch.n() {
        let a = forward_one(&layers, p, batch.row(i))?;
        for (l, s) in layers.iter().zip(&a.pre) {
            if l.relu {
                out.extend(s.iter().map(|&v| v > 0.0));
            }
        }
    }
    Ok(out)
}

/// The training loss as an [`ObjectiveHandle`] with analytic gradient and HVP.
pub fn autoencoder_objective(shape: AutoencoderShape, train: Arc<Batch>, meta: ObjectiveMeta) -> Result<ObjectiveHandle> {
    check_dim(shape.d, train.d())?;
    let (t1, t2, t3, t4) = (train.clone(), train.clone(), train.clone(), train);
    let name = format!("autoencoder(ell={}, d={}, h={})", shape.ell, shape.d, shape.h);
    Ok(ObjectiveHandle::try_new(
        name,
        shape.param_len(),
        meta,
        move |x| batch_loss_flat(&shape, x, &t1),
        move |x| Ok(batch_loss_and_grad_flat(&shape, x, &t2)?.1),
    )
    .with_value_and_grad(move |x| batch_loss_and_grad_flat(&shape, x, &t3))
    .with_try_hvp(move |x, v| pearlmutter_hvp_flat(&shape, x, &t4, v)))
}

/// Estimates `sigma` as the largest gradient norm over `probes` and `L` as
/// the largest Hessian spectral norm found by `power_iters` rounds of power
/// iteration at each probe. `f_star = 0` is recorded as a lower bound.
pub fn estimate_meta(
    shape: AutoencoderShape,
    batch: &Batch,
    probes: &[Vec<f64>],
    power_iters: usize,
    rng: &mut StreamRng,
) -> Result<ObjectiveMeta> {
    if probes.is_empty() {
        return Err(Error::Empty("probe set"));
    }
    let mut sigma = 0.0_f64;
    let mut lip = 0.0_f64;
    for x in probes {
        let (_, g) = batch_loss_and_grad_flat(&shape, x, batch)?;
        sigma = sigma.max(norm(&g));
        let mut v: Vec<f64> = (0..x.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut lam = 0.0;
        for _ in 0..power_iters.max(1) {
            let nv = norm(&v);
            if nv == 0.0 {
                break;
            }
            scale(1.0 / nv, &mut v);
            let hv = pearlmutter_hvp_flat(&shape, x, batch, &v)?;
            lam = norm(&hv);
            v = hv;
        }
        lip = lip.max(lam);
    }
    let mut meta = ObjectiveMeta::new(lip.max(f64::MIN_POSITIVE), sigma.max(f64::MIN_POSITIVE), 0.0)
        .with_bounds(Some(0.0), None);
    meta.sigma_estimated = true;
    meta.lipschitz_estimated = true;
    meta.f_star_is_bound = true;
    Ok(meta)
}

/// `count` Glorot draws from the probe stream of `seed`.
pub fn glorot_probes(shape: AutoencoderShape, seed: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    (0..count as u64)
        .map(|i| {
            let mut rng = seeded(seed, &[stream::PROBE, i]);
            Ok(glorot_init(&mut rng, shape.ell, shape.d, shape.h)?.into_flat())
        })
        .collect()
}

/// Gradient of a mini-batch drawn by seeded per-epoch shuffling; each epoch
/// visits `floor(n / batch_size)` disjoint batches.
pub struct MinibatchOracle {
    shape: AutoencoderShape,
    data: Arc<Batch>,
    batch_size: usize,
    rng: StreamRng,
    order: Vec<usize>,
    pos: usize,
}

impl MinibatchOracle {
    pub fn new(shape: AutoencoderShape, data: Arc<Batch>, batch_size: usize, rng: StreamRng) -> Result<Self> {
        check_dim(shape.d, data.d())?;
        if batch_size == 0 {
            return Err(Error::invalid("minibatch", "must be positive"));
        }
        let n = data.n();
        Ok(MinibatchOracle {
            shape,
            batch_size: batch_size.min(n),
            data,
            rng,
            order: (0..n).collect(),
            // forces a shuffle on first use
            pos: usize::MAX,
        })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos.saturating_add(self.batch_size) > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let idx = self.order[self.pos..self.pos + self.batch_size].to_vec();
        self.pos += self.batch_size;
        idx
    }
}

impl GradientOracle for MinibatchOracle {
    fn gradient(&mut self, x: &[f64], _t: u64) -> Result<Vec<f64>> {
        let idx = self.next_indices();
        let b = self.data.select(&idx)?;
        Ok(batch_loss_and_grad_flat(&self.shape, x, &b)?.1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(rng: &mut StreamRng, n: usize, s: f64) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-s..s)).collect()
    }

    #[test]
    fn flat_length_formula() {
        for (ell, d, h) in [(1, 3, 2), (2, 5, 5), (3, 7, 4)] {
            let s = AutoencoderShape::new(ell, d, h).unwrap();
            assert_eq!(s.param_len(), h * d + (ell - 1) * h * h + ell * h + (ell - 1) * h + d);
            assert_eq!(s.bias_offset(2 * ell - 1) + d, s.param_len());
        }
        assert!(AutoencoderShape::new(0, 1, 1).is_err());
    }

    #[test]
    fn parts_round_trip() {
        let mut rng = seeded(5, &[1]);
        let s = AutoencoderShape::new(2, 3, 4).unwrap();
        let flat = rand_vec(&mut rng, s.param_len(), 1.0);
        let p = AutoencoderParams::from_flat(s, flat.clone()).unwrap();
        let (w, b) = p.to_parts();
        assert_eq!((w[0].len(), w[1].len()), (12, 16));
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 4, 3]);
        assert_eq!(AutoencoderParams::from_parts(s, &w, &b).unwrap().into_flat(), flat);
    }

    #[test]
    fn glorot_limits_and_zero_biases() {
        assert!((glorot_limit(4, 4) - 0.75f64.sqrt()).abs() < 1e-15);
        assert!((glorot_limit(4, 4) - 0.86603).abs() < 1e-5);
        let p = glorot_init(&mut seeded(2, &[stream::INIT]), 2, 4, 4).unwrap();
        let lim = glorot_limit(4, 4);
        for i in 0..2 {
            assert!(p.weight(i).iter().all(|w| w.abs() <= lim));
        }
        let q = glorot_init(&mut seeded(2, &[stream::INIT]), 2, 4, 4).unwrap();
        assert_eq!(p, q);
        assert!((0..4).all(|j| p.bias(j).iter().all(|&b| b == 0.0)));
        // W_1 uses fan_in = d, fan_out = h
        let r = glorot_init(&mut seeded(3, &[stream::INIT]), 1, 20, 4).unwrap();
        assert!(r.weight(0).iter().all(|w| w.abs() <= glorot_limit(20, 4)));
        assert!(r.weight(0).iter().any(|w| w.abs() > glorot_limit(20, 4) * 0.8));
    }

    #[test]
    fn zero_params_reconstruct_zero() {
        let s = AutoencoderShape::new(2, 3, 4).unwrap();
        let p = AutoencoderParams::zeros(s);
        assert_eq!(forward(&p, &[0.2, 0.4, 1.0]).unwrap(), vec![0.0; 3]);
        let b = Batch::from_rows(&[vec![0.2, 0.4, 1.0], vec![1.0, 0.0, 0.0]]).unwrap();
        let (loss, g) = batch_loss_and_grad(&p, &b).unwrap();
        assert!((loss - (1.2 + 1.0) / 2.0).abs() < 1e-15);
        // only the output bias sees a gradient: -(2/n) sum z
        let last = s.bias_offset(3);
        assert_eq!(&g[last..], &[-1.2, -0.4, -1.0]);
        assert!(g[..last].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scaled_identity_single_layer() {
        let c = 1.7;
        let s = AutoencoderShape::new(1, 3, 3).unwrap();
        let w = vec![c, 0.0, 0.0, 0.0, c, 0.0, 0.0, 0.0, c];
        let p = AutoencoderParams::from_parts(s, &[w], &[vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let z = [0.5, 0.0, 2.0];
        let out = forward(&p, &z).unwrap();
        for i in 0..3 {
            assert!((out[i] - c * c * z[i]).abs() < 1e-14);
        }

        let s2 = AutoencoderShape::new(1, 2, 2).unwrap();
        let id = AutoencoderParams::from_parts(s2, &[vec![1.0, 0.0, 0.0, 1.0]], &[vec![0.0; 2], vec![0.0; 2]]).unwrap();
        let b = Batch::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let (loss, g) = batch_loss_and_grad(&id, &b).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn hvp_of_zero_direction_is_zero_and_linear() {
        let mut rng = seeded(8, &[1]);
        let s = AutoencoderShape::new(2, 4, 3).unwrap();
        let x = rand_vec(&mut rng, s.param_len(), 0.8);
        let b = Batch::from_flat(5, 4, rand_vec(&mut rng, 20, 1.0)).unwrap();
        let zero = vec![0.0; s.param_len()];
        assert!(pearlmutter_hvp_flat(&s, &x, &b, &zero).unwrap().iter().all(|&h| h == 0.0));
        let u = rand_vec(&mut rng, s.param_len(), 1.0);
        let w = rand_vec(&mut rng, s.param_len(), 1.0);
        let comb: Vec<f64> = u.iter().zip(&w).map(|(a, c)| 2.0 * a - 0.5 * c).collect();
        let hu = pearlmutter_hvp_flat(&s, &x, &b, &u).unwrap();
        let hw = pearlmutter_hvp_flat(&s, &x, &b, &w).unwrap();
        let hc = pearlmutter_hvp_flat(&s, &x, &b, &comb).unwrap();
        let want: Vec<f64> = hu.iter().zip(&hw).map(|(a, c)| 2.0 * a - 0.5 * c).collect();
        let err: f64 = hc.iter().zip(&want).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-8 * norm(&want));
        // symmetry
        let (l, r) = (dot(&hu, &w), dot(&hw, &u));
        assert!((l - r).abs() <= 1e-6 * l.abs().max(r.abs()));
    }

    #[test]
    fn non_finite_activation_reports_layer() {
        let s = AutoencoderShape::new(1, 1, 1).unwrap();
        let p = AutoencoderParams::from_flat(s, vec![f64::INFINITY, 0.0, 0.0]).unwrap();
        let b = Batch::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(batch_loss(&p, &b), Err(Error::NonFiniteActivation { layer: 1 })));
    }

    #[test]
    fn chunked_reduction_is_deterministic() {
        let mut rng = seeded(9, &[1]);
        let s = AutoencoderShape::new(2, 9, 5).unwrap();
        let x = rand_vec(&mut rng, s.param_len(), 0.5);
        let b = synthetic_images(&mut rng, 3, 3 * CHUNK + 7).unwrap();
        let a = batch_loss_and_grad_flat(&s, &x, &b).unwrap();
        let c = batch_loss_and_grad_flat(&s, &x, &b).unwrap();
        assert_eq!(a, c);
        // matches the loss-only path
        assert!((batch_loss_flat(&s, &x, &b).unwrap() - a.0).abs() <= 1e-14 * a.0);
    }

    #[test]
    fn minibatches_partition_each_epoch() {
        let data = Arc::new(Batch::from_flat(10, 1, (0..10).map(f64::from).collect()).unwrap());
        let s = AutoencoderShape::new(1, 1, 1).unwrap();
        let mut o = MinibatchOracle::new(s, data, 3, seeded(1, &[stream::DATA])).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| o.next_indices()).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 9);
    }
}
