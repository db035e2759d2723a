mod common;

use adacrit_core::autoenc::{
    activation_pattern, batch_loss_and_grad_flat, batch_loss_flat, forward, pearlmutter_hvp_flat, AutoencoderParams,
    AutoencoderShape, Batch,
};
use adacrit_core::rng::{seeded, Rng};
use common::{central_gradient, directional_difference, rel_err};
use rand::Rng as _;

fn rand_vec(rng: &mut Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-s..s)).collect()
}

fn fd_step(x: &[f64]) -> f64 {
    1e-5 * (1.0 + x.iter().fold(0.0_f64, |m, v| m.max(v.abs())))
}

/// Analytic vs central-difference gradient over coordinates whose
/// perturbation leaves the ReLU pattern unchanged.
fn gradient_error(shape: &AutoencoderShape, x: &[f64], b: &Batch) -> (f64, usize) {
    let h = fd_step(x);
    let (_, g) = batch_loss_and_grad_flat(shape, x, b).unwrap();
    let fd = central_gradient(|y| batch_loss_flat(shape, y, b).unwrap(), x, h);
    let base = activation_pattern(shape, x, b).unwrap();
    let mut keep_g = Vec::new();
    let mut keep_fd = Vec::new();
    let mut skipped = 0;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        let orig = y[i];
        y[i] = orig + h;
        let up = activation_pattern(shape, &y, b).unwrap();
        y[i] = orig - h;
        let down = activation_pattern(shape, &y, b).unwrap();
        y[i] = orig;
        if up == base && down == base {
            keep_g.push(g[i]);
            keep_fd.push(fd[i]);
        } else {
            skipped += 1;
        }
    }
    (rel_err(&keep_g, &keep_fd), skipped)
}

#[test]
fn gradient_matches_finite_differences_at_100_points() {
    let shape = AutoencoderShape::new(2, 5, 5).unwrap();
    let mut rng = seeded(2024, &[1]);
    let mut worst = 0.0_f64;
    let mut skipped = 0;
    for _ in 0..100 {
        let x = rand_vec(&mut rng, shape.param_len(), 1.0);
        let b = Batch::from_flat(4, 5, rand_vec(&mut rng, 20, 1.0)).unwrap();
        let (e, s) = gradient_error(&shape, &x, &b);
        worst = worst.max(e);
        skipped += s;
    }
    assert!(worst <= 1e-5, "worst relative error {worst}");
    assert!(skipped < 100 * shape.param_len() / 10);
}

#[test]
fn gradient_at_zero_parameters() {
    let shape = AutoencoderShape::new(2, 5, 5).unwrap();
    let mut rng = seeded(7, &[1]);
    let x = vec![0.0; shape.param_len()];
    let b = Batch::from_flat(3, 5, rand_vec(&mut rng, 15, 1.0)).unwrap();
    let (_, g) = batch_loss_and_grad_flat(&shape, &x, &b).unwrap();
    // only b_4 is live; everything upstream sits behind dead units
    let fd = central_gradient(|y| batch_loss_flat(&shape, y, &b).unwrap(), &x, 1e-6);
    let off = shape.bias_offset(3);
    assert!(rel_err(&g[off..], &fd[off..]) <= 1e-9);
    for i in 0..5 {
        let want = -2.0 * (0..3).map(|r| b.row(r)[i]).sum::<f64>() / 3.0;
        assert!((g[off + i] - want).abs() < 1e-15);
    }
}

#[test]
fn tied_weight_gets_both_paths() {
    // ell = 1: zhat = W^T relu(W z + b1) + b2. Perturbing the single shared
    // W must match the analytic gradient, which would be wrong if only one
    // path were counted.
    let shape = AutoencoderShape::new(1, 3, 2).unwrap();
    let mut rng = seeded(3, &[1]);
    let x = rand_vec(&mut rng, shape.param_len(), 1.0);
    let b = Batch::from_flat(5, 3, rand_vec(&mut rng, 15, 1.0)).unwrap();
    let (e, _) = gradient_error(&shape, &x, &b);
    assert!(e <= 1e-5);

    // encoder-only contribution differs from the analytic value
    let p = AutoencoderParams::from_flat(shape, x.clone()).unwrap();
    let (_, g) = batch_loss_and_grad_flat(&shape, &x, &b).unwrap();
    let (w, biases) = p.to_parts();
    let frozen_decoder = |wenc: &[f64]| -> f64 {
        let mut sum = 0.0;
        for r in 0..b.n() {
            let z = b.row(r);
            let a: Vec<f64> = (0..2)
                .map(|i| ((0..3).map(|j| wenc[i * 3 + j] * z[j]).sum::<f64>() + biases[0][i]).max(0.0))
                .collect();
            let zh: Vec<f64> = (0..3).map(|j| (0..2).map(|i| w[0][i * 3 + j] * a[i]).sum::<f64>() + biases[1][j]).collect();
            sum += zh.iter().zip(z).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
        }
        sum / b.n() as f64
    };
    let enc_only = central_gradient(frozen_decoder, &w[0], 1e-6);
    assert!(rel_err(&g[..6], &enc_only) > 1e-3);
}

#[test]
fn hvp_matches_gradient_differences() {
    let shape = AutoencoderShape::new(2, 5, 5).unwrap();
    let mut rng = seeded(99, &[2]);
    let mut checked = 0;
    for _ in 0..40 {
        let x = rand_vec(&mut rng, shape.param_len(), 1.0);
        let b = Batch::from_flat(4, 5, rand_vec(&mut rng, 20, 1.0)).unwrap();
        let v = rand_vec(&mut rng, shape.param_len(), 1.0);
        let vn = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        let h = 1e-4 / vn.max(1.0);
        // kink-free along the probed segment
        let base = activation_pattern(&shape, &x, &b).unwrap();
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, c)| a + h * c).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, c)| a - h * c).collect();
        if activation_pattern(&shape, &xp, &b).unwrap() != base || activation_pattern(&shape, &xm, &b).unwrap() != base {
            continue;
        }
        let hv = pearlmutter_hvp_flat(&shape, &x, &b, &v).unwrap();
        let fd = directional_difference(|y| batch_loss_and_grad_flat(&shape, y, &b).unwrap().1, &x, &v, h);
        assert!(rel_err(&hv, &fd) <= 1e-4);
        checked += 1;
    }
    assert!(checked >= 20);
}

#[test]
fn hessian_symmetry_and_loss_nonnegativity() {
    let shape = AutoencoderShape::new(3, 4, 6).unwrap();
    let mut rng = seeded(5, &[5]);
    for _ in 0..20 {
        let x = rand_vec(&mut rng, shape.param_len(), 0.8);
        let b = Batch::from_flat(6, 4, rand_vec(&mut rng, 24, 1.0)).unwrap();
        let u = rand_vec(&mut rng, shape.param_len(), 1.0);
        let w = rand_vec(&mut rng, shape.param_len(), 1.0);
        let hu = pearlmutter_hvp_flat(&shape, &x, &b, &u).unwrap();
        let hw = pearlmutter_hvp_flat(&shape, &x, &b, &w).unwrap();
        let l: f64 = hu.iter().zip(&w).map(|(a, c)| a * c).sum();
        let r: f64 = hw.iter().zip(&u).map(|(a, c)| a * c).sum();
        assert!((l - r).abs() <= 1e-6 * l.abs().max(r.abs()).max(1e-12));
        let loss = batch_loss_flat(&shape, &x, &b).unwrap();
        assert!(loss >= 0.0);
        let p = AutoencoderParams::from_flat(shape, x).unwrap();
        let recon_exact = (0..b.n()).all(|i| forward(&p, b.row(i)).unwrap() == b.row(i));
        assert_eq!(loss == 0.0, recon_exact);
    }
}
