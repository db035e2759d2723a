use std::hint::black_box;
use std::sync::Arc;

use adacrit_core::autoenc::{
    batch_loss_and_grad_flat, glorot_init, pearlmutter_hvp_flat, synthetic_images, AutoencoderShape,
};
use adacrit_core::optim::{adam_step, nag_step, rmsprop_step};
use adacrit_core::rng::{seeded, stream};
use adacrit_core::spectrum::{dense_operator, lanczos_min_eig, DEFAULT_TOL};
use adacrit_core::{OptimizerConfig, OptimizerState, StepRule};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

fn steps(c: &mut Criterion) {
    let d = 10_000;
    let mut rng = seeded(1, &[0]);
    let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rule = StepRule::Constant { alpha: 1e-3 };
    let nag = OptimizerConfig::nag(rule.clone(), 0.9).unwrap();
    let rms = OptimizerConfig::rmsprop(rule.clone(), 0.9, 1e-10).unwrap();
    let adam = OptimizerConfig::adam(rule, 0.9, 0.999, 1e-8).unwrap();
    let mut group = c.benchmark_group("step_d10000");
    let mut s = OptimizerState::new(vec![0.0; d]);
    group.bench_function("nag", |b| b.iter(|| nag_step(&mut s, &nag, black_box(&g)).unwrap()));
    let mut s = OptimizerState::new(vec![0.0; d]);
    group.bench_function("rmsprop", |b| b.iter(|| rmsprop_step(&mut s, &rms, black_box(&g)).unwrap()));
    let mut s = OptimizerState::new(vec![0.0; d]);
    group.bench_function("adam", |b| b.iter(|| adam_step(&mut s, &adam, black_box(&g)).unwrap()));
    group.finish();
}

fn autoencoder(c: &mut Criterion) {
    let side = 6;
    let batch = Arc::new(synthetic_images(&mut seeded(2, &[stream::DATA]), side, 100).unwrap());
    let mut group = c.benchmark_group("autoencoder_batch100");
    for h in [16, 32] {
        let shape = AutoencoderShape::new(2, side * side, h).unwrap();
        let x = glorot_init(&mut seeded(2, &[stream::INIT]), 2, side * side, h).unwrap().into_flat();
        let v: Vec<f64> = x.iter().map(|t| 0.5 - t).collect();
        group.bench_with_input(BenchmarkId::new("loss_and_grad", h), &h, |b, _| {
            b.iter(|| batch_loss_and_grad_flat(&shape, black_box(&x), &batch).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("hvp", h), &h, |b, _| {
            b.iter(|| pearlmutter_hvp_flat(&shape, black_box(&x), &batch, &v).unwrap())
        });
    }
    group.finish();
}

fn lanczos(c: &mut Criterion) {
    let mut rng = seeded(3, &[0]);
    let n = 200;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = rng.random_range(-1.0..1.0);
            a[i][j] = v;
            a[j][i] = v;
        }
    }
    c.bench_function("lanczos_dense_200", |b| {
        b.iter(|| lanczos_min_eig(dense_operator(&a), n, 100, DEFAULT_TOL, &mut seeded(4, &[0])).unwrap())
    });
}

criterion_group!(benches, steps, autoencoder, lanczos);
criterion_main!(benches);
