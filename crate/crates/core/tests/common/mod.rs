#![allow(dead_code)]

use difflab::diffusion::{DiffusionBatch, NoiseSchedule, PredictionTarget, ScheduleKind};
use difflab::models::{DenoiserArch, GradientOracle};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Largest per-coordinate relative error between the analytic gradient and a central
/// finite difference with step `h`, over coordinates whose gradient exceeds `floor`.
pub fn max_fd_error<O: GradientOracle>(oracle: &O, params: &[f64], h: f64, floor: f64) -> f64 {
    let (_, grad) = oracle.loss_and_grad(params).unwrap();
    let mut p = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let lp = oracle.loss(&p).unwrap();
        p[i] = orig - h;
        let lm = oracle.loss(&p).unwrap();
        p[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        if grad[i].abs() > floor {
            worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(fd.abs()));
        }
    }
    worst
}

pub fn small_arch(target: PredictionTarget, hidden: Vec<usize>, embed: usize) -> DenoiserArch {
    DenoiserArch {
        data_dim: 2,
        hidden,
        time_embed_dim: embed,
        target,
    }
}

pub fn random_batch(steps: usize, n: usize, seed: u64) -> (NoiseSchedule, DiffusionBatch) {
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, steps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = Array2::from_shape_simple_fn((n, 2), || rng.random_range(-1.0..1.0));
    let t = (0..n).map(|_| rng.random_range(0..steps)).collect();
    let eps = Array2::from_shape_simple_fn((n, 2), || StandardNormal.sample(&mut rng));
    let batch = DiffusionBatch::new(&sched, x0, t, eps).unwrap();
    (sched, batch)
}
