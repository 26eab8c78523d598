mod common;

use approx::assert_relative_eq;
use common::{max_fd_error, random_batch, small_arch};
use difflab::diffusion::PredictionTarget;
use difflab::models::{
    AdversarialPair, DenoiserMlp, DiffusionObjective, GanArch, GeneratorObjective, GradientOracle,
};
use ndarray::{array, concatenate, Array2, Axis};

#[test]
fn x0_denoiser_gradient_matches_finite_differences() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::X0, vec![12, 12], 4)).unwrap();
    let params = model.init_params(3).values;
    let (_, batch) = random_batch(50, 16, 9);
    let err = max_fd_error(&DiffusionObjective { model, batch }, &params, 1e-5, 1e-6);
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gan_gradients_match_finite_differences() {
    let arch = GanArch {
        data_dim: 2,
        latent_dim: 3,
        gen_hidden: vec![8],
        disc_hidden: vec![8, 8],
    };
    let pair = AdversarialPair::new(arch).unwrap();
    let (g, d) = pair.init_params(5);
    let latent = Array2::from_shape_fn((10, 3), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
    let obj = GeneratorObjective {
        pair: pair.clone(),
        disc_params: d.values.clone(),
        latent: latent.clone(),
    };
    let err = max_fd_error(&obj, &g.values, 1e-5, 1e-6);
    assert!(err < 1e-4, "generator: {err}");

    // The joint loss call must agree with the frozen-discriminator objective.
    let real = Array2::from_shape_fn((6, 2), |(i, j)| ((i + 2 * j) as f64 * 0.5).cos() * 0.8);
    let l = pair
        .gan_losses(&g.values, &d.values, real.view(), latent.view())
        .unwrap();
    let (gl, gg) = obj.loss_and_grad(&g.values).unwrap();
    assert_eq!(l.gen_loss, gl);
    assert_eq!(l.gen_grad, gg);

    // Discriminator gradient by finite differences on its own loss.
    let h = 1e-5;
    let mut p = d.values.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let lp = pair.gan_losses(&g.values, &p, real.view(), latent.view()).unwrap().disc_loss;
        p[i] = orig - h;
        let lm = pair.gan_losses(&g.values, &p, real.view(), latent.view()).unwrap().disc_loss;
        p[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        if l.disc_grad[i].abs() > 1e-6 {
            worst = worst.max((fd - l.disc_grad[i]).abs() / l.disc_grad[i].abs());
        }
    }
    assert!(worst < 1e-4, "discriminator: {worst}");
}

#[test]
fn duplicated_batch_gives_identical_loss_and_gradient() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::Epsilon, vec![8], 4)).unwrap();
    let params = model.init_params(1).values;
    let (sched, batch) = random_batch(20, 8, 2);
    let doubled = difflab::diffusion::DiffusionBatch::new(
        &sched,
        concatenate![Axis(0), batch.x0, batch.x0],
        batch.t.iter().chain(&batch.t).copied().collect(),
        concatenate![Axis(0), batch.eps, batch.eps],
    )
    .unwrap();
    let (l1, g1) = model.loss_and_grad(&params, &batch).unwrap();
    let (l2, g2) = model.loss_and_grad(&params, &doubled).unwrap();
    assert_relative_eq!(l1, l2, max_relative = 1e-14);
    for (a, b) in g1.iter().zip(&g2) {
        assert_relative_eq!(*a, *b, max_relative = 1e-12, epsilon = 1e-300);
    }
}

#[test]
fn oracle_calls_are_pure() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::Epsilon, vec![16, 16], 8)).unwrap();
    let params = model.init_params(0).values;
    let (_, batch) = random_batch(100, 32, 4);
    let obj = DiffusionObjective { model, batch };
    let a = obj.loss_and_grad(&params).unwrap();
    let b = obj.loss_and_grad(&params).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn zeroed_final_layer_outputs_zero() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::Epsilon, vec![6, 6], 4)).unwrap();
    let mut pv = model.init_params(8);
    pv.block_mut("layer2.weight").unwrap().fill(0.0);
    pv.block_mut("layer2.bias").unwrap().fill(0.0);
    let out = model
        .forward(&pv.values, array![[0.3, -0.7], [5.0, 2.0]].view(), &[0, 17])
        .unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
}

#[test]
fn single_linear_layer_is_a_matrix_product() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::Epsilon, vec![], 0)).unwrap();
    let mut pv = model.init_params(0);
    pv.block_mut("layer0.weight").unwrap().copy_from_slice(&[1.0, 2.0, -3.0, 0.5]);
    pv.block_mut("layer0.bias").unwrap().fill(0.0);
    let out = model
        .forward(&pv.values, array![[2.0, -1.0]].view(), &[7])
        .unwrap();
    assert_eq!(out, array![[1.0 * 2.0 + 2.0 * -1.0, -3.0 * 2.0 + 0.5 * -1.0]]);
}

#[test]
fn init_is_deterministic_and_layout_round_trips() {
    let model = DenoiserMlp::new(small_arch(PredictionTarget::Epsilon, vec![5, 7], 6)).unwrap();
    let a = model.init_params(11);
    let b = model.init_params(11);
    assert_eq!(a, b);
    assert_ne!(a, model.init_params(12));
    let tensors = a.layout.unflatten(&a.values).unwrap();
    assert_eq!(tensors[0].1.shape(), &[5, 8]);
    assert_eq!(a.layout.flatten(&tensors).unwrap(), a.values);
    assert!(model.forward(&a.values[1..], array![[0.0, 0.0]].view(), &[0]).is_err());
}
