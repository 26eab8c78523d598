//! Acceptance suite. Runs every criterion (or the ones named on the command line, e.g.
//! `cargo test --test acceptance -- A4 A5`) and prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_RED` are still evaluated at full tolerance and reported
//! as FAIL when they miss; they do not fail the process. Any other failure does.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{max_fd_error, random_batch, small_arch};
use difflab::clts::{gamma_at, gaussian_dist, mix, uniform_dist, CltsConfig, TimestepDistribution};
use difflab::consistency::{consistency, psnr, SampleGrid, PSNR_CAP};
use difflab::datasets::{self, DatasetSpec};
use difflab::diffusion::{forward_sample, DiffusionBatch, NoiseSchedule, PredictionTarget, ScheduleKind};
use difflab::experiment::{
    compare, median, run_consistency, smoothness, Checkpoint, ExperimentConfig, MetricsRow,
    SmoothnessConfig, Trainer,
};
use difflab::landscape::{lanczos, SpectrumEstimate};
use difflab::mdlrc::{lr_at, momentum_at, MdlrcConfig};
use difflab::models::{DenoiserMlp, DiffusionObjective};
use difflab::seed;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Criteria that miss their stated bound for reasons recorded in the project notes.
const EXPECTED_RED: &[&str] = &["A5", "A7"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
    }
}

fn a1_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut inputs = 0usize;
    let n = 200;

    for _ in 0..n {
        let beta0 = rng.random_range(0.5..0.99);
        let cfg = MdlrcConfig {
            beta0,
            beta_floor: rng.random_range(0.0..beta0),
            lr0: rng.random_range(1e-5..1e-2),
            ..MdlrcConfig::default()
        };
        let tau: f64 = rng.random_range(0.0..=1.0);
        let raw = beta0 * (1.0 - tau) / ((1.0 - beta0) + beta0 * (1.0 - tau));
        let want = if raw > cfg.beta_floor { raw } else { cfg.beta_floor };
        worst = worst.max(rel_err(momentum_at(tau, &cfg), want));

        let beta_t = rng.random_range(0.0..0.995);
        let want = cfg.lr0 * (1.0 - beta0) / (1.0 - beta_t);
        worst = worst.max(rel_err(lr_at(beta_t, &cfg).unwrap(), want));

        let target = rng.random_range(1..100_000u64);
        let it = rng.random_range(0..200_000u64);
        let want = if it < target { it as f64 / target as f64 } else { 1.0 };
        worst = worst.max(rel_err(gamma_at(it, target), want));
        inputs += 3;
    }

    for _ in 0..n {
        let steps = rng.random_range(2..300usize);
        let cfg = CltsConfig {
            steps,
            mu: rng.random_range(-0.5..1.5) * steps as f64,
            sigma: rng.random_range(0.05..2.0) * steps as f64,
            target_iteration: 1,
        };
        let w: Vec<f64> = (0..steps)
            .map(|t| (-(t as f64 - cfg.mu).powi(2) / (2.0 * cfg.sigma.powi(2))).exp())
            .collect();
        let z: f64 = w.iter().rev().sum();
        let g = gaussian_dist(&cfg).unwrap();
        for t in 0..steps {
            worst = worst.max(rel_err(g.probs()[t], w[t] / z));
        }

        let gamma: f64 = rng.random_range(0.0..=1.0);
        let other: Vec<f64> = (0..steps).map(|_| rng.random_range(0.01..1.0)).collect();
        let zo: f64 = other.iter().sum();
        let u = TimestepDistribution::from_weights(other.clone()).unwrap();
        let m = mix(&u, &g, gamma).unwrap();
        for t in 0..steps {
            let want = (1.0 - gamma) * (other[t] / zo) + gamma * (w[t] / z);
            worst = worst.max(rel_err(m.probs()[t], want));
        }
        inputs += 2;
    }

    for _ in 0..n {
        let d = rng.random_range(1..20usize);
        let peak = rng.random_range(0.5..4.0);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(rel_err(psnr(&a, &b, peak).unwrap(), psnr_oracle(&a, &b, peak)));

        let n_models = rng.random_range(2..6usize);
        let m = rng.random_range(1..9usize);
        let rows: Vec<Array2<f64>> = (0..n_models)
            .map(|_| Array2::from_shape_simple_fn((m, 2), || rng.random_range(-1.0..1.0)))
            .collect();
        let mut want = 0.0;
        for j in 0..m {
            let mut row = 0.0;
            for i in 1..n_models {
                let a = [rows[0][[j, 0]], rows[0][[j, 1]]];
                let b = [rows[i][[j, 0]], rows[i][[j, 1]]];
                row += psnr_oracle(&a, &b, peak);
            }
            want += row / (n_models - 1) as f64;
        }
        want /= m as f64;
        let grid = SampleGrid::new(rows, (0..n_models).map(|i| i.to_string()).collect(), 0).unwrap();
        worst = worst.max(rel_err(consistency(&grid, peak).unwrap().c_value, want));
        inputs += 2;
    }

    outcome(worst < 1e-10, format!("max relative error {worst:.2e} over {inputs} randomized inputs"))
}

fn psnr_oracle(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    if s == 0.0 {
        return PSNR_CAP;
    }
    let v = 20.0 * peak.log10() - 10.0 * (s / a.len() as f64).log10();
    v.min(PSNR_CAP)
}

fn a2_compensation() -> Outcome {
    let cfg = ExperimentConfig::optimized();
    let reference = cfg.optimizer.lr0 * (1.0 - cfg.optimizer.beta0);
    let mut trainer = Trainer::new(cfg).unwrap();
    let mut worst: f64 = 0.0;
    let mut min_beta = f64::INFINITY;
    while !trainer.finished() {
        trainer.advance().unwrap();
        let s = trainer.optimizer_state();
        worst = worst.max((s.current_lr * (1.0 - s.current_beta1) - reference).abs() / reference);
        min_beta = min_beta.min(s.current_beta1);
    }
    outcome(
        worst < 1e-12,
        format!(
            "max relative deviation {worst:.2e} over {} iterations (beta1 reached {min_beta:.4})",
            trainer.iteration()
        ),
    )
}

fn a3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst: f64 = 0.0;
    let mut sizes = Vec::new();
    while sizes.len() < 20 {
        let depth = rng.random_range(1..=3usize);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..14)).collect();
        let embed = 2 * rng.random_range(1..=4usize);
        let target = if rng.random::<bool>() {
            PredictionTarget::Epsilon
        } else {
            PredictionTarget::X0
        };
        let model = DenoiserMlp::new(small_arch(target, hidden, embed)).unwrap();
        if model.num_params() > 500 {
            continue;
        }
        sizes.push(model.num_params());
        let params = model.init_params(rng.random()).values;
        let (_, batch) = random_batch(rng.random_range(10..1000), 12, rng.random());
        worst = worst.max(max_fd_error(&DiffusionObjective { model, batch }, &params, 1e-5, 1e-6));
    }
    outcome(
        worst < 1e-4,
        format!(
            "max relative error {worst:.2e} over 20 models with {}..{} parameters",
            sizes.iter().min().unwrap(),
            sizes.iter().max().unwrap()
        ),
    )
}

fn a4_lanczos() -> Outcome {
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng));
    let q = g.qr().q();
    let diag = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| (i + 1) as f64));
    let a = &q * diag * q.transpose();
    let matvec = |x: &[f64]| {
        let y: DVector<f64> = &a * DVector::from_column_slice(x);
        Ok(y.as_slice().to_vec())
    };
    let probes: Vec<SpectrumEstimate> = (0..16).map(|s| lanczos(matvec, n, 30, s).unwrap()).collect();
    let lambda1 = probes[0].lambda1;
    let slq = SpectrumEstimate::combine(&probes).unwrap();
    let l_err = rel_err(lambda1, 100.0);
    let m_err = rel_err(slq.mean_mu, 50.5);
    outcome(
        l_err < 0.005 && m_err < 0.05,
        format!(
            "lambda1 {lambda1:.6} (err {:.3}%), SLQ mean {:.3} over {} probes (err {:.2}%)",
            100.0 * l_err,
            slq.mean_mu,
            probes.len(),
            100.0 * m_err
        ),
    )
}

fn a5_sampling_law() -> Outcome {
    let cfg = CltsConfig::new(1000, 5000);
    let u = uniform_dist(1000).unwrap();
    let g = gaussian_dist(&cfg).unwrap();
    let draws = 1_000_000;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, gamma) in [0.0, 0.5, 1.0].into_iter().enumerate() {
        let p = mix(&u, &g, gamma).unwrap();
        let sample = p.sample(&mut seed::rng_indexed(505, "clts-law", k as u64), draws);
        let tv = p.total_variation(&sample);
        // Mean total variation of an exact sampler: 0.5 sum sqrt(2 p (1 - p) / (pi n)).
        let floor: f64 = 0.5
            * p.probs()
                .iter()
                .map(|&q| (2.0 * q * (1.0 - q) / (std::f64::consts::PI * draws as f64)).sqrt())
                .sum::<f64>();
        worst = worst.max(tv);
        parts.push(format!("gamma {gamma}: TV {tv:.5} (exact-sampler expectation {floor:.5})"));
    }
    outcome(worst < 0.005, parts.join("; "))
}

fn a6_consistency() -> Outcome {
    let mut gaps = Vec::new();
    let mut parts = Vec::new();
    for s in 0..3u64 {
        let mut eps = ExperimentConfig::baseline();
        eps.dataset.seed = s;
        eps.run.global_seed = s;
        let mut x0 = eps.clone();
        x0.model.target = PredictionTarget::X0;
        let c_eps = run_consistency(&eps, 3, 32).unwrap().report.c_value;
        let c_x0 = run_consistency(&x0, 3, 32).unwrap().report.c_value;
        gaps.push(c_eps - c_x0);
        parts.push(format!("seed {s}: {c_eps:.2} vs {c_x0:.2} dB"));
    }
    let gap = median(&gaps).unwrap();
    outcome(gap >= 2.0, format!("median gap {gap:.2} dB ({})", parts.join(", ")))
}

fn a7_acceleration() -> Outcome {
    let mut base = ExperimentConfig::baseline();
    base.run.eval_raw = false;
    let mut opt = ExperimentConfig::optimized();
    opt.run.eval_raw = false;
    let report = compare(&base, &opt, 5).unwrap();
    let hits = |o: &[difflab::experiment::SeedOutcome]| {
        o.iter()
            .map(|s| s.iterations_to_threshold.map_or("never".into(), |i| i.to_string()))
            .collect::<Vec<String>>()
            .join("/")
    };
    let detail = format!(
        "threshold {:.4}, baseline hits {}, optimized hits {}, ratio {}",
        report.threshold,
        hits(&report.baseline),
        hits(&report.optimized),
        report.ratio.map_or("censored".into(), |r| format!("{r:.3}"))
    );
    outcome(report.ratio.is_some_and(|r| r <= 0.8), detail)
}

fn a8_smoothness() -> Outcome {
    let cfg = SmoothnessConfig::default();
    let reports: Vec<_> = (0..3).map(|s| smoothness(&cfg, s).unwrap()).collect();
    let med = |f: &dyn Fn(&difflab::experiment::SmoothnessReport) -> f64| {
        median(&reports.iter().map(f).collect::<Vec<_>>()).unwrap()
    };
    let (dl, gl) = (med(&|r| r.denoiser.spectrum.lambda1), med(&|r| r.generator.spectrum.lambda1));
    let (dr, gr) = (med(&|r| r.denoiser.roughness), med(&|r| r.generator.roughness));
    outcome(
        dl < gl && dr < gr,
        format!("median lambda1 {dl:.4} vs {gl:.4}; median roughness {dr:.3e} vs {gr:.3e}"),
    )
}

fn a9_ablation_and_resume() -> Outcome {
    let cfg = ExperimentConfig::baseline();
    let g = cfg.run.global_seed;
    let mut trainer = Trainer::new(cfg.clone()).unwrap();
    let sched = NoiseSchedule::new(cfg.schedule.kind, cfg.schedule.steps).unwrap();
    let model = DenoiserMlp::new(cfg.arch()).unwrap();
    let data = datasets::generate(&cfg.dataset).unwrap().train;
    let uniform = uniform_dist(cfg.schedule.steps).unwrap();
    let mut p = model.init_params(seed::derive(g, "init")).values;
    let mut ema = p.clone();
    let (mut rd, mut rt, mut rn) = (seed::rng(g, "data"), seed::rng(g, "timesteps"), seed::rng(g, "noise"));
    let o = &cfg.optimizer;
    let (mut m, mut v) = (vec![0.0; p.len()], vec![0.0; p.len()]);
    let mut b1_pow = 1.0;
    let b = cfg.run.batch_size;
    let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    let mut ablation = true;
    for step in 1..=100 {
        let mut x0 = Array2::zeros((b, 2));
        for mut row in x0.rows_mut() {
            row.assign(&data.row(rd.random_range(0..data.nrows())));
        }
        let t = uniform.sample(&mut rt, b);
        let eps = Array2::from_shape_simple_fn((b, 2), || StandardNormal.sample(&mut rn));
        let batch = DiffusionBatch::new(&sched, x0, t, eps).unwrap();
        let (_, grad) = model.loss_and_grad(&p, &batch).unwrap();
        b1_pow *= o.beta0;
        for i in 0..p.len() {
            m[i] = o.beta0 * m[i] + (1.0 - o.beta0) * grad[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * grad[i] * grad[i];
            let mh = m[i] / (1.0 - b1_pow);
            let vh = v[i] / (1.0 - o.beta2.powi(step));
            p[i] -= o.lr0 * mh / (vh.sqrt() + o.eps);
            ema[i] = o.ema_rate * ema[i] + (1.0 - o.ema_rate) * p[i];
        }
        trainer.advance().unwrap();
        ablation &= same(trainer.params(), &p) && same(trainer.ema_params(), &ema);
    }

    let mut resume = true;
    for on in [false, true] {
        let mut c = ExperimentConfig::baseline().with_accelerators(on);
        c.run.total_iterations = 300;
        c.run.eval_every = 100;
        c.run.eval_samples = 64;
        c.dataset.n_eval = 64;
        let mut full = Trainer::new(c.clone()).unwrap();
        let rows = full.run(|_| {}).unwrap();
        let mut first = Trainer::new(c).unwrap();
        for _ in 0..120 {
            first.step().unwrap();
        }
        let mut resumed = Trainer::resume(Checkpoint::from_json(&first.checkpoint().to_json()).unwrap()).unwrap();
        let rest = resumed.run(|_| {}).unwrap();
        let later: Vec<MetricsRow> = rows.into_iter().filter(|r| r.iteration > 120).collect();
        resume &= rest.len() == later.len()
            && rest.iter().zip(&later).all(|(x, y)| x.same_trajectory(y))
            && same(resumed.params(), full.params())
            && resumed.checkpoint().to_json() == full.checkpoint().to_json();
    }
    outcome(
        ablation && resume,
        format!("ablation trace bitwise over 100 iterations: {ablation}; checkpoint resumption bitwise: {resume}"),
    )
}

fn a10_forward_process() -> Outcome {
    let steps = 1000;
    let sched = NoiseSchedule::new(ScheduleKind::Cosine, steps).unwrap();
    let n = 200_000;
    let x0 = [0.7, -0.4];
    let mut rng = seed::rng(1010, "forward");
    let mut ok = true;
    let mut worst_z: f64 = 0.0;
    for t in [1, steps / 2, steps - 1] {
        let abar = sched.alpha_bars()[t];
        let (mut s1, mut s2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let eps: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            let x = forward_sample(&sched, &x0, t, &eps).unwrap();
            for k in 0..2 {
                s1[k] += x[k];
                s2[k] += x[k] * x[k];
            }
        }
        for k in 0..2 {
            let mean = s1[k] / n as f64;
            let var = s2[k] / n as f64 - mean * mean;
            let (want_m, want_v) = (abar.sqrt() * x0[k], 1.0 - abar);
            // Five standard errors of the Monte-Carlo mean and variance.
            let zm = (mean - want_m).abs() / (want_v / n as f64).sqrt();
            let zv = (var - want_v).abs() / (want_v * (2.0 / n as f64).sqrt());
            worst_z = worst_z.max(zm).max(zv);
            ok &= zm < 5.0 && zv < 5.0;
        }
    }

    let spec = DatasetSpec {
        n_train: n,
        n_eval: 1,
        ..DatasetSpec::default()
    };
    let data = datasets::generate(&spec).unwrap().train;
    let mut worst_corr: f64 = 0.0;
    let xt: Vec<Vec<f64>> = data
        .rows()
        .into_iter()
        .map(|r| {
            let eps: [f64; 2] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            forward_sample(&sched, r.as_slice().unwrap(), steps - 1, &eps).unwrap()
        })
        .collect();
    for k in 0..2 {
        let a: Vec<f64> = data.column(k).to_vec();
        let b: Vec<f64> = xt.iter().map(|x| x[k]).collect();
        worst_corr = worst_corr.max(pearson(&a, &b).abs());
    }
    outcome(
        ok && worst_corr < 0.05,
        format!("worst moment deviation {worst_z:.2} standard errors; |corr(x_T-1, x0)| {worst_corr:.4}"),
    )
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("A1", "formula conformance", a1_formulas),
        ("A2", "compensation identity", a2_compensation),
        ("A3", "gradient correctness", a3_gradients),
        ("A4", "Lanczos accuracy", a4_lanczos),
        ("A5", "curriculum sampling law", a5_sampling_law),
        ("A6", "consistency phenomenon", a6_consistency),
        ("A7", "acceleration", a7_acceleration),
        ("A8", "landscape smoothness", a8_smoothness),
        ("A9", "ablation identity and determinism", a9_ablation_and_resume),
        ("A10", "forward-process statistics", a10_forward_process),
    ];
    let selected: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.iter().any(|s| s == id) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && EXPECTED_RED.contains(&id) { " [expected]" } else { "" };
        println!("{id:<4}{status}{note}  {name}: {} ({secs:.1} s)", o.detail);
        if !o.pass && !EXPECTED_RED.contains(&id) {
            unexpected += 1;
        }
    }
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
