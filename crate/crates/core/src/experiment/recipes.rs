use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::MetricsRow;
use super::train::Trainer;
use crate::consistency::{consistency, shared_noise_run, ConsistencyReport, SampleGrid, DATA_PEAK};
use crate::datasets::{self, DatasetSpec};
use crate::diffusion::Denoiser;
use crate::landscape::{
    fixed_batch, interpolate_1d, lanczos_spectrum, unit_grid, InterpolationCurve, SpectrumEstimate,
    TimestepFilter, LANDSCAPE_BATCH,
};
use crate::mdlrc::{MdlrcConfig, OptimizerState};
use crate::models::{AdversarialPair, DiffusionObjective, GanArch, GeneratorObjective};
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub global_seed: u64,
    pub final_sw: f64,
    /// First logged iteration whose EMA sliced-Wasserstein is at or below the threshold.
    pub iterations_to_threshold: Option<u64>,
    pub metrics: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    /// Median final EMA sliced-Wasserstein of the baseline runs.
    pub threshold: f64,
    pub baseline: Vec<SeedOutcome>,
    pub optimized: Vec<SeedOutcome>,
    pub median_baseline: Option<f64>,
    pub median_optimized: Option<f64>,
    /// `median_optimized / median_baseline`; absent when either median is censored.
    pub ratio: Option<f64>,
    pub censored_baseline: usize,
    pub censored_optimized: usize,
    pub low_confidence: bool,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median of right-censored counts, treating `None` as larger than every observation.
pub fn censored_median(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by_key(|x| x.unwrap_or(u64::MAX));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2].map(|x| x as f64)
    } else {
        Some(0.5 * (v[n / 2 - 1]? as f64 + v[n / 2]? as f64))
    }
}

fn run_seeds(config: &ExperimentConfig, n_seeds: usize) -> Result<Vec<(u64, Vec<MetricsRow>)>> {
    (0..n_seeds as u64)
        .map(|s| {
            let mut c = config.clone();
            c.run.global_seed = config.run.global_seed + s;
            let mut t = Trainer::new(c.clone())?;
            Ok((c.run.global_seed, t.run(|_| {})?))
        })
        .collect()
}

fn outcomes(runs: Vec<(u64, Vec<MetricsRow>)>, threshold: f64) -> Vec<SeedOutcome> {
    runs.into_iter()
        .map(|(global_seed, metrics)| SeedOutcome {
            global_seed,
            final_sw: metrics.last().map_or(f64::NAN, |r| r.sw_ema),
            iterations_to_threshold: metrics.iter().find(|r| r.sw_ema <= threshold).map(|r| r.iteration),
            metrics,
        })
        .collect()
}

/// Trains both configs on `n_seeds` consecutive global seeds and measures how quickly
/// each reaches the baseline's median final quality.
pub fn compare(
    baseline: &ExperimentConfig,
    optimized: &ExperimentConfig,
    n_seeds: usize,
) -> Result<SpeedupReport> {
    if !baseline.differs_only_in_accelerators(optimized) {
        return Err(Error::InvalidConfig(
            "compared configs may differ only in the accelerator switches".into(),
        ));
    }
    if n_seeds == 0 {
        return Err(Error::InvalidConfig("compare needs at least one seed".into()));
    }
    let base_runs = run_seeds(baseline, n_seeds)?;
    let opt_runs = run_seeds(optimized, n_seeds)?;
    let finals: Vec<f64> = base_runs
        .iter()
        .filter_map(|(_, m)| m.last().map(|r| r.sw_ema))
        .collect();
    let threshold = median(&finals).unwrap_or(f64::NAN);
    let baseline = outcomes(base_runs, threshold);
    let optimized = outcomes(opt_runs, threshold);
    let hits = |o: &[SeedOutcome]| o.iter().map(|s| s.iterations_to_threshold).collect::<Vec<_>>();
    let median_baseline = censored_median(&hits(&baseline));
    let median_optimized = censored_median(&hits(&optimized));
    let censored = |o: &[SeedOutcome]| o.iter().filter(|s| s.iterations_to_threshold.is_none()).count();
    Ok(SpeedupReport {
        threshold,
        ratio: median_baseline.zip(median_optimized).map(|(b, o)| o / b),
        median_baseline,
        median_optimized,
        censored_baseline: censored(&baseline),
        censored_optimized: censored(&optimized),
        low_confidence: n_seeds < 3,
        baseline,
        optimized,
    })
}

#[derive(Debug, Clone)]
pub struct ConsistencyRun {
    pub report: ConsistencyReport,
    pub grid: SampleGrid,
}

/// Trains one model per init seed on shared data and compares their EMA samples under
/// shared noise.
pub fn run_consistency_with_seeds(
    config: &ExperimentConfig,
    init_seeds: &[u64],
    m: usize,
) -> Result<ConsistencyRun> {
    if init_seeds.len() < 2 {
        return Err(Error::InvalidConfig("a consistency run needs at least two models".into()));
    }
    let trainers = init_seeds
        .iter()
        .map(|&s| {
            let mut c = config.clone();
            c.run.init_seed = Some(s);
            let mut t = Trainer::new(c)?;
            while !t.finished() {
                t.advance()?;
            }
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let bound: Vec<_> = trainers.iter().map(|t| t.model().bind(t.ema_params())).collect();
    let models: Vec<&dyn Denoiser> = bound.iter().map(|b| b as &dyn Denoiser).collect();
    let tags = init_seeds.iter().map(|s| format!("init-{s}")).collect();
    let noise_seed = seed::derive(config.run.global_seed, "consistency-noise");
    let grid = shared_noise_run(&models, tags, &trainers[0].schedule().clone(), noise_seed, m)?;
    Ok(ConsistencyRun {
        report: consistency(&grid, DATA_PEAK)?,
        grid,
    })
}

/// [`run_consistency_with_seeds`] with `n_models` distinct init seeds derived from the
/// global seed.
pub fn run_consistency(config: &ExperimentConfig, n_models: usize, m: usize) -> Result<ConsistencyRun> {
    let seeds: Vec<u64> = (0..n_models as u64)
        .map(|i| seed::derive_indexed(config.run.global_seed, "consistency-init", i))
        .collect();
    run_consistency_with_seeds(config, &seeds, m)
}

/// Matched-budget landscape comparison of a denoiser and a GAN generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmoothnessConfig {
    /// Denoiser recipe; its dataset, iteration count, batch size and Adam settings are
    /// shared with the GAN.
    pub denoiser: ExperimentConfig,
    pub gan: GanArch,
    /// The early interpolation anchor sits at this fraction of the budget.
    pub early_fraction: f64,
    pub interpolation_points: usize,
    pub lanczos_steps: usize,
    pub eval_batch: usize,
}

impl Default for SmoothnessConfig {
    fn default() -> Self {
        let mut denoiser = ExperimentConfig::baseline();
        denoiser.run.total_iterations = 5000;
        Self {
            denoiser,
            gan: GanArch::default(),
            early_fraction: 0.1,
            interpolation_points: 41,
            lanczos_steps: 20,
            eval_batch: LANDSCAPE_BATCH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectLandscape {
    pub curve: InterpolationCurve,
    pub roughness: f64,
    pub spectrum: SpectrumEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub seed: u64,
    pub denoiser: SubjectLandscape,
    pub generator: SubjectLandscape,
}

/// Generator and discriminator parameters captured during GAN training.
#[derive(Debug, Clone, PartialEq)]
pub struct GanSnapshot {
    pub iteration: u64,
    pub gen_params: Vec<f64>,
    pub disc_params: Vec<f64>,
}

/// Simultaneous-update GAN training with Adam on both players; snapshots are taken after
/// the listed iteration counts.
pub fn train_gan(
    arch: &GanArch,
    data: &DatasetSpec,
    opt: &MdlrcConfig,
    batch_size: usize,
    iterations: u64,
    seed_value: u64,
    snapshot_at: &[u64],
) -> Result<(AdversarialPair, Vec<GanSnapshot>)> {
    let pair = AdversarialPair::new(arch.clone())?;
    let train = datasets::generate(data)?.train;
    let (g, d) = pair.init_params(seed_value);
    let (mut gen, mut disc) = (g.values, d.values);
    let mut gen_state = OptimizerState::new(&gen, opt);
    let mut disc_state = OptimizerState::new(&disc, opt);
    let mut rng_data = seed::rng(seed_value, "gan-data");
    let mut rng_latent = seed::rng(seed_value, "gan-latent");
    let mut snapshots = Vec::new();
    for it in 1..=iterations {
        let mut real = Array2::zeros((batch_size, arch.data_dim));
        for mut row in real.rows_mut() {
            row.assign(&train.row(rng_data.random_range(0..train.nrows())));
        }
        let latent = Array2::from_shape_simple_fn((batch_size, arch.latent_dim), || {
            StandardNormal.sample(&mut rng_latent)
        });
        let l = pair.gan_losses(&gen, &disc, real.view(), latent.view())?;
        disc_state.step(&mut disc, &l.disc_grad, opt)?;
        gen_state.step(&mut gen, &l.gen_grad, opt)?;
        if snapshot_at.contains(&it) {
            snapshots.push(GanSnapshot {
                iteration: it,
                gen_params: gen.clone(),
                disc_params: disc.clone(),
            });
        }
    }
    Ok((pair, snapshots))
}

/// Trains both subjects for the same budget on the same data, then measures the 1D
/// interpolation roughness between the early and final iterates and the top of the
/// Hessian spectrum at the final iterate.
pub fn smoothness(cfg: &SmoothnessConfig, seed_value: u64) -> Result<SmoothnessReport> {
    let mut dcfg = cfg.denoiser.clone();
    dcfg.run.global_seed = seed_value;
    dcfg.dataset.seed = seed_value;
    let total = dcfg.run.total_iterations;
    let early = ((total as f64 * cfg.early_fraction).round() as u64).clamp(1, total);
    let points = unit_grid(cfg.interpolation_points);
    let probe = seed::derive(seed_value, "smoothness-probe");

    let mut trainer = Trainer::new(dcfg.clone())?;
    let mut early_params = Vec::new();
    while !trainer.finished() {
        trainer.advance()?;
        if trainer.iteration() == early {
            early_params = trainer.params().to_vec();
        }
    }
    let batch = fixed_batch(
        trainer.schedule(),
        &trainer.dataset().train,
        TimestepFilter::All,
        cfg.eval_batch,
        seed::derive(seed_value, "smoothness-batch"),
    )?;
    let objective = DiffusionObjective {
        model: trainer.model().clone(),
        batch,
    };
    let final_params = trainer.params().to_vec();
    let curve = interpolate_1d(&objective, &final_params, &early_params, &points)?;
    let denoiser = SubjectLandscape {
        roughness: curve.mean_abs_second_difference(),
        curve,
        spectrum: lanczos_spectrum(&objective, &final_params, cfg.lanczos_steps, probe)?,
    };

    let mut adam = dcfg.mdlrc_config();
    adam.momentum_decay = false;
    adam.lr_compensation = false;
    let (pair, snaps) = train_gan(
        &cfg.gan,
        &dcfg.dataset,
        &adam,
        dcfg.run.batch_size,
        total,
        seed::derive(seed_value, "gan"),
        &[early, total],
    )?;
    let (first, last) = (&snaps[0], &snaps[snaps.len() - 1]);
    let mut rng = seed::rng(seed_value, "smoothness-latent");
    let latent = Array2::from_shape_simple_fn((cfg.eval_batch, cfg.gan.latent_dim), || {
        StandardNormal.sample(&mut rng)
    });
    let objective = GeneratorObjective {
        pair,
        disc_params: last.disc_params.clone(),
        latent,
    };
    let curve = interpolate_1d(&objective, &last.gen_params, &first.gen_params, &points)?;
    let generator = SubjectLandscape {
        roughness: curve.mean_abs_second_difference(),
        curve,
        spectrum: lanczos_spectrum(&objective, &last.gen_params, cfg.lanczos_steps, probe)?,
    };
    Ok(SmoothnessReport {
        seed: seed_value,
        denoiser,
        generator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        assert_eq!(censored_median(&[Some(5), None, Some(1)]), Some(5.0));
        assert_eq!(censored_median(&[None, None, Some(1)]), None);
        assert_eq!(censored_median(&[Some(2), Some(4)]), Some(3.0));
        assert_eq!(censored_median(&[Some(2), None]), None);
    }
}
