use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{Checkpoint, OptimizerSnapshot, RngPositions, CHECKPOINT_FORMAT};
use super::config::ExperimentConfig;
use super::metrics::MetricsRow;
use crate::clts::{uniform_dist, CurriculumSchedule, TimestepDistribution};
use crate::consistency::sliced_wasserstein;
use crate::datasets::{self, Dataset};
use crate::diffusion::{generate, DiffusionBatch, NoiseSchedule, NoiseStream};
use crate::mdlrc::{MdlrcConfig, OptimizerState};
use crate::models::DenoiserMlp;
use crate::{seed, Error, Result};

/// Seed of the parameter initialization stream for a config.
pub fn init_seed(config: &ExperimentConfig) -> u64 {
    config
        .run
        .init_seed
        .unwrap_or_else(|| seed::derive(config.run.global_seed, "init"))
}

/// Single-threaded training loop over one denoiser.
///
/// Randomness comes from independent streams for data indices, timesteps and training
/// noise, so switching the timestep distribution never perturbs the data order.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: ExperimentConfig,
    sched: NoiseSchedule,
    model: DenoiserMlp,
    data: Dataset,
    curriculum: Option<CurriculumSchedule>,
    uniform: TimestepDistribution,
    opt: MdlrcConfig,
    params: Vec<f64>,
    state: OptimizerState,
    iteration: u64,
    rng_data: ChaCha8Rng,
    rng_timesteps: ChaCha8Rng,
    rng_noise: ChaCha8Rng,
    loss_sum: f64,
    loss_count: u64,
    last_good: Option<Checkpoint>,
    started: Instant,
}

impl Trainer {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let sched = NoiseSchedule::new(config.schedule.kind, config.schedule.steps)?;
        let model = DenoiserMlp::new(config.arch())?;
        let data = datasets::generate(&config.dataset)?;
        let curriculum = if config.clts.enabled {
            Some(CurriculumSchedule::new(config.clts_config(), config.clts.mode)?)
        } else {
            None
        };
        let uniform = uniform_dist(config.schedule.steps)?;
        let opt = config.mdlrc_config();
        let params = model.init_params(init_seed(&config)).values;
        let state = OptimizerState::new(&params, &opt);
        let g = config.run.global_seed;
        Ok(Self {
            sched,
            model,
            data,
            curriculum,
            uniform,
            opt,
            params,
            state,
            iteration: 0,
            rng_data: seed::rng(g, "data"),
            rng_timesteps: seed::rng(g, "timesteps"),
            rng_noise: seed::rng(g, "noise"),
            loss_sum: 0.0,
            loss_count: 0,
            last_good: None,
            started: Instant::now(),
            config,
        })
    }

    /// Rebuilds a trainer from a checkpoint; the following iterations match an
    /// uninterrupted run exactly.
    pub fn resume(checkpoint: Checkpoint) -> Result<Self> {
        let mut t = Self::new(checkpoint.config.clone())?;
        if t.model.layout() != &checkpoint.layout {
            return Err(Error::InvalidConfig(
                "checkpoint parameter layout does not match its config".into(),
            ));
        }
        let pos = |s: &str| {
            s.parse::<u128>()
                .map_err(|e| Error::InvalidConfig(format!("bad RNG position {s:?}: {e}")))
        };
        t.rng_data.set_word_pos(pos(&checkpoint.rng.data)?);
        t.rng_timesteps.set_word_pos(pos(&checkpoint.rng.timesteps)?);
        t.rng_noise.set_word_pos(pos(&checkpoint.rng.noise)?);
        t.iteration = checkpoint.iteration;
        t.loss_sum = checkpoint.loss_window_sum;
        t.loss_count = checkpoint.loss_window_count;
        t.params = checkpoint.params.clone();
        t.state = OptimizerState::from(checkpoint.optimizer.clone());
        t.last_good = Some(checkpoint);
        Ok(t)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn model(&self) -> &DenoiserMlp {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn ema_params(&self) -> &[f64] {
        &self.state.ema_params
    }

    pub fn optimizer_state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn finished(&self) -> bool {
        self.iteration >= self.config.run.total_iterations
    }

    /// Timestep distribution used at a given (zero-based) iteration.
    pub fn timestep_distribution(&self, iteration: u64) -> Result<TimestepDistribution> {
        match &self.curriculum {
            Some(c) => c.at(iteration),
            None => Ok(self.uniform.clone()),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            iteration: self.iteration,
            arch: self.model.arch().clone(),
            layout: self.model.layout().clone(),
            params: self.params.clone(),
            optimizer: OptimizerSnapshot::from(&self.state),
            rng: RngPositions {
                data: self.rng_data.get_word_pos().to_string(),
                timesteps: self.rng_timesteps.get_word_pos().to_string(),
                noise: self.rng_noise.get_word_pos().to_string(),
            },
            loss_window_sum: self.loss_sum,
            loss_window_count: self.loss_count,
        }
    }

    fn diverged(&self) -> Error {
        Error::Divergence {
            iteration: self.iteration,
            last_good: self.last_good.clone().map(Box::new),
        }
    }

    fn next_batch(&mut self) -> Result<DiffusionBatch> {
        let b = self.config.run.batch_size;
        let n = self.data.train.nrows();
        let mut x0 = Array2::zeros((b, 2));
        for mut row in x0.rows_mut() {
            let i = self.rng_data.random_range(0..n);
            row.assign(&self.data.train.row(i));
        }
        let dist = self.timestep_distribution(self.iteration)?;
        let t = dist.sample(&mut self.rng_timesteps, b);
        let eps = Array2::from_shape_simple_fn((b, 2), || StandardNormal.sample(&mut self.rng_noise));
        DiffusionBatch::new(&self.sched, x0, t, eps)
    }

    /// Runs one optimization iteration without any evaluation and returns its loss.
    pub fn advance(&mut self) -> Result<f64> {
        let batch = self.next_batch()?;
        let (loss, grad) = match self.model.loss_and_grad(&self.params, &batch) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(self.diverged()),
            Err(e) => return Err(e),
        };
        match self.state.step(&mut self.params, &grad, &self.opt) {
            Ok(()) => {}
            Err(Error::NonFinite(_)) => return Err(self.diverged()),
            Err(e) => return Err(e),
        }
        self.state.ema_update(&self.params, &self.opt)?;
        self.iteration += 1;
        self.loss_sum += loss;
        self.loss_count += 1;
        let every = self.config.run.checkpoint_every;
        if every > 0 && self.iteration % every == 0 {
            self.last_good = Some(self.checkpoint());
        }
        Ok(loss)
    }

    /// Runs one iteration. Returns a metrics row when this iteration closes an
    /// evaluation window.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        if self.finished() {
            return Ok(None);
        }
        let gamma = self.curriculum.as_ref().map(|c| c.gamma(self.iteration));
        self.advance()?;
        let run = &self.config.run;
        let due = (run.eval_every > 0 && self.iteration % run.eval_every == 0)
            || self.iteration == run.total_iterations;
        if !due {
            return Ok(None);
        }
        let sw_ema = self.evaluate(self.ema_params())?;
        let sw_raw = if run.eval_raw {
            Some(self.evaluate(&self.params)?)
        } else {
            None
        };
        let row = MetricsRow {
            iteration: self.iteration,
            train_loss: self.loss_sum / self.loss_count as f64,
            sw_ema,
            sw_raw,
            beta1: self.state.current_beta1,
            lr: self.state.current_lr,
            gamma,
            wall_clock_s: self.started.elapsed().as_secs_f64(),
        };
        self.loss_sum = 0.0;
        self.loss_count = 0;
        Ok(Some(row))
    }

    /// Sliced Wasserstein distance from `run.eval_samples` model samples to the eval split.
    pub fn evaluate(&self, params: &[f64]) -> Result<f64> {
        let g = self.config.run.global_seed;
        let n = self.config.run.eval_samples;
        let mut noise = NoiseStream::seeded(seed::derive(g, "eval"), n);
        let samples = generate(&self.model.bind(params), &self.sched, &mut noise, n)?;
        sliced_wasserstein(
            samples.view(),
            self.data.eval.view(),
            self.config.run.sw_projections,
            seed::derive(g, "eval-sw"),
        )
    }

    /// Runs to completion, handing every metrics row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricsRow)) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while !self.finished() {
            if let Some(row) = self.step()? {
                on_row(&row);
                rows.push(row);
            }
        }
        Ok(rows)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<MetricsRow>,
}

pub fn train(config: ExperimentConfig) -> Result<TrainOutput> {
    let mut t = Trainer::new(config)?;
    let metrics = t.run(|_| {})?;
    Ok(TrainOutput {
        checkpoint: t.checkpoint(),
        metrics,
    })
}
