//! Noise schedules, the closed-form forward process, the two prediction
//! parameterizations and ancestral sampling.
//!
//! Timesteps are indexed `0..T`. `alpha_bars[t]` is the cumulative product of
//! `alphas[0..=t]`, so `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` already carries
//! noise at `t = 0`; [`reverse_step`] at `t = 0` returns the clean estimate.

use std::f64::consts::FRAC_PI_2;

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip applied to cosine-schedule betas.
pub const MAX_BETA: f64 = 0.999;
pub const LINEAR_BETA_START: f64 = 1e-4;
pub const LINEAR_BETA_END: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

fn cosine_f(t: f64) -> f64 {
    let c = ((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos();
    c * c
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "a noise schedule needs at least 2 timesteps, got {steps}"
            )));
        }
        let n = steps as f64;
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| {
                    LINEAR_BETA_START
                        + (LINEAR_BETA_END - LINEAR_BETA_START) * i as f64 / (n - 1.0)
                })
                .collect(),
            ScheduleKind::Cosine => (0..steps)
                .map(|i| {
                    let b = 1.0 - cosine_f((i + 1) as f64 / n) / cosine_f(i as f64 / n);
                    b.min(MAX_BETA)
                })
                .collect(),
        };
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            kind,
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of timesteps `T`.
    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    fn check(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::OutOfRange {
                what: "noise schedule",
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// `abar_{t-1}`, with `abar_{-1} = 1`.
    fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Posterior variance `beta_t (1 - abar_{t-1}) / (1 - abar_t)`.
    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t] * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bars[t]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PredictionTarget {
    /// The network predicts the injected noise.
    #[default]
    Epsilon,
    /// The network predicts the clean datum.
    X0,
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, elementwise.
pub fn forward_sample(sched: &NoiseSchedule, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    sched.check(t)?;
    if x0.len() != eps.len() {
        return Err(Error::shape("forward_sample", x0.len(), eps.len()));
    }
    let ab = sched.alpha_bars[t];
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// A training minibatch: clean points, their timesteps, the injected noise and the
/// resulting noised points.
#[derive(Debug, Clone)]
pub struct DiffusionBatch {
    pub x0: Array2<f64>,
    pub t: Vec<usize>,
    pub eps: Array2<f64>,
    pub xt: Array2<f64>,
}

impl DiffusionBatch {
    pub fn new(sched: &NoiseSchedule, x0: Array2<f64>, t: Vec<usize>, eps: Array2<f64>) -> Result<Self> {
        if x0.dim() != eps.dim() {
            return Err(Error::shape(
                "diffusion batch noise",
                format!("{:?}", x0.dim()),
                format!("{:?}", eps.dim()),
            ));
        }
        if t.len() != x0.nrows() {
            return Err(Error::shape("diffusion batch timesteps", x0.nrows(), t.len()));
        }
        let mut xt = Array2::zeros(x0.dim());
        for (i, &ti) in t.iter().enumerate() {
            sched.check(ti)?;
            let ab = sched.alpha_bars[ti];
            let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
            Zip::from(xt.row_mut(i))
                .and(x0.row(i))
                .and(eps.row(i))
                .for_each(|o, &x, &e| *o = a * x + b * e);
        }
        Ok(Self { x0, t, eps, xt })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x0.ncols()
    }

    /// The regression target for the given parameterization.
    pub fn target(&self, target: PredictionTarget) -> &Array2<f64> {
        match target {
            PredictionTarget::Epsilon => &self.eps,
            PredictionTarget::X0 => &self.x0,
        }
    }
}

/// Mean squared error over every element.
pub fn mse(prediction: ArrayView2<f64>, target: ArrayView2<f64>) -> Result<f64> {
    if prediction.dim() != target.dim() {
        return Err(Error::shape(
            "mean squared error",
            format!("{:?}", target.dim()),
            format!("{:?}", prediction.dim()),
        ));
    }
    if prediction.is_empty() {
        return Err(Error::shape("mean squared error", "non-empty", "empty"));
    }
    let mut acc = 0.0;
    // Fixed row-major reduction order.
    for (p, t) in prediction.iter().zip(target.iter()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / prediction.len() as f64)
}

/// Noise-prediction loss `mean ||eps - eps_hat||^2`.
pub fn simple_loss(eps_hat: ArrayView2<f64>, eps: ArrayView2<f64>) -> Result<f64> {
    mse(eps_hat, eps)
}

/// Clean-data prediction loss `mean ||x0 - x0_hat||^2`.
pub fn x0_loss(x0_hat: ArrayView2<f64>, x0: ArrayView2<f64>) -> Result<f64> {
    mse(x0_hat, x0)
}

/// Coefficients of one ancestral step: `mean = c_x * x_t + c_out * output`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    pub c_x: f64,
    pub c_out: f64,
    pub sigma: f64,
}

impl StepCoefficients {
    pub fn new(sched: &NoiseSchedule, target: PredictionTarget, t: usize) -> Result<Self> {
        let var = sched.posterior_variance(t)?;
        let beta = sched.betas[t];
        let alpha = sched.alphas[t];
        let ab = sched.alpha_bars[t];
        let ab_prev = sched.alpha_bar_prev(t);
        let (c_x, c_out) = match target {
            PredictionTarget::Epsilon => {
                let inv = 1.0 / alpha.sqrt();
                (inv, -inv * beta / (1.0 - ab).sqrt())
            }
            PredictionTarget::X0 => (
                (1.0 - ab_prev) * alpha.sqrt() / (1.0 - ab),
                beta * ab_prev.sqrt() / (1.0 - ab),
            ),
        };
        Ok(Self {
            c_x,
            c_out,
            sigma: var.sqrt(),
        })
    }
}

/// One ancestral step `x_t -> x_{t-1}`: the posterior mean implied by the model output,
/// plus `sigma_t z`. The noise term vanishes at `t = 0`.
pub fn reverse_step(
    sched: &NoiseSchedule,
    target: PredictionTarget,
    model_output: &[f64],
    xt: &[f64],
    t: usize,
    z: &[f64],
) -> Result<Vec<f64>> {
    let c = StepCoefficients::new(sched, target, t)?;
    if model_output.len() != xt.len() || z.len() != xt.len() {
        return Err(Error::shape(
            "reverse_step",
            xt.len(),
            format!("output {} / noise {}", model_output.len(), z.len()),
        ));
    }
    Ok(xt
        .iter()
        .zip(model_output)
        .zip(z)
        .map(|((x, o), z)| c.c_x * x + c.c_out * o + c.sigma * z)
        .collect())
}

#[derive(Debug, Clone)]
enum NoiseSource {
    Seeded(ChaCha8Rng),
    Recorded { values: Vec<f64>, pos: usize },
}

/// Per-sample sources of standard normal noise for the reverse chain.
///
/// Sample `j` reads its start point first, then one draw per step with `t > 0`.
/// Cloning a stream replays it from the same position, which is how several models are
/// driven by identical noise.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    sources: Vec<NoiseSource>,
}

impl NoiseStream {
    /// `n` independent streams derived from `seed`; stream `j` does not depend on `n`.
    pub fn seeded(seed: u64, n: usize) -> Self {
        let sources = (0..n)
            .map(|j| {
                NoiseSource::Seeded(ChaCha8Rng::seed_from_u64(seed::derive_indexed(
                    seed,
                    "sample-noise",
                    j as u64,
                )))
            })
            .collect();
        Self { sources }
    }

    /// Finite, pre-recorded streams; reading past the end is an error.
    pub fn recorded(per_sample: Vec<Vec<f64>>) -> Self {
        Self {
            sources: per_sample
                .into_iter()
                .map(|values| NoiseSource::Recorded { values, pos: 0 })
                .collect(),
        }
    }

    /// Number of values one sample consumes over a full chain.
    pub fn values_per_sample(dim: usize, steps: usize) -> usize {
        dim * steps
    }

    pub fn n_samples(&self) -> usize {
        self.sources.len()
    }

    pub fn fill(&mut self, sample: usize, out: &mut [f64]) -> Result<()> {
        let len = self.sources.len();
        let src = self.sources.get_mut(sample).ok_or(Error::OutOfRange {
            what: "noise stream",
            index: sample,
            len,
        })?;
        match src {
            NoiseSource::Seeded(rng) => {
                for o in out.iter_mut() {
                    *o = StandardNormal.sample(rng);
                }
            }
            NoiseSource::Recorded { values, pos } => {
                let end = *pos + out.len();
                if end > values.len() {
                    return Err(Error::NoiseExhausted { sample });
                }
                out.copy_from_slice(&values[*pos..end]);
                *pos = end;
            }
        }
        Ok(())
    }
}

/// Anything that maps noised points and their timesteps to a prediction.
pub trait Denoiser {
    fn data_dim(&self) -> usize;
    fn target(&self) -> PredictionTarget;
    /// Row `i` of the result is the prediction for row `i` of `xt` at timestep `t[i]`.
    fn predict(&self, xt: ArrayView2<f64>, t: &[usize]) -> Array2<f64>;
}

/// Runs the full reverse chain for `n` samples, sample `j` consuming stream `j`.
pub fn generate<D: Denoiser + ?Sized>(
    model: &D,
    sched: &NoiseSchedule,
    noise: &mut NoiseStream,
    n: usize,
) -> Result<Array2<f64>> {
    let d = model.data_dim();
    if n > noise.n_samples() {
        return Err(Error::NoiseExhausted {
            sample: noise.n_samples(),
        });
    }
    let mut x = Array2::zeros((n, d));
    if n == 0 {
        return Ok(x);
    }
    for (j, mut row) in x.rows_mut().into_iter().enumerate() {
        noise.fill(j, row.as_slice_mut().expect("standard layout"))?;
    }
    let mut z = Array2::zeros((n, d));
    for t in (0..sched.len()).rev() {
        let c = StepCoefficients::new(sched, model.target(), t)?;
        let ts = vec![t; n];
        let out = model.predict(x.view(), &ts);
        if t > 0 {
            for (j, mut row) in z.rows_mut().into_iter().enumerate() {
                noise.fill(j, row.as_slice_mut().expect("standard layout"))?;
            }
        } else {
            z.fill(0.0);
        }
        Zip::from(&mut x)
            .and(&out)
            .and(&z)
            .for_each(|x, &o, &z| *x = c.c_x * *x + c.c_out * o + c.sigma * z);
    }
    Ok(x)
}
