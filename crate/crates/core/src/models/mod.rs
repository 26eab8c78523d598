//! Toy networks with flat parameter vectors and exact reverse-mode gradients.
//!
//! Every model here keeps its weights outside the struct, in a `&[f64]` laid out by a
//! [`ParameterLayout`]. The architecture is an immutable value; training, EMA,
//! interpolation and Hessian probes all operate on plain vectors.

mod gan;
mod layout;
mod mlp;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use gan::{AdversarialPair, GanArch, GanLosses, GeneratorObjective};
pub use layout::{ParamBlock, ParameterLayout, ParameterVector};
pub use mlp::Mlp;

use crate::diffusion::{DiffusionBatch, Denoiser, PredictionTarget};
use crate::{Error, Result};

/// Any scalar objective of a flat parameter vector with an exact gradient.
///
/// Implementations bind their evaluation batch at construction, so two calls with equal
/// parameters must return bitwise-equal results.
pub trait GradientOracle {
    fn num_params(&self) -> usize;

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn loss(&self, params: &[f64]) -> Result<f64> {
        Ok(self.loss_and_grad(params)?.0)
    }
}

/// Sinusoidal timestep features `[sin(t w_k), cos(t w_k)]`, with angular frequencies on a
/// geometric ladder from 1 down to 1e-4 (periods from ~6 to ~6e4 steps).
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEmbedding {
    freqs: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "time embedding dimension must be even, got {dim}"
            )));
        }
        let half = dim / 2;
        let freqs = (0..half)
            .map(|k| {
                if half == 1 {
                    1.0
                } else {
                    10f64.powf(-4.0 * k as f64 / (half - 1) as f64)
                }
            })
            .collect();
        Ok(Self { freqs })
    }

    pub fn dim(&self) -> usize {
        2 * self.freqs.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.freqs
    }

    pub fn embed_into(&self, t: usize, out: &mut [f64]) {
        let t = t as f64;
        for (k, w) in self.freqs.iter().enumerate() {
            let (s, c) = (t * w).sin_cos();
            out[2 * k] = s;
            out[2 * k + 1] = c;
        }
    }

    pub fn embed(&self, t: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        self.embed_into(t, &mut v);
        v
    }
}

/// Architecture descriptor of a denoiser; stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserArch {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub target: PredictionTarget,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden: vec![128, 128, 128],
            time_embed_dim: 32,
            target: PredictionTarget::Epsilon,
        }
    }
}

/// An MLP denoiser: `[x, embed(t)] -> hidden (SiLU) -> ... -> R^d`.
#[derive(Debug, Clone)]
pub struct DenoiserMlp {
    arch: DenoiserArch,
    embed: TimeEmbedding,
    mlp: Mlp,
}

impl DenoiserMlp {
    pub fn new(arch: DenoiserArch) -> Result<Self> {
        if arch.data_dim == 0 {
            return Err(Error::InvalidConfig("denoiser data dimension must be positive".into()));
        }
        if arch.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        let embed = TimeEmbedding::new(arch.time_embed_dim)?;
        let mut sizes = vec![arch.data_dim + arch.time_embed_dim];
        sizes.extend(&arch.hidden);
        sizes.push(arch.data_dim);
        let mlp = Mlp::new("layer", sizes)?;
        Ok(Self { arch, embed, mlp })
    }

    pub fn arch(&self) -> &DenoiserArch {
        &self.arch
    }

    pub fn layout(&self) -> &ParameterLayout {
        self.mlp.layout()
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn init_params(&self, seed: u64) -> ParameterVector {
        self.mlp.init_params(seed)
    }

    fn input(&self, x: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        let d = self.arch.data_dim;
        if x.ncols() != d {
            return Err(Error::shape("denoiser input", d, x.ncols()));
        }
        if t.len() != x.nrows() {
            return Err(Error::shape("denoiser timesteps", x.nrows(), t.len()));
        }
        let e = self.embed.dim();
        let mut input = Array2::zeros((x.nrows(), d + e));
        let mut emb = vec![0.0; e];
        let mut last_t = None;
        for (i, mut row) in input.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            for (o, v) in row[..d].iter_mut().zip(x.row(i)) {
                *o = *v;
            }
            if last_t != Some(t[i]) {
                self.embed.embed_into(t[i], &mut emb);
                last_t = Some(t[i]);
            }
            row[d..].copy_from_slice(&emb);
        }
        Ok(input)
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>, t: &[usize]) -> Result<Array2<f64>> {
        self.mlp.check_params(params)?;
        let input = self.input(x, t)?;
        Ok(self.mlp.forward(params, input.view()))
    }

    /// Mean squared error against the batch's target for this parameterization.
    pub fn loss(&self, params: &[f64], batch: &DiffusionBatch) -> Result<f64> {
        let out = self.forward(params, batch.xt.view(), &batch.t)?;
        crate::diffusion::mse(out.view(), batch.target(self.arch.target).view())
    }

    /// Loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, params: &[f64], batch: &DiffusionBatch) -> Result<(f64, Vec<f64>)> {
        self.mlp.check_params(params)?;
        let input = self.input(batch.xt.view(), &batch.t)?;
        let (out, cache) = self.mlp.forward_cached(params, input.view());
        let target = batch.target(self.arch.target);
        let loss = crate::diffusion::mse(out.view(), target.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("denoiser loss".into()));
        }
        let scale = 2.0 / out.len() as f64;
        let d_out = (&out - target) * scale;
        let mut grad = vec![0.0; self.num_params()];
        self.mlp.backward(params, &cache, d_out, &mut grad, false);
        Ok((loss, grad))
    }

    /// Pairs the architecture with a parameter vector for sampling.
    pub fn bind<'a>(&'a self, params: &'a [f64]) -> BoundDenoiser<'a> {
        BoundDenoiser {
            model: self,
            params,
        }
    }
}

/// A denoiser architecture together with concrete weights.
#[derive(Debug, Clone, Copy)]
pub struct BoundDenoiser<'a> {
    pub model: &'a DenoiserMlp,
    pub params: &'a [f64],
}

impl Denoiser for BoundDenoiser<'_> {
    fn data_dim(&self) -> usize {
        self.model.arch.data_dim
    }

    fn target(&self) -> PredictionTarget {
        self.model.arch.target
    }

    fn predict(&self, xt: ArrayView2<f64>, t: &[usize]) -> Array2<f64> {
        self.model
            .forward(self.params, xt, t)
            .expect("bound denoiser called with mismatched shapes")
    }
}

/// The diffusion training loss on a fixed batch.
#[derive(Debug, Clone)]
pub struct DiffusionObjective {
    pub model: DenoiserMlp,
    pub batch: DiffusionBatch,
}

impl GradientOracle for DiffusionObjective {
    fn num_params(&self) -> usize {
        self.model.num_params()
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.model.loss_and_grad(params, &self.batch)
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.model.loss(params, &self.batch)
    }
}
