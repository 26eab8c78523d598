//! A desk-scale laboratory for training and analysing denoising diffusion models.
//!
//! The crate is organised around the pieces a small diffusion training run needs:
//!
//! - [`diffusion`]: noise schedules, the forward process, both prediction
//!   parameterizations and ancestral sampling driven by replayable noise streams.
//! - [`models`]: multilayer-perceptron denoisers and a minimal adversarial pair that
//!   expose a flat parameter vector and a loss-and-gradient oracle.
//! - [`clts`]: the curriculum timestep schedule, a uniform-to-Gaussian blend over
//!   discrete timesteps.
//! - [`mdlrc`]: Adam with decaying momentum, learning-rate compensation, a momentum
//!   floor and parameter EMA.
//! - [`landscape`]: 1D interpolation, 2D surfaces, Hessian-vector products and Lanczos
//!   spectra.
//! - [`consistency`]: PSNR, the shared-noise consistency metric and sliced Wasserstein.
//! - [`datasets`]: seeded 2D synthetic datasets.
//! - [`experiment`]: configuration, the training loop, checkpoints, metrics and recipes.

pub mod clts;
pub mod consistency;
pub mod datasets;
pub mod diffusion;
mod error;
pub mod experiment;
pub mod landscape;
pub mod mdlrc;
pub mod models;
pub mod plot;
pub mod seed;

pub use error::{Error, Result};
