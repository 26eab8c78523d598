use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{GradientOracle, Mlp, ParameterVector};
use crate::{Error, Result};

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GanArch {
    pub data_dim: usize,
    pub latent_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl Default for GanArch {
    fn default() -> Self {
        Self {
            data_dim: 2,
            latent_dim: 16,
            gen_hidden: vec![128, 128, 128],
            disc_hidden: vec![128, 128, 128],
        }
    }
}

/// Generator `R^latent -> R^d` and discriminator `R^d -> logit`.
#[derive(Debug, Clone)]
pub struct AdversarialPair {
    arch: GanArch,
    generator: Mlp,
    discriminator: Mlp,
}

/// Non-saturating GAN objectives and their gradients.
#[derive(Debug, Clone)]
pub struct GanLosses {
    /// `-mean log D(G(z))`.
    pub gen_loss: f64,
    /// `-mean log D(x) - mean log(1 - D(G(z)))`.
    pub disc_loss: f64,
    pub gen_grad: Vec<f64>,
    pub disc_grad: Vec<f64>,
}

impl AdversarialPair {
    pub fn new(arch: GanArch) -> Result<Self> {
        let mut g = vec![arch.latent_dim];
        g.extend(&arch.gen_hidden);
        g.push(arch.data_dim);
        let mut d = vec![arch.data_dim];
        d.extend(&arch.disc_hidden);
        d.push(1);
        Ok(Self {
            generator: Mlp::new("gen", g)?,
            discriminator: Mlp::new("disc", d)?,
            arch,
        })
    }

    pub fn arch(&self) -> &GanArch {
        &self.arch
    }

    pub fn generator(&self) -> &Mlp {
        &self.generator
    }

    pub fn discriminator(&self) -> &Mlp {
        &self.discriminator
    }

    /// Independently seeded generator and discriminator parameters.
    pub fn init_params(&self, seed: u64) -> (ParameterVector, ParameterVector) {
        (
            self.generator.init_params(crate::seed::derive(seed, "generator")),
            self.discriminator.init_params(crate::seed::derive(seed, "discriminator")),
        )
    }

    pub fn generate(&self, gen_params: &[f64], latent: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.generator.check_params(gen_params)?;
        if latent.ncols() != self.arch.latent_dim {
            return Err(Error::shape("latent batch", self.arch.latent_dim, latent.ncols()));
        }
        Ok(self.generator.forward(gen_params, latent))
    }

    pub fn gan_losses(
        &self,
        gen_params: &[f64],
        disc_params: &[f64],
        real: ArrayView2<f64>,
        latent: ArrayView2<f64>,
    ) -> Result<GanLosses> {
        self.generator.check_params(gen_params)?;
        self.discriminator.check_params(disc_params)?;
        if real.nrows() == 0 || latent.nrows() == 0 {
            return Err(Error::shape("GAN batch", "non-empty", "empty"));
        }
        if real.ncols() != self.arch.data_dim {
            return Err(Error::shape("real batch", self.arch.data_dim, real.ncols()));
        }
        if latent.ncols() != self.arch.latent_dim {
            return Err(Error::shape("latent batch", self.arch.latent_dim, latent.ncols()));
        }
        let (fake, gen_cache) = self.generator.forward_cached(gen_params, latent);
        let (logit_real, real_cache) = self.discriminator.forward_cached(disc_params, real);
        let (logit_fake, fake_cache) = self.discriminator.forward_cached(disc_params, fake.view());
        let nr = real.nrows() as f64;
        let nf = latent.nrows() as f64;

        let disc_loss = logit_real.iter().map(|&l| softplus(-l)).sum::<f64>() / nr
            + logit_fake.iter().map(|&l| softplus(l)).sum::<f64>() / nf;
        let gen_loss = logit_fake.iter().map(|&l| softplus(-l)).sum::<f64>() / nf;
        if !disc_loss.is_finite() || !gen_loss.is_finite() {
            return Err(Error::NonFinite("GAN loss".into()));
        }

        let n_disc = self.discriminator.num_params();
        let mut disc_grad = vec![0.0; n_disc];
        let mut scratch = vec![0.0; n_disc];
        let d_real = logit_real.mapv(|l| (sigmoid(l) - 1.0) / nr);
        self.discriminator
            .backward(disc_params, &real_cache, d_real, &mut disc_grad, false);
        let d_fake = logit_fake.mapv(|l| sigmoid(l) / nf);
        self.discriminator
            .backward(disc_params, &fake_cache, d_fake, &mut scratch, false);
        for (g, s) in disc_grad.iter_mut().zip(&scratch) {
            *g += s;
        }

        let d_gen_logit = logit_fake.mapv(|l| (sigmoid(l) - 1.0) / nf);
        let d_sample = self
            .discriminator
            .backward(disc_params, &fake_cache, d_gen_logit, &mut scratch, true)
            .expect("input gradient requested");
        let mut gen_grad = vec![0.0; self.generator.num_params()];
        self.generator
            .backward(gen_params, &gen_cache, d_sample, &mut gen_grad, false);

        Ok(GanLosses {
            gen_loss,
            disc_loss,
            gen_grad,
            disc_grad,
        })
    }
}

/// Generator loss on a fixed latent batch against a frozen discriminator.
#[derive(Debug, Clone)]
pub struct GeneratorObjective {
    pub pair: AdversarialPair,
    pub disc_params: Vec<f64>,
    pub latent: Array2<f64>,
}

impl GradientOracle for GeneratorObjective {
    fn num_params(&self) -> usize {
        self.pair.generator.num_params()
    }

    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>)> {
        let pair = &self.pair;
        pair.generator.check_params(params)?;
        let (fake, gen_cache) = pair.generator.forward_cached(params, self.latent.view());
        let (logit, cache) = pair.discriminator.forward_cached(&self.disc_params, fake.view());
        let n = self.latent.nrows() as f64;
        let loss = logit.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("generator loss".into()));
        }
        let mut scratch = vec![0.0; pair.discriminator.num_params()];
        let d_sample = pair
            .discriminator
            .backward(
                &self.disc_params,
                &cache,
                logit.mapv(|l| (sigmoid(l) - 1.0) / n),
                &mut scratch,
                true,
            )
            .expect("input gradient requested");
        let mut grad = vec![0.0; self.num_params()];
        pair.generator.backward(params, &gen_cache, d_sample, &mut grad, false);
        Ok((loss, grad))
    }

    fn loss(&self, params: &[f64]) -> Result<f64> {
        self.pair.generator.check_params(params)?;
        let fake = self.pair.generator.forward(params, self.latent.view());
        let logit = self.pair.discriminator.forward(&self.disc_params, fake.view());
        Ok(logit.iter().map(|&l| softplus(-l)).sum::<f64>() / self.latent.nrows() as f64)
    }
}
