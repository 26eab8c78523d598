//! Curriculum timestep schedule.
//!
//! Training timesteps are drawn from `P(t) = (1 - gamma) U(t) + gamma N(t)`, a blend of
//! the uniform distribution and a Gaussian over `{0, .., T-1}`. `gamma` ramps linearly
//! from 0 to 1 over `target_iteration` iterations and then stays at 1, so probability
//! mass moves gradually away from the easy, nearly-pure-noise timesteps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A probability vector over timesteps together with its running sum.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestepDistribution {
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl TimestepDistribution {
    /// Builds a distribution from nonnegative weights, normalizing them to sum to 1.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidConfig("empty timestep distribution".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(
                "timestep weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("timestep weights sum to zero".into()));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Ok(Self::from_probs(probs))
    }

    fn from_probs(probs: Vec<f64>) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Pin the last entry to exactly 1.
        *cdf.last_mut().expect("non-empty") = 1.0;
        Self { probs, cdf }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    /// Inverse-CDF lookup of a uniform draw `u` in `[0, 1)`.
    pub fn quantile(&self, u: f64) -> usize {
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.probs.len() - 1)
    }

    /// `count` i.i.d. draws by inverse-CDF sampling.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        (0..count).map(|_| self.quantile(rng.random::<f64>())).collect()
    }

    /// Total-variation distance between the empirical law of `draws` and `self`.
    pub fn total_variation(&self, draws: &[usize]) -> f64 {
        let mut counts = vec![0u64; self.len()];
        for &d in draws {
            counts[d] += 1;
        }
        let n = draws.len() as f64;
        0.5 * counts
            .iter()
            .zip(&self.probs)
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .sum::<f64>()
    }
}

/// Parameters of the Gaussian component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CltsConfig {
    pub steps: usize,
    pub mu: f64,
    pub sigma: f64,
    pub target_iteration: u64,
}

impl CltsConfig {
    /// Defaults: `mu = 0.3 T`, `sigma = T`.
    pub fn new(steps: usize, target_iteration: u64) -> Self {
        Self {
            steps,
            mu: 0.3 * steps as f64,
            sigma: steps as f64,
            target_iteration,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::InvalidConfig(format!(
                "curriculum schedule needs T >= 2, got {}",
                self.steps
            )));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !self.mu.is_finite() {
            return Err(Error::InvalidConfig("mu must be finite".into()));
        }
        if self.target_iteration < 1 {
            return Err(Error::InvalidConfig("target_iteration must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn uniform_dist(steps: usize) -> Result<TimestepDistribution> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!(
            "uniform timestep distribution needs T >= 2, got {steps}"
        )));
    }
    let p = 1.0 / steps as f64;
    Ok(TimestepDistribution::from_probs(vec![p; steps]))
}

/// `exp(-(t - mu)^2 / (2 sigma^2))` on the integer timesteps, renormalized.
pub fn gaussian_dist(cfg: &CltsConfig) -> Result<TimestepDistribution> {
    cfg.validate()?;
    gaussian_at(cfg.steps, cfg.mu, cfg.sigma)
}

fn gaussian_at(steps: usize, mu: f64, sigma: f64) -> Result<TimestepDistribution> {
    let denom = 2.0 * sigma * sigma;
    let weights = (0..steps)
        .map(|t| {
            let d = t as f64 - mu;
            (-(d * d) / denom).exp()
        })
        .collect();
    TimestepDistribution::from_weights(weights)
}

/// `min(1, iteration / target)`.
pub fn gamma_at(iteration: u64, target: u64) -> f64 {
    if iteration >= target {
        1.0
    } else {
        iteration as f64 / target as f64
    }
}

/// `(1 - gamma) u + gamma n`, entrywise.
pub fn mix(u: &TimestepDistribution, n: &TimestepDistribution, gamma: f64) -> Result<TimestepDistribution> {
    if u.len() != n.len() {
        return Err(Error::shape("timestep mixture", u.len(), n.len()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let probs = u
        .probs
        .iter()
        .zip(&n.probs)
        .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
        .collect();
    Ok(TimestepDistribution::from_probs(probs))
}

/// How the sampling distribution evolves with training progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CurriculumMode {
    /// Uniform-to-Gaussian blend.
    #[default]
    Mixture,
    /// A single Gaussian whose mean slides from `T - 1` to `mu` as gamma goes 0 -> 1.
    /// Kept only to reproduce the weaker shifting variant.
    Shifted,
}

/// The per-iteration timestep distribution of a training run.
#[derive(Debug, Clone)]
pub struct CurriculumSchedule {
    cfg: CltsConfig,
    mode: CurriculumMode,
    uniform: TimestepDistribution,
    gaussian: TimestepDistribution,
}

impl CurriculumSchedule {
    pub fn new(cfg: CltsConfig, mode: CurriculumMode) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            uniform: uniform_dist(cfg.steps)?,
            gaussian: gaussian_dist(&cfg)?,
            cfg,
            mode,
        })
    }

    pub fn config(&self) -> &CltsConfig {
        &self.cfg
    }

    pub fn gamma(&self, iteration: u64) -> f64 {
        gamma_at(iteration, self.cfg.target_iteration)
    }

    pub fn at(&self, iteration: u64) -> Result<TimestepDistribution> {
        let gamma = self.gamma(iteration);
        match self.mode {
            CurriculumMode::Mixture => mix(&self.uniform, &self.gaussian, gamma),
            CurriculumMode::Shifted => {
                let start = (self.cfg.steps - 1) as f64;
                gaussian_at(self.cfg.steps, (1.0 - gamma) * start + gamma * self.cfg.mu, self.cfg.sigma)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn uniform_examples() {
        assert_eq!(uniform_dist(4).unwrap().probs(), &[0.25; 4]);
        let u = uniform_dist(4000).unwrap();
        assert!(u.probs().iter().all(|&p| p == 2.5e-4));
        assert_relative_eq!(u.probs().iter().sum::<f64>(), 1.0, max_relative = 1e-12);
        assert_eq!(*u.cdf().last().unwrap(), 1.0);
        assert!(matches!(uniform_dist(1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn gaussian_mode_and_symmetry() {
        let cfg = CltsConfig {
            steps: 4000,
            mu: 1200.0,
            sigma: 4000.0,
            target_iteration: 50_000,
        };
        let g = gaussian_dist(&cfg).unwrap();
        let argmax = (0..g.len())
            .max_by(|&a, &b| g.probs()[a].total_cmp(&g.probs()[b]))
            .unwrap();
        assert_eq!(argmax, 1200);
        for k in 1..500 {
            assert_relative_eq!(g.probs()[1200 - k], g.probs()[1200 + k], max_relative = 1e-15);
        }
    }

    #[test]
    fn gaussian_small_case_by_brute_force() {
        let cfg = CltsConfig {
            steps: 4,
            mu: 1.0,
            sigma: 4.0,
            target_iteration: 1,
        };
        let w: Vec<f64> = (0..4).map(|t| (-((t as f64 - 1.0).powi(2)) / 32.0).exp()).collect();
        let z: f64 = w.iter().sum();
        let g = gaussian_dist(&cfg).unwrap();
        for t in 0..4 {
            assert_relative_eq!(g.probs()[t], w[t] / z, max_relative = 1e-14);
        }
        let u = uniform_dist(4).unwrap();
        let half = mix(&u, &g, 0.5).unwrap();
        for t in 0..4 {
            assert_relative_eq!(half.probs()[t], 0.5 * (0.25 + w[t] / z), max_relative = 1e-14);
        }
    }

    #[test]
    fn invalid_config() {
        let mut cfg = CltsConfig::new(10, 5);
        cfg.sigma = 0.0;
        assert!(gaussian_dist(&cfg).is_err());
        cfg.sigma = 1.0;
        cfg.target_iteration = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gamma_ramp() {
        assert_eq!(gamma_at(0, 50_000), 0.0);
        assert_eq!(gamma_at(50_000, 50_000), 1.0);
        assert_eq!(gamma_at(100_000, 50_000), 1.0);
        assert_eq!(gamma_at(25_000, 50_000), 0.5);
    }

    #[test]
    fn mix_endpoints_and_errors() {
        let u = uniform_dist(10).unwrap();
        let g = gaussian_dist(&CltsConfig::new(10, 3)).unwrap();
        assert_eq!(mix(&u, &g, 0.0).unwrap(), u);
        assert_eq!(mix(&u, &g, 1.0).unwrap(), g);
        assert!(mix(&u, &uniform_dist(11).unwrap(), 0.5).is_err());
        assert!(mix(&u, &g, 1.5).is_err());
    }

    #[test]
    fn point_mass_sampling() {
        let mut w = vec![0.0; 8];
        w[3] = 1.0;
        let d = TimestepDistribution::from_weights(w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(d.sample(&mut rng, 1000).iter().all(|&t| t == 3));
    }

    #[test]
    fn sampling_is_reproducible() {
        let d = gaussian_dist(&CltsConfig::new(100, 3)).unwrap();
        let a = d.sample(&mut ChaCha8Rng::seed_from_u64(9), 50);
        let b = d.sample(&mut ChaCha8Rng::seed_from_u64(9), 50);
        assert_eq!(a, b);
    }

    #[test]
    fn shifted_mode_moves_mean() {
        let s = CurriculumSchedule::new(CltsConfig::new(100, 10), CurriculumMode::Shifted).unwrap();
        let start = s.at(0).unwrap();
        let end = s.at(10).unwrap();
        let mean = |d: &TimestepDistribution| {
            d.probs().iter().enumerate().map(|(t, p)| t as f64 * p).sum::<f64>()
        };
        assert!(mean(&start) > mean(&end));
    }
}
