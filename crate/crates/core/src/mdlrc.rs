//! Adam with decaying first-moment momentum and learning-rate compensation.
//!
//! The momentum follows `beta_t = beta0 (1 - tau) / ((1 - beta0) + beta0 (1 - tau))`,
//! clamped below at `beta_floor`, where `tau` is the fraction of the run completed.
//! The learning rate is rescaled to `l_t = l0 (1 - beta0) / (1 - beta_t)` so the weight
//! of the newest gradient in the first moment, `l_t (1 - beta_t)`, stays at
//! `l0 (1 - beta0)` for the whole run. Bias correction uses the running product of the
//! momenta actually applied.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdlrcConfig {
    pub beta0: f64,
    pub beta2: f64,
    pub lr0: f64,
    pub total_iterations: u64,
    pub beta_floor: f64,
    pub ema_rate: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Decay the momentum over the run; otherwise `beta_t = beta0`.
    pub momentum_decay: bool,
    /// Rescale the learning rate with the momentum; otherwise `l_t = l0`.
    pub lr_compensation: bool,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f64>,
}

impl Default for MdlrcConfig {
    fn default() -> Self {
        Self {
            beta0: 0.8,
            beta2: 0.999,
            lr0: 1e-4,
            total_iterations: 20_000,
            beta_floor: 0.4,
            ema_rate: 0.9999,
            eps: 1e-8,
            weight_decay: 0.0,
            momentum_decay: true,
            lr_compensation: true,
            grad_clip: None,
        }
    }
}

impl MdlrcConfig {
    /// Plain Adam with a fixed first-moment factor.
    pub fn adam(beta1: f64, lr: f64, total_iterations: u64) -> Self {
        Self {
            beta0: beta1,
            lr0: lr,
            total_iterations,
            beta_floor: 0.0,
            momentum_decay: false,
            lr_compensation: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0 <= self.beta_floor && self.beta_floor <= self.beta0 && self.beta0 < 1.0) {
            return bad(format!(
                "need 0 <= beta_floor <= beta0 < 1, got floor {} and beta0 {}",
                self.beta_floor, self.beta0
            ));
        }
        if !(0.0 < self.beta2 && self.beta2 < 1.0) {
            return bad(format!("beta2 must lie in (0, 1), got {}", self.beta2));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(0.0 <= self.ema_rate && self.ema_rate < 1.0) {
            return bad(format!("ema_rate must lie in [0, 1), got {}", self.ema_rate));
        }
        if !(self.eps >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps and weight_decay must be nonnegative".into());
        }
        if self.total_iterations == 0 {
            return bad("total_iterations must be positive".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        Ok(())
    }
}

/// Decayed momentum at run fraction `tau`, never below the floor.
pub fn momentum_at(tau: f64, cfg: &MdlrcConfig) -> f64 {
    let tau = tau.clamp(0.0, 1.0);
    // (1 - beta0) + beta0 (1 - tau) == 1 - beta0 tau; this form is exact at tau = 0.
    let raw = cfg.beta0 * (1.0 - tau) / (1.0 - cfg.beta0 * tau);
    raw.max(cfg.beta_floor)
}

/// Compensated learning rate `l0 (1 - beta0) / (1 - beta_t)`.
pub fn lr_at(beta_t: f64, cfg: &MdlrcConfig) -> Result<f64> {
    if !(beta_t < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "momentum must be below 1 for learning-rate compensation, got {beta_t}"
        )));
    }
    Ok(cfg.lr0 * ((1.0 - cfg.beta0) / (1.0 - beta_t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed optimizer steps.
    pub step: u64,
    /// Product of every first-moment factor applied so far.
    pub beta1_product: f64,
    pub current_beta1: f64,
    pub current_lr: f64,
    pub ema_params: Vec<f64>,
}

impl OptimizerState {
    /// Zero moments, EMA initialized to a copy of `params`.
    pub fn new(params: &[f64], cfg: &MdlrcConfig) -> Self {
        Self {
            m: vec![0.0; params.len()],
            v: vec![0.0; params.len()],
            step: 0,
            beta1_product: 1.0,
            current_beta1: cfg.beta0,
            current_lr: cfg.lr0,
            ema_params: params.to_vec(),
        }
    }

    /// Momentum and learning rate the next step will apply.
    pub fn next_hyperparameters(&self, cfg: &MdlrcConfig) -> Result<(f64, f64)> {
        let beta = if cfg.momentum_decay {
            momentum_at(self.step as f64 / cfg.total_iterations as f64, cfg)
        } else {
            cfg.beta0
        };
        let lr = if cfg.lr_compensation {
            lr_at(beta, cfg)?
        } else {
            cfg.lr0
        };
        Ok((beta, lr))
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &MdlrcConfig) -> Result<()> {
        let n = params.len();
        if grad.len() != n || self.m.len() != n || self.v.len() != n {
            return Err(Error::shape("optimizer step", n, grad.len()));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let (beta1, lr) = self.next_hyperparameters(cfg)?;
        let clip_scale = match cfg.grad_clip {
            Some(c) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        self.beta1_product *= beta1;
        let bc1 = 1.0 - self.beta1_product;
        let bc2 = 1.0 - cfg.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let beta2 = cfg.beta2;
        let decay = lr * cfg.weight_decay;

        for i in 0..n {
            let g = if clip_scale == 1.0 { grad[i] } else { grad[i] * clip_scale };
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let p = params[i];
            let mut next = p - lr * m_hat / (v_hat.sqrt() + cfg.eps);
            if decay != 0.0 {
                next -= decay * p;
            }
            params[i] = next;
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("parameters after optimizer step".into()));
        }
        self.current_beta1 = beta1;
        self.current_lr = lr;
        Ok(())
    }

    /// `ema <- rate * ema + (1 - rate) * params`.
    pub fn ema_update(&mut self, params: &[f64], cfg: &MdlrcConfig) -> Result<()> {
        if params.len() != self.ema_params.len() {
            return Err(Error::shape("EMA update", self.ema_params.len(), params.len()));
        }
        let r = cfg.ema_rate;
        for (e, p) in self.ema_params.iter_mut().zip(params) {
            *e = r * *e + (1.0 - r) * p;
        }
        Ok(())
    }
}
