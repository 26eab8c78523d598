use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::clts::{CltsConfig, CurriculumMode};
use crate::datasets::DatasetSpec;
use crate::diffusion::{PredictionTarget, ScheduleKind};
use crate::mdlrc::MdlrcConfig;
use crate::models::DenoiserArch;
use crate::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub target: PredictionTarget,
}

impl Default for ModelSection {
    fn default() -> Self {
        let arch = DenoiserArch::default();
        Self {
            hidden: arch.hidden,
            time_embed_dim: arch.time_embed_dim,
            target: arch.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltsSection {
    pub enabled: bool,
    /// Defaults to `0.3 T`.
    pub mu: Option<f64>,
    /// Defaults to `T`.
    pub sigma: Option<f64>,
    /// Defaults to a quarter of the run.
    pub target_iteration: Option<u64>,
    pub mode: CurriculumMode,
}

impl Default for CltsSection {
    fn default() -> Self {
        Self {
            enabled: true,
            mu: None,
            sigma: None,
            target_iteration: None,
            mode: CurriculumMode::Mixture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub beta0: f64,
    pub beta2: f64,
    pub lr0: f64,
    pub beta_floor: f64,
    pub ema_rate: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub momentum_decay: bool,
    pub lr_compensation: bool,
    pub grad_clip: Option<f64>,
}

/// Base learning rate of the toy recipe.
pub const TOY_LR0: f64 = 1e-3;
/// EMA rate of the toy recipe, an averaging horizon of about 400 steps.
pub const TOY_EMA_RATE: f64 = 0.9975;

impl Default for OptimizerSection {
    fn default() -> Self {
        let d = MdlrcConfig::default();
        Self {
            beta0: d.beta0,
            beta2: d.beta2,
            lr0: TOY_LR0,
            beta_floor: d.beta_floor,
            ema_rate: TOY_EMA_RATE,
            eps: d.eps,
            weight_decay: d.weight_decay,
            momentum_decay: d.momentum_decay,
            lr_compensation: d.lr_compensation,
            grad_clip: d.grad_clip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub total_iterations: u64,
    pub batch_size: usize,
    /// Metrics cadence in iterations; 0 logs only the final iteration.
    pub eval_every: u64,
    /// Checkpoint cadence in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    pub global_seed: u64,
    /// Overrides the initialization stream derived from `global_seed`.
    pub init_seed: Option<u64>,
    pub eval_samples: usize,
    pub sw_projections: usize,
    /// Also score the raw (non-EMA) parameters at each evaluation.
    pub eval_raw: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            total_iterations: 20_000,
            batch_size: 128,
            eval_every: 1000,
            checkpoint_every: 0,
            global_seed: 0,
            init_seed: None,
            eval_samples: crate::consistency::SW_SAMPLES,
            sw_projections: crate::consistency::SW_PROJECTIONS,
            eval_raw: true,
        }
    }
}

/// A complete, versioned description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub clts: CltsSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub run: RunSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            dataset: DatasetSpec::default(),
            schedule: ScheduleSection::default(),
            model: ModelSection::default(),
            clts: CltsSection::default(),
            optimizer: OptimizerSection::default(),
            run: RunSection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Default recipe with every accelerator switched off: uniform timesteps and
    /// fixed-momentum Adam.
    pub fn baseline() -> Self {
        Self::default().with_accelerators(false)
    }

    /// Default recipe with the curriculum and momentum decay with compensation enabled.
    pub fn optimized() -> Self {
        Self::default().with_accelerators(true)
    }

    pub fn with_accelerators(mut self, on: bool) -> Self {
        self.clts.enabled = on;
        self.optimizer.momentum_decay = on;
        self.optimizer.lr_compensation = on;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: "experiment config".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn arch(&self) -> DenoiserArch {
        DenoiserArch {
            data_dim: 2,
            hidden: self.model.hidden.clone(),
            time_embed_dim: self.model.time_embed_dim,
            target: self.model.target,
        }
    }

    pub fn clts_config(&self) -> CltsConfig {
        let steps = self.schedule.steps;
        let mut c = CltsConfig::new(
            steps,
            self.clts
                .target_iteration
                .unwrap_or((self.run.total_iterations / 4).max(1)),
        );
        if let Some(mu) = self.clts.mu {
            c.mu = mu;
        }
        if let Some(sigma) = self.clts.sigma {
            c.sigma = sigma;
        }
        c
    }

    pub fn mdlrc_config(&self) -> MdlrcConfig {
        let o = &self.optimizer;
        MdlrcConfig {
            beta0: o.beta0,
            beta2: o.beta2,
            lr0: o.lr0,
            total_iterations: self.run.total_iterations,
            beta_floor: o.beta_floor,
            ema_rate: o.ema_rate,
            eps: o.eps,
            weight_decay: o.weight_decay,
            momentum_decay: o.momentum_decay,
            lr_compensation: o.lr_compensation,
            grad_clip: o.grad_clip,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.schedule.steps < 2 {
            return Err(Error::InvalidConfig("schedule.steps must be at least 2".into()));
        }
        if self.dataset.n_train == 0 || self.dataset.n_eval == 0 {
            return Err(Error::InvalidConfig("dataset sizes must be positive".into()));
        }
        if self.model.time_embed_dim % 2 != 0 || self.model.hidden.contains(&0) {
            return Err(Error::InvalidConfig(
                "model.time_embed_dim must be even and hidden widths positive".into(),
            ));
        }
        let r = &self.run;
        if r.total_iterations == 0 || r.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "run.total_iterations and run.batch_size must be positive".into(),
            ));
        }
        if r.eval_samples == 0 || r.sw_projections == 0 {
            return Err(Error::InvalidConfig(
                "run.eval_samples and run.sw_projections must be positive".into(),
            ));
        }
        if self.clts.enabled {
            self.clts_config().validate()?;
        }
        self.mdlrc_config().validate()
    }

    /// True when the two configs agree on everything except the accelerator switches.
    pub fn differs_only_in_accelerators(&self, other: &Self) -> bool {
        let mut a = self.clone().with_accelerators(false);
        let mut b = other.clone().with_accelerators(false);
        a.clts.mode = CurriculumMode::Mixture;
        b.clts.mode = CurriculumMode::Mixture;
        a == b
    }
}

/// Applies `section.key=value` overrides to a JSON config document. Values are parsed
/// as JSON when possible and taken as strings otherwise.
pub fn apply_overrides(doc: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override {item:?} is not of the form key=value"))
        })?;
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut cursor = &mut *doc;
        let keys: Vec<&str> = path.split('.').collect();
        for (i, key) in keys.iter().enumerate() {
            let obj = cursor.as_object_mut().ok_or_else(|| {
                Error::InvalidConfig(format!("override path {path:?} crosses a non-object"))
            })?;
            if i + 1 == keys.len() {
                obj.insert((*key).to_string(), value.clone());
                break;
            }
            cursor = obj
                .entry((*key).to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
    }
    Ok(())
}

/// Parses a config document after applying overrides.
pub fn config_with_overrides(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        source_name: "experiment config".into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    apply_overrides(&mut doc, overrides)?;
    ExperimentConfig::from_json(&doc.to_string())
}
