use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::mdlrc::OptimizerState;
use crate::models::{DenoiserArch, ParameterLayout};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "difflab-checkpoint/1";

/// Serde adapter storing `Vec<f64>` as base64 of little-endian bytes, so values survive
/// a round trip bit for bit.
pub(crate) mod f64_base64 {
    use super::*;
    use serde::{de, Deserializer, Serializer};

    pub fn encode(values: &[f64]) -> String {
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        STANDARD.encode(bytes)
    }

    pub fn decode(text: &str) -> std::result::Result<Vec<f64>, String> {
        let bytes = STANDARD.decode(text).map_err(|e| e.to_string())?;
        if bytes.len() % 8 != 0 {
            return Err(format!("{} bytes is not a whole number of f64 values", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&encode(values))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<f64>, D::Error> {
        let text = String::deserialize(d)?;
        decode(&text).map_err(de::Error::custom)
    }
}

/// Scalars that must round-trip exactly are stored by bit pattern.
mod f64_bits {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:016x}", v.to_bits()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let text = String::deserialize(d)?;
        u64::from_str_radix(&text, 16)
            .map(f64::from_bits)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    #[serde(with = "f64_base64")]
    pub m: Vec<f64>,
    #[serde(with = "f64_base64")]
    pub v: Vec<f64>,
    pub step: u64,
    #[serde(with = "f64_bits")]
    pub beta1_product: f64,
    #[serde(with = "f64_bits")]
    pub current_beta1: f64,
    #[serde(with = "f64_bits")]
    pub current_lr: f64,
    #[serde(with = "f64_base64")]
    pub ema_params: Vec<f64>,
}

impl From<&OptimizerState> for OptimizerSnapshot {
    fn from(s: &OptimizerState) -> Self {
        Self {
            m: s.m.clone(),
            v: s.v.clone(),
            step: s.step,
            beta1_product: s.beta1_product,
            current_beta1: s.current_beta1,
            current_lr: s.current_lr,
            ema_params: s.ema_params.clone(),
        }
    }
}

impl From<OptimizerSnapshot> for OptimizerState {
    fn from(s: OptimizerSnapshot) -> Self {
        Self {
            m: s.m,
            v: s.v,
            step: s.step,
            beta1_product: s.beta1_product,
            current_beta1: s.current_beta1,
            current_lr: s.current_lr,
            ema_params: s.ema_params,
        }
    }
}

/// ChaCha word positions of the training streams, as decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPositions {
    pub data: String,
    pub timesteps: String,
    pub noise: String,
}

/// Everything needed to resume a run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ExperimentConfig,
    /// Completed training iterations.
    pub iteration: u64,
    pub arch: DenoiserArch,
    pub layout: ParameterLayout,
    #[serde(with = "f64_base64")]
    pub params: Vec<f64>,
    pub optimizer: OptimizerSnapshot,
    pub rng: RngPositions,
    #[serde(with = "f64_bits")]
    pub loss_window_sum: f64,
    pub loss_window_count: u64,
}

impl Checkpoint {
    pub fn ema_params(&self) -> &[f64] {
        &self.optimizer.ema_params
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: "checkpoint".into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse {
                source_name: "checkpoint".into(),
                line: 1,
                message: format!("unsupported checkpoint format {:?}", c.format),
            });
        }
        let n = c.layout.len();
        for (name, len) in [
            ("checkpoint params", c.params.len()),
            ("checkpoint first moment", c.optimizer.m.len()),
            ("checkpoint second moment", c.optimizer.v.len()),
            ("checkpoint EMA", c.optimizer.ema_params.len()),
        ] {
            if len != n {
                return Err(Error::shape(name, n, len));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
