use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One evaluation point of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    /// Mean training loss since the previous row.
    pub train_loss: f64,
    pub sw_ema: f64,
    #[serde(default)]
    pub sw_raw: Option<f64>,
    pub beta1: f64,
    pub lr: f64,
    /// Curriculum mixing weight, absent when the curriculum is off.
    #[serde(default)]
    pub gamma: Option<f64>,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    /// Equality on every field except wall-clock time, compared bit for bit.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        let opt = |a: Option<f64>, b: Option<f64>| a.map(f64::to_bits) == b.map(f64::to_bits);
        self.iteration == other.iteration
            && self.train_loss.to_bits() == other.train_loss.to_bits()
            && self.sw_ema.to_bits() == other.sw_ema.to_bits()
            && opt(self.sw_raw, other.sw_raw)
            && self.beta1.to_bits() == other.beta1.to_bits()
            && self.lr.to_bits() == other.lr.to_bits()
            && opt(self.gamma, other.gamma)
    }

    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(self).expect("metrics row serializes")
    }
}

pub const CSV_HEADER: &str = "iteration,train_loss,sw_ema,sw_raw,beta1,lr,gamma,wall_clock_s";

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.train_loss,
            r.sw_ema,
            opt(r.sw_raw),
            r.beta1,
            r.lr,
            opt(r.gamma),
            r.wall_clock_s
        );
    }
    out
}

/// Parses a JSON-lines metrics log; blank lines are skipped.
pub fn parse_jsonl(text: &str, source_name: &str) -> Result<Vec<MetricsRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
