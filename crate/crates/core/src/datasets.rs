//! Seeded 2D toy datasets, normalized to `[-1, 1]^2`.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

pub const RING_MODES: usize = 8;
pub const RING_STD: f64 = 0.05;
pub const MOONS_NOISE: f64 = 0.05;
/// Ring points are scaled by this factor so the modes sit well inside the unit box.
pub const RING_SCALE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Eight Gaussian modes evenly spaced on the unit circle.
    Ring8,
    TwoMoons,
    /// Uniform on the dark cells of a 4x4 board.
    Checkerboard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_train: usize,
    pub n_eval: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Ring8,
            n_train: 20_000,
            n_eval: 2048,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Array2<f64>,
    pub eval: Array2<f64>,
}

/// Centres of the ring modes after normalization.
pub fn ring_centres() -> Vec<[f64; 2]> {
    (0..RING_MODES)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / RING_MODES as f64;
            [RING_SCALE * a.cos(), RING_SCALE * a.sin()]
        })
        .collect()
}

fn sample_points<R: Rng>(kind: DatasetKind, n: usize, rng: &mut R) -> Array2<f64> {
    let mut out = Array2::zeros((n, 2));
    for mut row in out.rows_mut() {
        let (x, y) = match kind {
            DatasetKind::Ring8 => {
                let noise = Normal::new(0.0, RING_STD).expect("valid std");
                let k = rng.random_range(0..RING_MODES);
                let a = 2.0 * PI * k as f64 / RING_MODES as f64;
                (
                    RING_SCALE * (a.cos() + noise.sample(rng)),
                    RING_SCALE * (a.sin() + noise.sample(rng)),
                )
            }
            DatasetKind::TwoMoons => {
                let noise = Normal::new(0.0, MOONS_NOISE).expect("valid std");
                let s = rng.random::<f64>() * PI;
                let (mx, my) = if rng.random::<bool>() {
                    (s.cos(), s.sin())
                } else {
                    (1.0 - s.cos(), 0.5 - s.sin())
                };
                // Raw moons span [-1, 2] x [-0.5, 1]; centre and shrink into the box.
                (
                    ((mx + noise.sample(rng)) - 0.5) / 1.75,
                    ((my + noise.sample(rng)) - 0.25) / 1.75,
                )
            }
            DatasetKind::Checkerboard => {
                let cell = rng.random_range(0..8usize);
                let r = cell / 2;
                let c = 2 * (cell % 2) + (r % 2);
                let x = -1.0 + 0.5 * (c as f64 + rng.random::<f64>());
                let y = -1.0 + 0.5 * (r as f64 + rng.random::<f64>());
                (x, y)
            }
        };
        row[0] = x.clamp(-1.0, 1.0);
        row[1] = y.clamp(-1.0, 1.0);
    }
    out
}

/// Train and eval sets from separate seed sub-streams.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.n_train == 0 || spec.n_eval == 0 {
        return Err(Error::InvalidConfig(
            "dataset sizes n_train and n_eval must be at least 1".into(),
        ));
    }
    let train = sample_points(spec.kind, spec.n_train, &mut seed::rng(spec.seed, "data-train"));
    let eval = sample_points(spec.kind, spec.n_eval, &mut seed::rng(spec.seed, "data-eval"));
    Ok(Dataset { train, eval })
}

/// `x,y` rows with a header line.
pub fn to_csv(points: &Array2<f64>) -> String {
    let mut s = String::from("x,y\n");
    for row in points.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}
