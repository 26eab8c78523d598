//! How alike are the samples of independently trained models driven by the same noise?
//!
//! [`consistency`] averages, over `M` shared noise inputs, the PSNR between each model's
//! sample and the sample of model 1 (the fixed reference). [`sliced_wasserstein`] is the
//! distribution-level quality score used during training.

use std::io::{BufRead, Write};

use ndarray::{Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{generate, Denoiser, NoiseSchedule, NoiseStream};
use crate::{seed, Error, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;
/// Peak-to-peak range of data normalized to `[-1, 1]`.
pub const DATA_PEAK: f64 = 2.0;
pub const SW_PROJECTIONS: usize = 128;
pub const SW_SAMPLES: usize = 2048;

/// `10 log10(peak^2 / MSE(a, b))`, capped at [`PSNR_CAP`] when the inputs are equal.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("psnr", a.len(), b.len()));
    }
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Samples of `N` models on `M` shared noise inputs, stored `[N][M][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrid {
    data: Vec<f64>,
    n_models: usize,
    m: usize,
    dim: usize,
    pub model_tags: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridHeader {
    format: String,
    n_models: usize,
    m: usize,
    dim: usize,
    model_tags: Vec<String>,
    seed: u64,
    dtype: String,
}

const GRID_FORMAT: &str = "difflab-sample-grid/1";

impl SampleGrid {
    pub fn new(rows: Vec<Array2<f64>>, model_tags: Vec<String>, seed: u64) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidConfig("sample grid needs at least one model".into()))?;
        let (m, dim) = first.dim();
        if model_tags.len() != rows.len() {
            return Err(Error::shape("sample grid tags", rows.len(), model_tags.len()));
        }
        let mut data = Vec::with_capacity(rows.len() * m * dim);
        for r in &rows {
            if r.dim() != (m, dim) {
                return Err(Error::shape(
                    "sample grid rows",
                    format!("{m}x{dim}"),
                    format!("{}x{}", r.nrows(), r.ncols()),
                ));
            }
            data.extend(r.iter());
        }
        Ok(Self {
            data,
            n_models: rows.len(),
            m,
            dim,
            model_tags,
            seed,
        })
    }

    pub fn n_models(&self) -> usize {
        self.n_models
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Sample of model `i` on noise input `j`.
    pub fn sample(&self, i: usize, j: usize) -> &[f64] {
        let off = (i * self.m + j) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub fn model_samples(&self, i: usize) -> ArrayView2<'_, f64> {
        let off = i * self.m * self.dim;
        ArrayView2::from_shape((self.m, self.dim), &self.data[off..off + self.m * self.dim])
            .expect("grid layout")
    }

    /// Reorders models; used to check reference-invariance.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let rows = order
            .iter()
            .map(|&i| {
                if i >= self.n_models {
                    return Err(Error::OutOfRange {
                        what: "sample grid models",
                        index: i,
                        len: self.n_models,
                    });
                }
                Ok(self.model_samples(i).to_owned())
            })
            .collect::<Result<Vec<_>>>()?;
        let tags = order.iter().map(|&i| self.model_tags[i].clone()).collect();
        Self::new(rows, tags, self.seed)
    }

    /// One JSON header line, then `N * M * d` little-endian `f64`s.
    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = GridHeader {
            format: GRID_FORMAT.into(),
            n_models: self.n_models,
            m: self.m,
            dim: self.dim,
            model_tags: self.model_tags.clone(),
            seed: self.seed,
            dtype: "f64le".into(),
        };
        let line = serde_json::to_string(&header).map_err(std::io::Error::other)?;
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let parse = |message: String| Error::Parse {
            source_name: "sample grid".into(),
            line: 1,
            message,
        };
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| parse(e.to_string()))?;
        let header: GridHeader =
            serde_json::from_str(line.trim_end()).map_err(|e| parse(e.to_string()))?;
        if header.format != GRID_FORMAT || header.dtype != "f64le" {
            return Err(parse(format!("unsupported grid format {}", header.format)));
        }
        let count = header.n_models * header.m * header.dim;
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|e| parse(e.to_string()))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest).map_err(|e| parse(e.to_string()))?;
        if !rest.is_empty() {
            return Err(parse(format!("{} trailing bytes", rest.len())));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self {
            data,
            n_models: header.n_models,
            m: header.m,
            dim: header.dim,
            model_tags: header.model_tags,
            seed: header.seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyVariant {
    /// Every model compared against model 1.
    Reference,
    /// Every unordered pair of models compared.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// Mean PSNR in dB.
    pub c_value: f64,
    /// `pairwise[j][k]`: PSNR of comparison `k` on noise input `j`.
    pub pairwise: Vec<Vec<f64>>,
    pub peak: f64,
    pub variant: ConsistencyVariant,
    pub model_tags: Vec<String>,
}

fn check_grid(grid: &SampleGrid) -> Result<()> {
    if grid.n_models < 2 {
        return Err(Error::InvalidConfig(format!(
            "consistency needs at least 2 models, got {}",
            grid.n_models
        )));
    }
    if grid.m == 0 {
        return Err(Error::InvalidConfig("consistency needs at least one noise input".into()));
    }
    Ok(())
}

fn report(pairwise: Vec<Vec<f64>>, peak: f64, variant: ConsistencyVariant, grid: &SampleGrid) -> ConsistencyReport {
    let c_value = pairwise
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .sum::<f64>()
        / pairwise.len() as f64;
    ConsistencyReport {
        c_value,
        pairwise,
        peak,
        variant,
        model_tags: grid.model_tags.clone(),
    }
}

/// `C = (1/M) sum_j (1/(N-1)) sum_{i>=2} PSNR(q[j][1], q[j][i])`.
pub fn consistency(grid: &SampleGrid, peak: f64) -> Result<ConsistencyReport> {
    check_grid(grid)?;
    let pairwise = (0..grid.m)
        .map(|j| {
            (1..grid.n_models)
                .map(|i| psnr(grid.sample(0, j), grid.sample(i, j), peak))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(pairwise, peak, ConsistencyVariant::Reference, grid))
}

/// Symmetric variant averaging over every pair of models.
pub fn consistency_all_pairs(grid: &SampleGrid, peak: f64) -> Result<ConsistencyReport> {
    check_grid(grid)?;
    let pairwise = (0..grid.m)
        .map(|j| {
            let mut row = Vec::new();
            for a in 0..grid.n_models {
                for b in a + 1..grid.n_models {
                    row.push(psnr(grid.sample(a, j), grid.sample(b, j), peak)?);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report(pairwise, peak, ConsistencyVariant::AllPairs, grid))
}

/// Samples every model on the same `m` noise streams derived from `seed`.
pub fn shared_noise_run(
    models: &[&dyn Denoiser],
    tags: Vec<String>,
    sched: &NoiseSchedule,
    seed: u64,
    m: usize,
) -> Result<SampleGrid> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidConfig("shared-noise run needs at least one model".into()))?;
    let dim = first.data_dim();
    if let Some(bad) = models.iter().find(|md| md.data_dim() != dim) {
        return Err(Error::shape("shared-noise models", dim, bad.data_dim()));
    }
    let base = NoiseStream::seeded(seed, m);
    let rows = models
        .iter()
        .map(|model| generate(*model, sched, &mut base.clone(), m))
        .collect::<Result<Vec<_>>>()?;
    SampleGrid::new(rows, tags, seed)
}

/// Wasserstein-1 distance between two 1D empirical distributions with equal weights
/// per point. Sorts its inputs in place.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / na as f64;
    }
    // Integrate |F_a^{-1}(u) - F_b^{-1}(u)| over the merged quantile breakpoints.
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let next = next_a.min(next_b);
        total += (next - u) * (a[i] - b[j]).abs();
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Mean over `n_projections` seeded random unit directions of the 1D Wasserstein-1
/// distance between the projected point sets.
pub fn sliced_wasserstein(a: ArrayView2<f64>, b: ArrayView2<f64>, n_projections: usize, seed: u64) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape("sliced Wasserstein dimension", a.ncols(), b.ncols()));
    }
    if a.nrows() == 0 || b.nrows() == 0 || n_projections == 0 {
        return Err(Error::shape("sliced Wasserstein inputs", "non-empty", "empty"));
    }
    let d = a.ncols();
    let mut rng = seed::rng(seed, "sliced-wasserstein");
    let mut pa = vec![0.0; a.nrows()];
    let mut pb = vec![0.0; b.nrows()];
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= n);
        for (p, row) in pa.iter_mut().zip(a.rows()) {
            *p = row.iter().zip(&dir).map(|(x, w)| x * w).sum();
        }
        for (p, row) in pb.iter_mut().zip(b.rows()) {
            *p = row.iter().zip(&dir).map(|(x, w)| x * w).sum();
        }
        total += wasserstein_1d(&mut pa, &mut pb);
    }
    Ok(total / n_projections as f64)
}
