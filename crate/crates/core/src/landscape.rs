//! Loss-landscape probes over flat parameter vectors.
//!
//! Everything here consumes a [`GradientOracle`] with its evaluation batch already
//! bound, so curves, surfaces and spectra are deterministic functions of the
//! parameters they are given.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::{DiffusionBatch, NoiseSchedule};
use crate::models::{GradientOracle, ParameterLayout};
use crate::{seed, Error, Result};

/// Size of the fixed evaluation batch used for landscape probes.
pub const LANDSCAPE_BATCH: usize = 4096;
/// Off-diagonal magnitude below which Lanczos stops early.
pub const BREAKDOWN_TOL: f64 = 1e-12;

/// Which timesteps a fixed diffusion evaluation batch draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum TimestepFilter {
    #[default]
    All,
    Fixed { t: usize },
    /// Inclusive range.
    Range { lo: usize, hi: usize },
}

impl TimestepFilter {
    fn bounds(&self, steps: usize) -> Result<(usize, usize)> {
        let (lo, hi) = match *self {
            TimestepFilter::All => (0, steps - 1),
            TimestepFilter::Fixed { t } => (t, t),
            TimestepFilter::Range { lo, hi } => (lo, hi),
        };
        if lo > hi || hi >= steps {
            return Err(Error::InvalidConfig(format!(
                "timestep filter {lo}..={hi} does not fit a {steps}-step schedule"
            )));
        }
        Ok((lo, hi))
    }
}

/// A seeded evaluation batch: rows drawn with replacement from `data`, timesteps uniform
/// over the filter, fresh standard normal noise.
pub fn fixed_batch(
    sched: &NoiseSchedule,
    data: &Array2<f64>,
    filter: TimestepFilter,
    size: usize,
    seed: u64,
) -> Result<DiffusionBatch> {
    if data.nrows() == 0 || size == 0 {
        return Err(Error::shape("landscape batch", "non-empty", "empty"));
    }
    let (lo, hi) = filter.bounds(sched.len())?;
    let mut rng = seed::rng(seed, "landscape-batch");
    let d = data.ncols();
    let mut x0 = Array2::zeros((size, d));
    let mut t = Vec::with_capacity(size);
    for mut row in x0.rows_mut() {
        let idx = rng.random_range(0..data.nrows());
        row.assign(&data.row(idx));
        t.push(rng.random_range(lo..=hi));
    }
    let eps = Array2::from_shape_simple_fn((size, d), || StandardNormal.sample(&mut rng));
    DiffusionBatch::new(sched, x0, t, eps)
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::shape(context, expected, actual));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub losses: Vec<f64>,
    pub timestep_filter: Option<TimestepFilter>,
}

impl InterpolationCurve {
    /// Mean of `|L[i-1] - 2 L[i] + L[i+1]|`; a roughness score for the curve.
    pub fn mean_abs_second_difference(&self) -> f64 {
        mean_abs_second_difference(&self.losses)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,loss\n");
        for (a, l) in self.alphas.iter().zip(&self.losses) {
            s.push_str(&format!("{a},{l}\n"));
        }
        s
    }
}

pub fn mean_abs_second_difference(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 0.0;
    }
    let total: f64 = values
        .windows(3)
        .map(|w| (w[0] - 2.0 * w[1] + w[2]).abs())
        .sum();
    total / (values.len() - 2) as f64
}

/// `n` evenly spaced points on `[0, 1]`, both ends included.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Loss along `alpha * theta_a + (1 - alpha) * theta_b`.
pub fn interpolate_1d<O: GradientOracle + ?Sized>(
    oracle: &O,
    theta_a: &[f64],
    theta_b: &[f64],
    alphas: &[f64],
) -> Result<InterpolationCurve> {
    check_len("interpolation anchors", theta_a.len(), theta_b.len())?;
    check_len("interpolation parameters", oracle.num_params(), theta_a.len())?;
    let mut theta = vec![0.0; theta_a.len()];
    let mut losses = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        for ((t, a), b) in theta.iter_mut().zip(theta_a).zip(theta_b) {
            *t = alpha * a + (1.0 - alpha) * b;
        }
        losses.push(oracle.loss(&theta)?);
    }
    Ok(InterpolationCurve {
        alphas: alphas.to_vec(),
        losses,
        timestep_filter: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DirectionNormalization {
    None,
    /// Each parameter block rescaled to the norm of the anchor's block.
    #[default]
    Layerwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub values: Vec<f64>,
    pub normalization: DirectionNormalization,
}

impl Direction {
    /// The displacement `to - from`, unnormalized.
    pub fn between(from: &[f64], to: &[f64]) -> Result<Self> {
        check_len("direction endpoints", from.len(), to.len())?;
        Ok(Self {
            values: to.iter().zip(from).map(|(b, a)| b - a).collect(),
            normalization: DirectionNormalization::None,
        })
    }

    fn normalize(&mut self, layout: &ParameterLayout, anchor: &[f64]) {
        if self.normalization != DirectionNormalization::Layerwise {
            return;
        }
        for block in layout.blocks() {
            let r = block.range();
            let dn = norm(&self.values[r.clone()]);
            let an = norm(&anchor[r.clone()]);
            let scale = if dn > 0.0 { an / dn } else { 0.0 };
            for v in &mut self.values[r] {
                *v *= scale;
            }
        }
    }
}

/// Two seeded Gaussian directions; the second is made orthogonal to the first before
/// the normalization is applied.
pub fn random_direction_pair(
    layout: &ParameterLayout,
    anchor: &[f64],
    normalization: DirectionNormalization,
    seed: u64,
) -> Result<(Direction, Direction)> {
    check_len("direction anchor", layout.len(), anchor.len())?;
    let n = anchor.len();
    let mut rng = seed::rng(seed, "landscape-directions");
    let d1: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut d2: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let proj = dot(&d1, &d2) / dot(&d1, &d1);
    for (b, a) in d2.iter_mut().zip(&d1) {
        *b -= proj * a;
    }
    let mut out = [d1, d2].map(|values| Direction {
        values,
        normalization,
    });
    for d in &mut out {
        d.normalize(layout, anchor);
    }
    let [a, b] = out;
    Ok((a, b))
}

/// Losses on the grid `theta + u d1 + v d2`; `losses[i][j]` is at `(us[i], vs[j])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGrid {
    pub us: Vec<f64>,
    pub vs: Vec<f64>,
    pub losses: Vec<Vec<f64>>,
    pub normalization: DirectionNormalization,
    pub timestep_filter: Option<TimestepFilter>,
}

impl LossGrid {
    pub fn value_range(&self) -> f64 {
        let flat = self.losses.iter().flatten();
        let max = flat.clone().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let min = flat.fold(f64::INFINITY, |a, &b| a.min(b));
        max - min
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("u,v,loss\n");
        for (i, u) in self.us.iter().enumerate() {
            for (j, v) in self.vs.iter().enumerate() {
                s.push_str(&format!("{u},{v},{}\n", self.losses[i][j]));
            }
        }
        s
    }
}

pub fn surface_2d<O: GradientOracle + ?Sized>(
    oracle: &O,
    theta: &[f64],
    d1: &Direction,
    d2: &Direction,
    us: &[f64],
    vs: &[f64],
) -> Result<LossGrid> {
    check_len("surface parameters", oracle.num_params(), theta.len())?;
    check_len("surface direction 1", theta.len(), d1.values.len())?;
    check_len("surface direction 2", theta.len(), d2.values.len())?;
    let mut point = vec![0.0; theta.len()];
    let mut losses = Vec::with_capacity(us.len());
    for &u in us {
        let mut row = Vec::with_capacity(vs.len());
        for &v in vs {
            for (i, p) in point.iter_mut().enumerate() {
                *p = theta[i] + u * d1.values[i] + v * d2.values[i];
            }
            row.push(oracle.loss(&point)?);
        }
        losses.push(row);
    }
    Ok(LossGrid {
        us: us.to_vec(),
        vs: vs.to_vec(),
        losses,
        normalization: d1.normalization,
        timestep_filter: None,
    })
}

/// Hessian-vector product by central differences of gradients along `vec`:
/// `(g(theta + r u) - g(theta - r u)) / (2 r) * |vec|`, `u = vec / |vec|`,
/// `r = 1e-4 (1 + |theta|)`.
pub fn hvp<O: GradientOracle + ?Sized>(oracle: &O, theta: &[f64], vec: &[f64]) -> Result<Vec<f64>> {
    check_len("hvp direction", theta.len(), vec.len())?;
    let vn = norm(vec);
    if vn == 0.0 {
        return Err(Error::InvalidConfig("hvp direction must be nonzero".into()));
    }
    let r = 1e-4 * (1.0 + norm(theta));
    let step = r / vn;
    let plus: Vec<f64> = theta.iter().zip(vec).map(|(t, v)| t + step * v).collect();
    let minus: Vec<f64> = theta.iter().zip(vec).map(|(t, v)| t - step * v).collect();
    let (_, gp) = oracle.loss_and_grad(&plus)?;
    let (_, gm) = oracle.loss_and_grad(&minus)?;
    let scale = vn / (2.0 * r);
    let out: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) * scale).collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("Hessian-vector product with r = {r:e}")));
    }
    Ok(out)
}

/// Ritz values and quadrature weights of a Lanczos run, with summary moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Sorted descending.
    pub ritz_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub lambda1: f64,
    pub mean_mu: f64,
    pub var_sigma2: f64,
    pub iterations: usize,
    pub probe_seed: u64,
    /// Lanczos stopped before `iterations` steps because the Krylov space was exhausted.
    pub breakdown: bool,
}

impl SpectrumEstimate {
    fn from_nodes(mut nodes: Vec<(f64, f64)>, iterations: usize, probe_seed: u64, breakdown: bool) -> Self {
        nodes.sort_by(|a, b| b.0.total_cmp(&a.0));
        let total: f64 = nodes.iter().map(|n| n.1).sum();
        let (ritz_values, weights): (Vec<f64>, Vec<f64>) =
            nodes.into_iter().map(|(l, w)| (l, w / total)).unzip();
        let mean_mu = dot(&ritz_values, &weights);
        let var_sigma2 = ritz_values
            .iter()
            .zip(&weights)
            .map(|(l, w)| w * (l - mean_mu) * (l - mean_mu))
            .sum();
        Self {
            lambda1: ritz_values[0],
            ritz_values,
            weights,
            mean_mu,
            var_sigma2,
            iterations,
            probe_seed,
            breakdown,
        }
    }

    /// Averages several single-probe estimates into one spectral density estimate.
    pub fn combine(estimates: &[SpectrumEstimate]) -> Result<Self> {
        let first = estimates
            .first()
            .ok_or_else(|| Error::InvalidConfig("no spectrum estimates to combine".into()))?;
        let k = estimates.len() as f64;
        let nodes = estimates
            .iter()
            .flat_map(|e| e.ritz_values.iter().zip(&e.weights).map(move |(&l, &w)| (l, w / k)))
            .collect();
        Ok(Self::from_nodes(
            nodes,
            first.iterations,
            first.probe_seed,
            estimates.iter().any(|e| e.breakdown),
        ))
    }
}

/// `m`-step Lanczos with full reorthogonalization on a symmetric operator, started from
/// a seeded Gaussian unit vector.
pub fn lanczos<F>(mut matvec: F, dim: usize, m: usize, probe_seed: u64) -> Result<SpectrumEstimate>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if m == 0 || m > dim {
        return Err(Error::InvalidConfig(format!(
            "Lanczos iterations must lie in 1..={dim}, got {m}"
        )));
    }
    let mut rng = seed::rng(probe_seed, "lanczos-probe");
    let mut q: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let qn = norm(&q);
    q.iter_mut().for_each(|x| *x /= qn);

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut breakdown = false;
    basis.push(q);
    for j in 0..m {
        let mut w = matvec(&basis[j])?;
        check_len("Lanczos matvec", dim, w.len())?;
        let a = dot(&basis[j], &w);
        alpha.push(a);
        for (wi, qi) in w.iter_mut().zip(&basis[j]) {
            *wi -= a * qi;
        }
        if j > 0 {
            let b = beta[j - 1];
            for (wi, qi) in w.iter_mut().zip(&basis[j - 1]) {
                *wi -= b * qi;
            }
        }
        // Two passes of classical Gram-Schmidt against the whole basis.
        for _ in 0..2 {
            for qk in &basis {
                let c = dot(qk, &w);
                for (wi, qi) in w.iter_mut().zip(qk) {
                    *wi -= c * qi;
                }
            }
        }
        if j + 1 == m {
            break;
        }
        let b = norm(&w);
        if b < BREAKDOWN_TOL {
            breakdown = true;
            break;
        }
        beta.push(b);
        w.iter_mut().for_each(|x| *x /= b);
        basis.push(w);
    }

    let k = alpha.len();
    let tri = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(tri);
    let nodes = (0..k)
        .map(|i| {
            let c = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], c * c)
        })
        .collect();
    Ok(SpectrumEstimate::from_nodes(nodes, m, probe_seed, breakdown))
}

/// Hessian spectrum estimate of `oracle` at `theta` by Lanczos on finite-difference HVPs.
pub fn lanczos_spectrum<O: GradientOracle + ?Sized>(
    oracle: &O,
    theta: &[f64],
    m: usize,
    probe_seed: u64,
) -> Result<SpectrumEstimate> {
    check_len("Lanczos parameters", oracle.num_params(), theta.len())?;
    lanczos(|v| hvp(oracle, theta, v), theta.len(), m, probe_seed)
}
