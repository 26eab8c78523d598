use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::{ParameterLayout, ParameterVector};
use crate::{seed, Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Fully connected network with SiLU hidden activations and a linear output layer.
///
/// Layer `i` stores `W_i` as `(out, in)` row-major followed by `b_i`.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    layout: ParameterLayout,
}

/// Activations saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(prefix: &str, sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "an MLP needs at least two positive layer sizes, got {sizes:?}"
            )));
        }
        let mut layout = ParameterLayout::new();
        for (i, w) in sizes.windows(2).enumerate() {
            layout.push(format!("{prefix}{i}.weight"), vec![w[1], w[0]]);
            layout.push(format!("{prefix}{i}.bias"), vec![w[1]]);
        }
        Ok(Self { sizes, layout })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn layout(&self) -> &ParameterLayout {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.len()
    }

    fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub(crate) fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::shape("parameter vector", self.num_params(), params.len()));
        }
        Ok(())
    }

    /// Fan-in scaled uniform initialization `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_params(&self, seed: u64) -> ParameterVector {
        let mut rng = seed::rng(seed, "mlp-init");
        let mut values = Vec::with_capacity(self.num_params());
        for w in self.sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                values.push(rng.random_range(-bound..bound));
            }
        }
        ParameterVector::new(values, self.layout.clone()).expect("finite initialization")
    }

    fn weight<'a>(&self, params: &'a [f64], layer: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let w = &self.layout.blocks()[2 * layer];
        let b = &self.layout.blocks()[2 * layer + 1];
        let wv = ArrayView2::from_shape((w.shape[0], w.shape[1]), &params[w.range()])
            .expect("weight block shape");
        (wv, &params[b.range()])
    }

    fn affine(&self, params: &[f64], layer: usize, x: ArrayView2<f64>) -> Array2<f64> {
        let (w, b) = self.weight(params, layer);
        let mut out = Array2::zeros((x.nrows(), w.nrows()));
        general_mat_mul(1.0, &x, &w.t(), 0.0, &mut out);
        for mut row in out.rows_mut() {
            for (o, bi) in row.iter_mut().zip(b) {
                *o += bi;
            }
        }
        out
    }

    pub fn forward(&self, params: &[f64], x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = self.affine(params, 0, x);
        for layer in 1..self.n_layers() {
            h.mapv_inplace(silu);
            h = self.affine(params, layer, h.view());
        }
        h
    }

    pub fn forward_cached(&self, params: &[f64], x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let n = self.n_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        inputs.push(x.to_owned());
        let mut h = self.affine(params, 0, x);
        for layer in 1..n {
            let act = h.mapv(silu);
            pre.push(h);
            h = self.affine(params, layer, act.view());
            inputs.push(act);
        }
        (h, MlpCache { inputs, pre })
    }

    /// Accumulates the parameter gradient of `<d_out, output>` into `grad` (overwriting
    /// it) and, when `want_input` is set, returns the gradient with respect to the input.
    pub fn backward(
        &self,
        params: &[f64],
        cache: &MlpCache,
        d_out: Array2<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        let mut delta = d_out;
        for layer in (0..self.n_layers()).rev() {
            let wb = &self.layout.blocks()[2 * layer];
            let bb = &self.layout.blocks()[2 * layer + 1];
            let x = &cache.inputs[layer];
            let mut gw =
                ArrayViewMut2::from_shape((wb.shape[0], wb.shape[1]), &mut grad[wb.range()])
                    .expect("weight block shape");
            general_mat_mul(1.0, &delta.t(), x, 0.0, &mut gw);
            let gb = &mut grad[bb.range()];
            gb.fill(0.0);
            for row in delta.axis_iter(Axis(0)) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if layer == 0 && !want_input {
                return None;
            }
            let (w, _) = self.weight(params, layer);
            let mut dx = Array2::zeros((delta.nrows(), w.ncols()));
            general_mat_mul(1.0, &delta, &w, 0.0, &mut dx);
            if layer > 0 {
                let pre = &cache.pre[layer - 1];
                ndarray::Zip::from(&mut dx)
                    .and(pre)
                    .for_each(|d, &z| *d *= silu_grad(z));
            }
            delta = dx;
        }
        Some(delta)
    }
}
