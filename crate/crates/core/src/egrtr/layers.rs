//! Dense building blocks on row-major `rows × features` matrices.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

/// Affine map `x·Wᵀ + b` with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight.t()) + &self.bias
    }

    /// Returns the input gradient and accumulates parameter gradients into `grad`.
    pub(crate) fn backward(&self, x: ArrayView2<f64>, d_out: ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &d_out.t().dot(&x);
        grad.bias += &d_out.sum_axis(Axis(0));
        d_out.dot(&self.weight)
    }
}

/// Two-layer perceptron with a GELU between the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

pub(crate) struct MlpCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        Self {
            hidden: Linear::zeros(inputs, hidden),
            out: Linear::zeros(hidden, outputs),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let pre = self.hidden.forward(x);
        let act = pre.mapv(gelu);
        let out = self.out.forward(act.view());
        (out, MlpCache { pre, act })
    }

    pub(crate) fn backward(&self, x: ArrayView2<f64>, cache: &MlpCache, d_out: ArrayView2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let d_act = self.out.backward(cache.act.view(), d_out, &mut grad.out);
        let d_pre = d_act * cache.pre.mapv(gelu_grad);
        self.hidden.backward(x, d_pre.view(), &mut grad.hidden)
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl Attention {
    pub fn zeros(d_model: usize) -> Self {
        Self {
            query: Linear::zeros(d_model, d_model),
            key: Linear::zeros(d_model, d_model),
            value: Linear::zeros(d_model, d_model),
            output: Linear::zeros(d_model, d_model),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>, memory: ArrayView2<f64>, heads: usize) -> Array2<f64> {
        let q = self.query.forward(x);
        let k = self.key.forward(memory);
        let v = self.value.forward(memory);
        let d_model = q.ncols();
        let dk = d_model / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut concat = Array2::zeros((x.nrows(), d_model));
        for h in 0..heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            softmax_rows(&mut scores);
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        }
        self.output.forward(concat.view())
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row standardization without learned affine parameters.
pub fn layer_norm(x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

pub fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}
