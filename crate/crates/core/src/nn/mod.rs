//! Minimal dense neural-network primitives: tensors, activations, dense
//! layers, embedding tables, Adam, and a finite-difference gradient checker.
//!
//! Everything is `f64` and single-threaded on purpose — runs must be bitwise
//! reproducible from a seed, so there is no parallel reduction anywhere.
//! Backpropagation is manual: each forward records what its backward needs
//! (layer input and post-activation output) in a small cache struct.

pub mod adam;
pub mod archive;
pub mod gradcheck;

pub use adam::{Adam, AdamConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix. Vectors are `(len, 1)` tensors so that parameters,
/// gradients and optimizer moments all share one shape-checked type.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Entries drawn i.i.d. from `uniform(-scale, scale)`.
    pub fn random_uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::shape("ragged rows in tensor literal"));
        }
        Ok(Tensor { rows: n_rows, cols: n_cols, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `y = self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(format!(
                "matvec: {}x{} tensor applied to vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut y = vec![0.0; self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            *out = row.iter().zip(x).map(|(w, v)| w * v).sum();
        }
        Ok(y)
    }
}

/// Elementwise nonlinearities plus softmax (which is vector-valued and gets a
/// dedicated Jacobian path in [`DenseLayer::backward`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

impl Activation {
    pub fn apply_in_place(&self, z: &mut [f64]) {
        match self {
            Activation::Identity => {}
            Activation::Relu => {
                for v in z.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Sigmoid => {
                for v in z.iter_mut() {
                    *v = sigmoid(*v);
                }
            }
            Activation::Tanh => {
                for v in z.iter_mut() {
                    *v = v.tanh();
                }
            }
            Activation::Softmax => softmax_in_place(z),
        }
    }

    /// d(activation)/d(pre-activation) expressed through the *output* value.
    /// Only valid for the elementwise variants; softmax needs the full
    /// Jacobian and is handled where the upstream gradient is available.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Softmax => unreachable!("softmax derivative needs the whole vector"),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::config(format!("unknown activation '{other}'"))),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    // Split on sign so the exp argument is never large and positive.
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax; safe for large logits of either sign.
pub fn softmax_in_place(z: &mut [f64]) {
    if z.is_empty() {
        return;
    }
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Fully connected layer `activation(W·x + b)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Tensor, // out × in
    pub bias: Tensor,    // out × 1
    pub activation: Activation,
}

/// What a dense forward pass records for its backward pass: the input it saw
/// and the post-activation output it produced. (For every supported
/// activation the derivative is recoverable from the output alone.)
#[derive(Debug, Clone)]
pub struct DenseCache {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
}

impl DenseLayer {
    pub fn new<R: Rng>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        DenseLayer {
            weights: Tensor::random_uniform(out_dim, in_dim, init_scale, rng),
            bias: Tensor::zeros(out_dim, 1),
            activation,
        }
    }

    pub fn zeros_like(&self) -> Self {
        DenseLayer {
            weights: Tensor::zeros(self.weights.rows, self.weights.cols),
            bias: Tensor::zeros(self.bias.rows, 1),
            activation: self.activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.weights.matvec(input)?;
        for (v, b) in z.iter_mut().zip(self.bias.data()) {
            *v += b;
        }
        self.activation.apply_in_place(&mut z);
        Ok(z)
    }

    pub fn forward_cached(&self, input: Vec<f64>) -> Result<DenseCache> {
        let output = self.forward(&input)?;
        Ok(DenseCache { input, output })
    }

    /// Accumulates parameter gradients into `grad` (a zeros-shaped clone of
    /// this layer) and returns the gradient with respect to the input.
    ///
    /// `upstream` is dL/d(output). For elementwise activations this applies
    /// the pointwise derivative; for softmax it contracts the full Jacobian:
    /// dL/dz_i = y_i (u_i − Σ_j u_j y_j).
    pub fn backward(&self, cache: &DenseCache, upstream: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        debug_assert_eq!(upstream.len(), self.out_dim());
        debug_assert!(grad.weights.same_shape(&self.weights));
        let dz: Vec<f64> = match self.activation {
            Activation::Softmax => {
                let dot: f64 =
                    upstream.iter().zip(&cache.output).map(|(u, y)| u * y).sum();
                cache.output.iter().zip(upstream).map(|(y, u)| y * (u - dot)).collect()
            }
            act => cache
                .output
                .iter()
                .zip(upstream)
                .map(|(y, u)| u * act.derivative_from_output(*y))
                .collect(),
        };
        for (r, dz_r) in dz.iter().enumerate() {
            let grow = grad.weights.row_mut(r);
            for (g, x) in grow.iter_mut().zip(&cache.input) {
                *g += dz_r * x;
            }
            grad.bias.data_mut()[r] += dz_r;
        }
        let mut dinput = vec![0.0; self.in_dim()];
        for (r, dz_r) in dz.iter().enumerate() {
            let row = self.weights.row(r);
            for (di, w) in dinput.iter_mut().zip(row) {
                *di += dz_r * w;
            }
        }
        dinput
    }
}

/// One embedding vector per id; ids are dense `0..rows`.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub table: Tensor,
}

impl EmbeddingTable {
    pub fn new<R: Rng>(rows: usize, dim: usize, init_scale: f64, rng: &mut R) -> Self {
        EmbeddingTable { table: Tensor::random_uniform(rows, dim, init_scale, rng) }
    }

    pub fn zeros_like(&self) -> Self {
        EmbeddingTable { table: Tensor::zeros(self.table.rows(), self.table.cols()) }
    }

    pub fn len(&self) -> usize {
        self.table.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.table.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn lookup(&self, id: usize) -> Result<&[f64]> {
        if id >= self.table.rows() {
            return Err(Error::shape(format!(
                "embedding id {id} out of range (table has {} rows)",
                self.table.rows()
            )));
        }
        Ok(self.table.row(id))
    }
}

/// Objects whose learnable parameters can be enumerated in a fixed order.
/// The order is the contract shared by the optimizer, the gradient buffer,
/// the snapshot archive and the gradient checker.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;

    fn n_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.data().len()).sum()
    }
}
