//! Dense feed-forward networks on batch-major matrices.
//!
//! Parameters of an [`MlpSpec`] live in one flat slice, layer by layer, each
//! layer storing its `fan_in x fan_out` weight matrix (row-major, so a layer
//! computes `x W + b`) followed by its bias vector.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use num_traits::Float;
use rand_distr::{Distribution, Uniform};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        if self == Activation::Tanh {
            for x in v {
                *x = Float::tanh(*x);
            }
        }
    }

    /// Multiplies `delta` by the derivative, given post-activation values.
    fn backprop(self, out: &[f64], delta: &mut [f64]) {
        if self == Activation::Tanh {
            for (d, a) in delta.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NnError {
    EmptySpec,
    ZeroWidth { layer: usize },
    Shape { what: &'static str, expected: usize, found: usize },
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::EmptySpec => write!(f, "network needs at least one layer"),
            NnError::ZeroWidth { layer } => write!(f, "layer width {layer} is zero"),
            NnError::Shape { what, expected, found } => write!(f, "{what}: expected {expected}, found {found}"),
        }
    }
}

impl core::error::Error for NnError {}

fn shape(what: &'static str, expected: usize, found: usize) -> Result<(), NnError> {
    if expected == found {
        Ok(())
    } else {
        Err(NnError::Shape { what, expected, found })
    }
}

/// Row-major `rows x cols` matrix; one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        shape("matrix data length", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], cols: usize) -> Result<Self, NnError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            shape("row width", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Matrix { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Columns side by side: `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix, NnError> {
        shape("hcat rows", self.rows, other.rows)?;
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix { rows: self.rows, cols, data })
    }

    /// Copy of columns `range`.
    pub fn columns(&self, range: Range<usize>) -> Matrix {
        let cols = range.len();
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Matrix { rows: self.rows, cols, data }
    }

    /// Element-wise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, NnError> {
        shape("hadamard rows", self.rows, other.rows)?;
        shape("hadamard cols", self.cols, other.cols)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Matrix { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for a in &mut self.data {
            *a *= alpha;
        }
    }
}

/// `c = beta * c + a * b` where `a` is `m x k` and `b` is `k x n`, each
/// given with explicit row/column strides so transposes cost nothing.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access of a, b and c in
    // bounds; c is a distinct mutable borrow so it cannot alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa as isize, csa as isize, b.as_ptr(), rsb as isize, csb as isize, beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self, NnError> {
        if widths.len() < 2 {
            return Err(NnError::EmptySpec);
        }
        if let Some(layer) = widths.iter().position(|&w| w == 0) {
            return Err(NnError::ZeroWidth { layer });
        }
        Ok(MlpSpec { widths, hidden, output })
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Weight and bias ranges of layer `l` within the flat parameter slice.
    pub fn layer_ranges(&self, l: usize) -> (Range<usize>, Range<usize>) {
        let start: usize = self.widths[..l + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (fi, fo) = (self.widths[l], self.widths[l + 1]);
        (start..start + fi * fo, start + fi * fo..start + fi * fo + fo)
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self, params: &[f64]) -> f64 {
        (0..self.n_layers()).map(|l| params[self.layer_ranges(l).0].iter().map(|w| w * w).sum::<f64>()).sum()
    }

    /// Adds `scale * w` to the gradient of every weight (biases untouched).
    pub fn add_weight_grad(&self, params: &[f64], scale: f64, grad: &mut [f64]) {
        for l in 0..self.n_layers() {
            let r = self.layer_ranges(l).0;
            for (g, w) in grad[r.clone()].iter_mut().zip(&params[r]) {
                *g += scale * w;
            }
        }
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }
}

/// Weights ~ U(-L, L) with `L = sqrt(6 / (fan_in + fan_out))`; biases 0.
pub fn glorot_uniform_init(spec: &MlpSpec, rng: &mut Rng) -> Vec<f64> {
    let mut params = vec![0.0; spec.n_params()];
    glorot_uniform_fill(spec, rng, &mut params);
    params
}

/// [`glorot_uniform_init`] into an existing slice.
pub fn glorot_uniform_fill(spec: &MlpSpec, rng: &mut Rng, params: &mut [f64]) {
    assert_eq!(params.len(), spec.n_params());
    for l in 0..spec.n_layers() {
        let (w, b) = spec.layer_ranges(l);
        let limit = Float::sqrt(6.0 / (spec.widths[l] + spec.widths[l + 1]) as f64);
        let dist = Uniform::new(-limit, limit).expect("finite positive limit");
        for p in &mut params[w] {
            *p = dist.sample(rng);
        }
        params[b].fill(0.0);
    }
}

/// Post-activation outputs of every layer, input first.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Matrix>,
}

impl Cache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds the input")
    }
}

fn check_params(spec: &MlpSpec, params: &[f64]) -> Result<(), NnError> {
    shape("parameter count", spec.n_params(), params.len())
}

pub fn forward(spec: &MlpSpec, params: &[f64], x: &Matrix) -> Result<Cache, NnError> {
    check_params(spec, params)?;
    shape("input width", spec.input_width(), x.cols)?;
    let mut acts = Vec::with_capacity(spec.widths.len());
    acts.push(x.clone());
    for l in 0..spec.n_layers() {
        let (wr, br) = spec.layer_ranges(l);
        let (fi, fo) = (spec.widths[l], spec.widths[l + 1]);
        let prev = &acts[l];
        let mut out = Matrix::zeros(prev.rows, fo);
        for i in 0..prev.rows {
            out.row_mut(i).copy_from_slice(&params[br.clone()]);
        }
        gemm(prev.rows, fi, fo, &prev.data, (fi, 1), &params[wr], (fo, 1), 1.0, &mut out.data);
        spec.activation(l).apply(&mut out.data);
        acts.push(out);
    }
    Ok(Cache { acts })
}

/// Output only.
pub fn predict(spec: &MlpSpec, params: &[f64], x: &Matrix) -> Result<Matrix, NnError> {
    let mut cache = forward(spec, params, x)?;
    Ok(cache.acts.pop().expect("cache holds the output"))
}

/// Reverse pass. Parameter gradients are **added** into `grad`; the input
/// gradient is returned.
pub fn backward(spec: &MlpSpec, params: &[f64], cache: &Cache, dy: &Matrix, grad: &mut [f64]) -> Result<Matrix, NnError> {
    check_params(spec, params)?;
    shape("gradient buffer", spec.n_params(), grad.len())?;
    shape("cache depth", spec.widths.len(), cache.acts.len())?;
    let out = cache.output();
    shape("upstream rows", out.rows, dy.rows)?;
    shape("upstream cols", out.cols, dy.cols)?;
    let rows = dy.rows;
    let mut delta = dy.clone();
    for l in (0..spec.n_layers()).rev() {
        let (wr, br) = spec.layer_ranges(l);
        let (fi, fo) = (spec.widths[l], spec.widths[l + 1]);
        spec.activation(l).backprop(&cache.acts[l + 1].data, &mut delta.data);
        let prev = &cache.acts[l];
        // dW += prev^T delta
        gemm(fi, rows, fo, &prev.data, (1, fi), &delta.data, (fo, 1), 1.0, &mut grad[wr.clone()]);
        let gb = &mut grad[br];
        for i in 0..rows {
            for (g, d) in gb.iter_mut().zip(delta.row(i)) {
                *g += d;
            }
        }
        // d(prev) = delta W^T
        let mut dprev = Matrix::zeros(rows, fi);
        gemm(rows, fo, fi, &delta.data, (fo, 1), &params[wr], (1, fo), 0.0, &mut dprev.data);
        delta = dprev;
    }
    Ok(delta)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        AdamState { step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params], lr, beta1: 0.9, beta2: 0.999, eps_hat: 1e-8 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
    shape("adam parameters", state.m.len(), params.len())?;
    shape("adam gradients", state.m.len(), grads.len())?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - Float::powi(state.beta1, t);
    let c2 = 1.0 - Float::powi(state.beta2, t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (Float::sqrt(v_hat) + state.eps_hat);
    }
    Ok(())
}
