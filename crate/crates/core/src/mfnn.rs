//! Multi-fidelity network.
//!
//! A LEAP block injects the topology vector in a latent space whose width is
//! the number of lines:
//!
//! ```text
//! leap(x, tau) = D(E(x)) + d(e(E(x) * tau))
//! ```
//!
//! The composite network has a low-fidelity LEAP block trained against DC
//! labels and two high-fidelity correctors that read `(x, y_low)`: a purely
//! linear net `f_l` and a tanh LEAP block `f_nl` (the only one of the two
//! that sees `tau`). The high-fidelity output is
//!
//! ```text
//! y_high = a_L * y_low + eps * (tanh(a_1) * f_l + tanh(a_2) * f_nl)
//! ```
//!
//! with `eps = 0.1`. All weights, biases and the three scalars live in one
//! flat vector: low block, linear net, nonlinear block, then `[a_L, a_1, a_2]`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use num_traits::Float;
use rand::seq::SliceRandom;

use crate::grid::{NetworkCase, TopologyVector};
use crate::nn::{self, Activation, AdamState, Matrix, MlpSpec, NnError};
use crate::rng;
use crate::scenario::{CaseRef, Dataset, NormStats};

pub const EPSILON: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum MfnnError {
    Nn(NnError),
    Config(&'static str),
    EmptyBatch,
    EmptyTraining,
    CaseMismatch { expected: String, found: String },
    Diverged { epoch: usize, step: usize, loss: f64 },
}

impl fmt::Display for MfnnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MfnnError::Nn(e) => write!(f, "{e}"),
            MfnnError::Config(m) => write!(f, "invalid training configuration: {m}"),
            MfnnError::EmptyBatch => write!(f, "loss needs at least one non-empty batch"),
            MfnnError::EmptyTraining => write!(f, "training split is empty"),
            MfnnError::CaseMismatch { expected, found } => {
                write!(f, "model was trained for case {expected}, got {found}")
            }
            MfnnError::Diverged { epoch, step, loss } => {
                write!(f, "training diverged at epoch {epoch}, step {step}: loss = {loss}")
            }
        }
    }
}

impl core::error::Error for MfnnError {}

impl From<NnError> for MfnnError {
    fn from(e: NnError) -> Self {
        MfnnError::Nn(e)
    }
}

/// The four sub-networks of one LEAP block. Parameters are laid out
/// `E | e | d | D`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LeapSpec {
    pub encoder: MlpSpec,
    pub mix_encoder: MlpSpec,
    pub mix_decoder: MlpSpec,
    pub decoder: MlpSpec,
}

impl LeapSpec {
    /// `depth` hidden layers of `width` on each side of the latent space,
    /// split evenly between encoder and decoder.
    pub fn new(input: usize, latent: usize, output: usize, width: usize, depth: usize) -> Result<Self, NnError> {
        let enc_depth = (depth / 2).max(1);
        let dec_depth = (depth - depth / 2).max(1);
        let tanh = Activation::Tanh;
        let mut enc = vec![input];
        enc.extend(core::iter::repeat_n(width, enc_depth));
        enc.push(latent);
        let mut dec = vec![latent];
        dec.extend(core::iter::repeat_n(width, dec_depth));
        dec.push(output);
        let mut mix_enc = vec![latent];
        mix_enc.extend(core::iter::repeat_n(width, enc_depth));
        let mut mix_dec = vec![width];
        mix_dec.extend(core::iter::repeat_n(width, dec_depth - 1));
        mix_dec.push(output);
        Ok(LeapSpec {
            encoder: MlpSpec::new(enc, tanh, tanh)?,
            mix_encoder: MlpSpec::new(mix_enc, tanh, tanh)?,
            mix_decoder: MlpSpec::new(mix_dec, tanh, Activation::Identity)?,
            decoder: MlpSpec::new(dec, tanh, Activation::Identity)?,
        })
    }

    pub fn latent(&self) -> usize {
        self.encoder.output_width()
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.decoder.output_width()
    }

    fn parts(&self) -> [&MlpSpec; 4] {
        [&self.encoder, &self.mix_encoder, &self.mix_decoder, &self.decoder]
    }

    fn ranges(&self) -> [Range<usize>; 4] {
        let mut start = 0;
        self.parts().map(|s| {
            let r = start..start + s.n_params();
            start = r.end;
            r
        })
    }

    pub fn n_params(&self) -> usize {
        self.parts().iter().map(|s| s.n_params()).sum()
    }

    fn validate(&self) -> Result<(), MfnnError> {
        let ok = self.decoder.input_width() == self.latent()
            && self.mix_encoder.input_width() == self.latent()
            && self.mix_decoder.input_width() == self.mix_encoder.output_width()
            && self.mix_decoder.output_width() == self.decoder.output_width();
        if ok {
            Ok(())
        } else {
            Err(MfnnError::Config("LEAP sub-network widths do not chain"))
        }
    }

    fn weight_sq_norm(&self, p: &[f64]) -> f64 {
        self.parts().iter().zip(self.ranges()).map(|(s, r)| s.weight_sq_norm(&p[r])).sum()
    }

    fn add_weight_grad(&self, p: &[f64], scale: f64, g: &mut [f64]) {
        for (s, r) in self.parts().iter().zip(self.ranges()) {
            s.add_weight_grad(&p[r.clone()], scale, &mut g[r]);
        }
    }

    fn init(&self, rng: &mut rng::Rng, p: &mut [f64]) {
        for (s, r) in self.parts().iter().zip(self.ranges()) {
            nn::glorot_uniform_fill(s, rng, &mut p[r]);
        }
    }
}

pub struct LeapCache {
    enc: nn::Cache,
    mix_enc: nn::Cache,
    mix_dec: nn::Cache,
    dec: nn::Cache,
    tau: Matrix,
}

impl LeapCache {
    fn output(&self) -> Matrix {
        let mut y = self.dec.output().clone();
        y.add_scaled(1.0, self.mix_dec.output());
        y
    }
}

/// `D(E(x)) + d(e(E(x) * tau))`, with `tau` one row per sample.
pub fn leap_forward(spec: &LeapSpec, params: &[f64], x: &Matrix, tau: &Matrix) -> Result<(Matrix, LeapCache), MfnnError> {
    spec.validate()?;
    if params.len() != spec.n_params() {
        return Err(NnError::Shape { what: "LEAP parameter count", expected: spec.n_params(), found: params.len() }.into());
    }
    if tau.cols() != spec.latent() || tau.rows() != x.rows() {
        return Err(NnError::Shape { what: "topology width", expected: spec.latent(), found: tau.cols() }.into());
    }
    let [re, rme, rmd, rd] = spec.ranges();
    let enc = nn::forward(&spec.encoder, &params[re], x)?;
    let z = enc.output();
    let dec = nn::forward(&spec.decoder, &params[rd], z)?;
    let mix_enc = nn::forward(&spec.mix_encoder, &params[rme], &z.hadamard(tau)?)?;
    let mix_dec = nn::forward(&spec.mix_decoder, &params[rmd], mix_enc.output())?;
    let cache = LeapCache { enc, mix_enc, mix_dec, dec, tau: tau.clone() };
    Ok((cache.output(), cache))
}

/// Adds parameter gradients into `grad` and returns the input gradient.
pub fn leap_backward(
    spec: &LeapSpec,
    params: &[f64],
    cache: &LeapCache,
    dy: &Matrix,
    grad: &mut [f64],
) -> Result<Matrix, MfnnError> {
    let [re, rme, rmd, rd] = spec.ranges();
    let mut dz = nn::backward(&spec.decoder, &params[rd.clone()], &cache.dec, dy, &mut grad[rd])?;
    let dm = nn::backward(&spec.mix_decoder, &params[rmd.clone()], &cache.mix_dec, dy, &mut grad[rmd])?;
    let dzt = nn::backward(&spec.mix_encoder, &params[rme.clone()], &cache.mix_enc, &dm, &mut grad[rme])?;
    dz.add_scaled(1.0, &dzt.hadamard(&cache.tau)?);
    Ok(nn::backward(&spec.encoder, &params[re.clone()], &cache.enc, &dz, &mut grad[re])?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MfnnSpec {
    pub x_len: usize,
    pub y_len: usize,
    pub n_lines: usize,
    pub low: LeapSpec,
    pub linear: MlpSpec,
    pub nonlinear: LeapSpec,
}

impl MfnnSpec {
    /// `depth` hidden layers of `width` along every path. The linear
    /// corrector is a rank-`width` affine map of `(x, y_low)`.
    pub fn new(x_len: usize, n_lines: usize, width: usize, depth: usize) -> Result<Self, MfnnError> {
        let y_len = 4 * n_lines;
        let hi_in = x_len + y_len;
        Ok(MfnnSpec {
            x_len,
            y_len,
            n_lines,
            low: LeapSpec::new(x_len, n_lines, y_len, width, depth)?,
            linear: MlpSpec::new(vec![hi_in, width, y_len], Activation::Identity, Activation::Identity)?,
            nonlinear: LeapSpec::new(hi_in, n_lines, y_len, width, depth)?,
        })
    }

    pub fn for_case(case: &NetworkCase, width: usize, depth: usize) -> Result<Self, MfnnError> {
        Self::new(case.feature_len(), case.n_lines(), width, depth)
    }

    fn validate(&self) -> Result<(), MfnnError> {
        let hi_in = self.x_len + self.y_len;
        let ok = self.y_len == 4 * self.n_lines
            && self.low.input_width() == self.x_len
            && self.low.latent() == self.n_lines
            && self.low.output_width() == self.y_len
            && self.linear.input_width() == hi_in
            && self.linear.output_width() == self.y_len
            && self.linear.hidden == Activation::Identity
            && self.linear.output == Activation::Identity
            && self.nonlinear.input_width() == hi_in
            && self.nonlinear.latent() == self.n_lines
            && self.nonlinear.output_width() == self.y_len;
        if !ok {
            return Err(MfnnError::Config("sub-network shapes do not match the feature and target widths"));
        }
        self.low.validate()?;
        self.nonlinear.validate()
    }

    pub fn low_range(&self) -> Range<usize> {
        0..self.low.n_params()
    }

    pub fn linear_range(&self) -> Range<usize> {
        let s = self.low.n_params();
        s..s + self.linear.n_params()
    }

    pub fn nonlinear_range(&self) -> Range<usize> {
        let s = self.linear_range().end;
        s..s + self.nonlinear.n_params()
    }

    /// Offset of `[a_L, a_1, a_2]`.
    pub fn alpha_offset(&self) -> usize {
        self.nonlinear_range().end
    }

    pub fn n_params(&self) -> usize {
        self.alpha_offset() + 3
    }

    /// Sum of squared weights of all three sub-networks.
    pub fn weight_sq_norm(&self, p: &[f64]) -> f64 {
        self.low.weight_sq_norm(&p[self.low_range()])
            + self.linear.weight_sq_norm(&p[self.linear_range()])
            + self.nonlinear.weight_sq_norm(&p[self.nonlinear_range()])
    }

    fn add_weight_grad(&self, p: &[f64], scale: f64, g: &mut [f64]) {
        let (rl, rn, rh) = (self.low_range(), self.linear_range(), self.nonlinear_range());
        self.low.add_weight_grad(&p[rl.clone()], scale, &mut g[rl]);
        self.linear.add_weight_grad(&p[rn.clone()], scale, &mut g[rn]);
        self.nonlinear.add_weight_grad(&p[rh.clone()], scale, &mut g[rh]);
    }

    /// Glorot weights, zero biases and the identity start
    /// `a_L = 1, a_1 = a_2 = 0` (so `y_high = y_low` initially).
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut p = vec![0.0; self.n_params()];
        let mut rng = rng::stream(seed, 0);
        let (rl, rn, rh) = (self.low_range(), self.linear_range(), self.nonlinear_range());
        self.low.init(&mut rng, &mut p[rl]);
        nn::glorot_uniform_fill(&self.linear, &mut rng, &mut p[rn]);
        self.nonlinear.init(&mut rng, &mut p[rh]);
        let a = self.alpha_offset();
        p[a..a + 3].copy_from_slice(&[1.0, 0.0, 0.0]);
        p
    }
}

pub struct MfnnCache {
    low: LeapCache,
    linear: nn::Cache,
    nonlinear: LeapCache,
    y_low: Matrix,
    f_l: Matrix,
    f_nl: Matrix,
}

/// Forward pass on normalized inputs. Returns `(y_low, y_high)`.
pub fn mfnn_forward(spec: &MfnnSpec, params: &[f64], x: &Matrix, tau: &Matrix) -> Result<(Matrix, Matrix), MfnnError> {
    let (yh, cache) = forward_cached(spec, params, x, tau)?;
    Ok((cache.y_low, yh))
}

/// Low-fidelity output only.
pub fn low_forward(spec: &MfnnSpec, params: &[f64], x: &Matrix, tau: &Matrix) -> Result<Matrix, MfnnError> {
    spec.validate()?;
    check_len(spec, params)?;
    Ok(leap_forward(&spec.low, &params[spec.low_range()], x, tau)?.0)
}

fn check_len(spec: &MfnnSpec, params: &[f64]) -> Result<(), MfnnError> {
    if params.len() != spec.n_params() {
        return Err(NnError::Shape { what: "MFNN parameter count", expected: spec.n_params(), found: params.len() }.into());
    }
    Ok(())
}

fn forward_cached(spec: &MfnnSpec, params: &[f64], x: &Matrix, tau: &Matrix) -> Result<(Matrix, MfnnCache), MfnnError> {
    spec.validate()?;
    check_len(spec, params)?;
    let (y_low, low) = leap_forward(&spec.low, &params[spec.low_range()], x, tau)?;
    let h = x.hcat(&y_low)?;
    let linear = nn::forward(&spec.linear, &params[spec.linear_range()], &h)?;
    let f_l = linear.output().clone();
    let (f_nl, nonlinear) = leap_forward(&spec.nonlinear, &params[spec.nonlinear_range()], &h, tau)?;
    let a = spec.alpha_offset();
    let (al, t1, t2) = (params[a], Float::tanh(params[a + 1]), Float::tanh(params[a + 2]));
    let mut yh = y_low.clone();
    yh.scale(al);
    // accumulate eps*tanh(a)*f separately first so the identity start is exact
    let mut corr = f_l.clone();
    corr.scale(EPSILON * t1);
    corr.add_scaled(EPSILON * t2, &f_nl);
    yh.add_scaled(1.0, &corr);
    Ok((yh, MfnnCache { low, linear, nonlinear, y_low, f_l, f_nl }))
}

/// Backward pass from `dL/dy_high` (and optionally an extra `dL/dy_low`
/// on the same rows). Gradients are added into `grad`.
fn backward(
    spec: &MfnnSpec,
    params: &[f64],
    cache: &MfnnCache,
    dyh: &Matrix,
    grad: &mut [f64],
) -> Result<(), MfnnError> {
    let a = spec.alpha_offset();
    let (al, t1, t2) = (params[a], Float::tanh(params[a + 1]), Float::tanh(params[a + 2]));
    let dot = |u: &Matrix, v: &Matrix| u.as_slice().iter().zip(v.as_slice()).map(|(p, q)| p * q).sum::<f64>();
    grad[a] += dot(dyh, &cache.y_low);
    grad[a + 1] += EPSILON * (1.0 - t1 * t1) * dot(dyh, &cache.f_l);
    grad[a + 2] += EPSILON * (1.0 - t2 * t2) * dot(dyh, &cache.f_nl);

    let mut dfl = dyh.clone();
    dfl.scale(EPSILON * t1);
    let rn = spec.linear_range();
    let mut dh = nn::backward(&spec.linear, &params[rn.clone()], &cache.linear, &dfl, &mut grad[rn])?;
    let mut dfnl = dyh.clone();
    dfnl.scale(EPSILON * t2);
    let rh = spec.nonlinear_range();
    let dh2 = leap_backward(&spec.nonlinear, &params[rh.clone()], &cache.nonlinear, &dfnl, &mut grad[rh])?;
    dh.add_scaled(1.0, &dh2);
    let mut dyl = dh.columns(spec.x_len..spec.x_len + spec.y_len);
    dyl.add_scaled(al, dyh);
    let rl = spec.low_range();
    leap_backward(&spec.low, &params[rl.clone()], &cache.low, &dyl, &mut grad[rl])?;
    Ok(())
}

/// Inputs and targets of one minibatch, already normalized.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Matrix,
    pub tau: Matrix,
    pub y: Matrix,
}

impl Batch {
    pub fn rows(&self) -> usize {
        self.x.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub low: f64,
    pub high: f64,
    pub penalty: f64,
    pub total: f64,
}

fn mse_grad(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix), MfnnError> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(NnError::Shape { what: "target shape", expected: pred.cols(), found: target.cols() }.into());
    }
    let n = (pred.rows() * pred.cols()) as f64;
    let mut d = pred.clone();
    d.add_scaled(-1.0, target);
    let mse = d.as_slice().iter().map(|v| v * v).sum::<f64>() / n;
    d.scale(2.0 / n);
    Ok((mse, d))
}

/// Two-fidelity loss: mean squared error of `y_low` against DC labels plus
/// mean squared error of `y_high` against NR labels plus `lambda` times the
/// squared weights (biases and the three scalars are not penalized). Means
/// run over every element of the batch. Gradients are added into `grad`
/// when given.
pub fn loss(
    spec: &MfnnSpec,
    params: &[f64],
    low: Option<&Batch>,
    high: Option<&Batch>,
    lambda: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<LossParts, MfnnError> {
    let low = low.filter(|b| b.rows() > 0);
    let high = high.filter(|b| b.rows() > 0);
    if low.is_none() && high.is_none() {
        return Err(MfnnError::EmptyBatch);
    }
    check_len(spec, params)?;
    if let Some(g) = grad.as_deref() {
        if g.len() != params.len() {
            return Err(NnError::Shape { what: "gradient buffer", expected: params.len(), found: g.len() }.into());
        }
    }
    let mut parts = LossParts { low: 0.0, high: 0.0, penalty: 0.0, total: 0.0 };
    if let Some(b) = low {
        spec.validate()?;
        let rl = spec.low_range();
        let (y, cache) = leap_forward(&spec.low, &params[rl.clone()], &b.x, &b.tau)?;
        let (mse, dy) = mse_grad(&y, &b.y)?;
        parts.low = mse;
        if let Some(g) = grad.as_deref_mut() {
            leap_backward(&spec.low, &params[rl.clone()], &cache, &dy, &mut g[rl])?;
        }
    }
    if let Some(b) = high {
        let (yh, cache) = forward_cached(spec, params, &b.x, &b.tau)?;
        let (mse, dy) = mse_grad(&yh, &b.y)?;
        parts.high = mse;
        if let Some(g) = grad.as_deref_mut() {
            backward(spec, params, &cache, &dy, g)?;
        }
    }
    if lambda != 0.0 {
        parts.penalty = lambda * spec.weight_sq_norm(params);
        if let Some(g) = grad.as_deref_mut() {
            spec.add_weight_grad(params, 2.0 * lambda, g);
        }
    }
    parts.total = parts.low + parts.high + parts.penalty;
    Ok(parts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrainMode {
    /// Both loss terms every step.
    Joint,
    /// Low-fidelity block first, then the high-fidelity parts with the low
    /// block frozen. Each stage gets `epochs` epochs.
    TwoStage,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub hidden_width: usize,
    /// Hidden layers along each path of every sub-network.
    pub hidden_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1e-5,
            lr: 1e-3,
            epochs: 500,
            batch_size: 64,
            seed: 0,
            mode: TrainMode::Joint,
            hidden_width: 64,
            hidden_layers: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MfnnError> {
        if !(self.lambda >= 0.0) {
            return Err(MfnnError::Config("lambda must be non-negative"));
        }
        if !(self.lr > 0.0) {
            return Err(MfnnError::Config("lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(MfnnError::Config("batch_size must be at least 1"));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 {
            return Err(MfnnError::Config("hidden_width and hidden_layers must be at least 1"));
        }
        Ok(())
    }
}

/// A trained model: architecture, flat parameters and the normalization it
/// was trained under.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MfnnParams {
    pub spec: MfnnSpec,
    pub params: Vec<f64>,
    pub epsilon: f64,
    pub norm: NormStats,
    pub case_ref: CaseRef,
}

impl MfnnParams {
    pub fn alphas(&self) -> [f64; 3] {
        let a = self.spec.alpha_offset();
        [self.params[a], self.params[a + 1], self.params[a + 2]]
    }

    fn inputs(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<(Matrix, Matrix), MfnnError> {
        if xs.len() != taus.len() {
            return Err(NnError::Shape { what: "topology rows", expected: xs.len(), found: taus.len() }.into());
        }
        let mut xm = Matrix::zeros(xs.len(), self.spec.x_len);
        let mut tm = Matrix::zeros(xs.len(), self.spec.n_lines);
        for (i, (x, t)) in xs.iter().zip(taus).enumerate() {
            if x.len() != self.spec.x_len {
                return Err(NnError::Shape { what: "feature width", expected: self.spec.x_len, found: x.len() }.into());
            }
            if t.len() != self.spec.n_lines {
                return Err(NnError::Shape { what: "topology length", expected: self.spec.n_lines, found: t.len() }.into());
            }
            xm.row_mut(i).copy_from_slice(&self.norm.normalize_x(x));
            for (d, &s) in tm.row_mut(i).iter_mut().zip(t.as_slice()) {
                *d = f64::from(s);
            }
        }
        Ok((xm, tm))
    }

    /// High-fidelity prediction in physical units from raw features.
    pub fn predict(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<Vec<Vec<f64>>, MfnnError> {
        let (xm, tm) = self.inputs(xs, taus)?;
        let (_, yh) = mfnn_forward(&self.spec, &self.params, &xm, &tm)?;
        Ok((0..yh.rows()).map(|i| self.norm.denormalize_y(yh.row(i))).collect())
    }

    /// Low-fidelity head in physical units.
    pub fn predict_low(&self, xs: &[&[f64]], taus: &[&TopologyVector]) -> Result<Vec<Vec<f64>>, MfnnError> {
        let (xm, tm) = self.inputs(xs, taus)?;
        let yl = low_forward(&self.spec, &self.params, &xm, &tm)?;
        Ok((0..yl.rows()).map(|i| self.norm.denormalize_y(yl.row(i))).collect())
    }

    pub fn check_case(&self, case: &NetworkCase) -> Result<(), MfnnError> {
        if self.case_ref.matches(case) {
            Ok(())
        } else {
            Err(MfnnError::CaseMismatch {
                expected: alloc::format!("{} ({})", self.case_ref.name, self.case_ref.line_hash),
                found: alloc::format!("{} ({})", case.name(), case.line_order_hash()),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss over the epoch's steps.
    pub train_loss: f64,
    /// High-fidelity MSE on the validation split (normalized units); the
    /// training high-fidelity MSE when there is no validation split.
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: MfnnParams,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (lowest validation MSE).
    pub best_epoch: usize,
}

struct Rows {
    x: Matrix,
    tau: Matrix,
    y: Matrix,
}

impl Rows {
    fn gather(ds: &Dataset, idx: &[usize], high: bool) -> Rows {
        let s0 = &ds.scenarios;
        let (xl, yl, tl) = (ds.norm.x_mean.len(), ds.norm.y_mean.len(), s0.first().map_or(0, |s| s.tau.len()));
        let mut r = Rows { x: Matrix::zeros(idx.len(), xl), tau: Matrix::zeros(idx.len(), tl), y: Matrix::zeros(idx.len(), yl) };
        for (k, &i) in idx.iter().enumerate() {
            let s = &s0[i];
            r.x.row_mut(k).copy_from_slice(&s.x);
            for (d, &t) in r.tau.row_mut(k).iter_mut().zip(s.tau.as_slice()) {
                *d = f64::from(t);
            }
            let y = if high { s.y_high.as_ref() } else { s.y_low.as_ref() };
            r.y.row_mut(k).copy_from_slice(y.expect("rows gathered only where the label exists"));
        }
        r
    }

    fn batch(&self, idx: &[usize]) -> Batch {
        let pick = |m: &Matrix| {
            let mut out = Matrix::zeros(idx.len(), m.cols());
            for (k, &i) in idx.iter().enumerate() {
                out.row_mut(k).copy_from_slice(m.row(i));
            }
            out
        };
        Batch { x: pick(&self.x), tau: pick(&self.tau), y: pick(&self.y) }
    }

    fn all(&self) -> Batch {
        Batch { x: self.x.clone(), tau: self.tau.clone(), y: self.y.clone() }
    }
}

/// Cycles through a shuffled index list, reshuffling at each wrap.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
}

impl Cycler {
    fn new(n: usize, rng: &mut rng::Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Cycler { order, pos: 0 }
    }

    fn take(&mut self, k: usize, rng: &mut rng::Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        while out.len() < k.min(self.order.len()) {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Minibatch Adam on the two-fidelity loss. Keeps the parameters of the
/// epoch with the lowest validation MSE.
pub fn train(dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, MfnnError> {
    cfg.validate()?;
    let ds = dataset.normalized();
    if ds.split.train.is_empty() {
        return Err(MfnnError::EmptyTraining);
    }
    let n_lines = ds.scenarios[0].tau.len();
    let spec = MfnnSpec::new(ds.norm.x_mean.len(), n_lines, cfg.hidden_width, cfg.hidden_layers)?;
    let mut params = spec.init(cfg.seed);

    let low_rows = Rows::gather(&ds, &ds.split.train, false);
    let high_idx = ds.high_train();
    let high_rows = Rows::gather(&ds, &high_idx, true);
    let val_idx: Vec<usize> = ds.split.val.iter().copied().filter(|&i| ds.scenarios[i].y_high.is_some()).collect();
    let val = if val_idx.is_empty() { None } else { Some(Rows::gather(&ds, &val_idx, true).all()) };

    let mut rng = rng::stream(cfg.seed, 1);
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut grad = vec![0.0; params.len()];

    let stages: &[Stage] = match cfg.mode {
        TrainMode::Joint => &[Stage::Joint],
        TrainMode::TwoStage => &[Stage::LowOnly, Stage::HighOnly],
    };
    let mut epoch = 0;
    for &stage in stages {
        let mut adam = AdamState::new(params.len(), cfg.lr);
        let mut low_cycle = Cycler::new(low_rows.x.rows(), &mut rng);
        let mut high_cycle = Cycler::new(high_rows.x.rows(), &mut rng);
        let driver = if stage == Stage::HighOnly { high_rows.x.rows() } else { low_rows.x.rows() };
        if driver == 0 {
            continue;
        }
        let steps = driver.div_ceil(cfg.batch_size);
        for _ in 0..cfg.epochs {
            epoch += 1;
            let mut total = 0.0;
            for step in 0..steps {
                let lb = (stage != Stage::HighOnly).then(|| low_rows.batch(&low_cycle.take(cfg.batch_size, &mut rng)));
                let hb = (stage != Stage::LowOnly && high_rows.x.rows() > 0)
                    .then(|| high_rows.batch(&high_cycle.take(cfg.batch_size, &mut rng)));
                grad.fill(0.0);
                let parts = loss(&spec, &params, lb.as_ref(), hb.as_ref(), cfg.lambda, Some(&mut grad))?;
                if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(MfnnError::Diverged { epoch, step, loss: parts.total });
                }
                match stage {
                    Stage::Joint => {}
                    Stage::LowOnly => {
                        grad[spec.low_range().end..].fill(0.0);
                    }
                    Stage::HighOnly => grad[spec.low_range()].fill(0.0),
                }
                nn::adam_step(&mut adam, &mut params, &grad)?;
                total += parts.total;
            }
            let eval = match &val {
                Some(v) => v.clone(),
                None if high_rows.x.rows() > 0 => high_rows.all(),
                None => low_rows.all(),
            };
            let (_, yh) = mfnn_forward(&spec, &params, &eval.x, &eval.tau)?;
            let val_mse = mse_grad(&yh, &eval.y)?.0;
            if !val_mse.is_finite() {
                return Err(MfnnError::Diverged { epoch, step: steps, loss: val_mse });
            }
            if val_mse < best.0 {
                best = (val_mse, epoch, params.clone());
            }
            log.push(EpochLog { epoch, train_loss: total / steps as f64, val_mse });
        }
    }
    let (_, best_epoch, best_params) = best;
    Ok(TrainOutcome {
        model: MfnnParams { spec, params: best_params, epsilon: EPSILON, norm: ds.norm.clone(), case_ref: ds.case_ref.clone() },
        log,
        best_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Joint,
    LowOnly,
    HighOnly,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, rng: &mut rng::Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn binary(rows: usize, cols: usize, rng: &mut rng::Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| f64::from(rng.random_bool(0.7) as u8)).collect()).unwrap()
    }

    #[test]
    fn leap_with_silent_mix_decoder_ignores_tau() {
        let spec = LeapSpec::new(4, 3, 5, 6, 2).unwrap();
        let mut rng = rng::stream(0, 0);
        let mut p = vec![0.0; spec.n_params()];
        spec.init(&mut rng, &mut p);
        let rmd = spec.ranges()[2].clone();
        let (w, b) = spec.mix_decoder.layer_ranges(spec.mix_decoder.n_layers() - 1);
        p[rmd.start + w.start..rmd.start + w.end].fill(0.0);
        p[rmd.start + b.start..rmd.start + b.end].fill(0.0);
        let x = random(3, 4, &mut rng);
        let (y1, _) = leap_forward(&spec, &p, &x, &binary(3, 3, &mut rng)).unwrap();
        let (y2, _) = leap_forward(&spec, &p, &x, &Matrix::zeros(3, 3)).unwrap();
        assert_eq!(y1, y2);
        let ed = nn::predict(&spec.decoder, &p[spec.ranges()[3].clone()], &nn::predict(&spec.encoder, &p[spec.ranges()[0].clone()], &x).unwrap()).unwrap();
        assert_eq!(y1, ed);
    }

    #[test]
    fn leap_matches_independent_composition() {
        let spec = LeapSpec::new(4, 3, 5, 6, 2).unwrap();
        let mut rng = rng::stream(1, 0);
        let p: Vec<f64> = (0..spec.n_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = random(4, 4, &mut rng);
        let tau = binary(4, 3, &mut rng);
        let (y, _) = leap_forward(&spec, &p, &x, &tau).unwrap();
        let [re, rme, rmd, rd] = spec.ranges();
        let z = nn::predict(&spec.encoder, &p[re], &x).unwrap();
        let mut want = nn::predict(&spec.decoder, &p[rd], &z).unwrap();
        let m = nn::predict(&spec.mix_encoder, &p[rme], &z.hadamard(&tau).unwrap()).unwrap();
        want.add_scaled(1.0, &nn::predict(&spec.mix_decoder, &p[rmd], &m).unwrap());
        for (a, b) in y.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn identity_start_copies_low_output() {
        let spec = MfnnSpec::new(6, 5, 8, 2).unwrap();
        let p = spec.init(3);
        let mut rng = rng::stream(3, 9);
        let x = random(7, 6, &mut rng);
        let tau = binary(7, 5, &mut rng);
        let (yl, yh) = mfnn_forward(&spec, &p, &x, &tau).unwrap();
        assert_eq!(yl, yh);
    }

    #[test]
    fn composition_hand_value() {
        // one target, zero weights everywhere, biases pin the sub-network outputs
        let spec = MfnnSpec::new(1, 1, 1, 2).unwrap();
        let mut p = vec![0.0; spec.n_params()];
        let set_out_bias = |p: &mut [f64], base: usize, s: &MlpSpec, v: f64| {
            let (_, b) = s.layer_ranges(s.n_layers() - 1);
            p[base + b.start..base + b.end].fill(v);
        };
        // low block: D bias 0.25, d silent
        let low_d = spec.low.ranges()[3].start;
        set_out_bias(&mut p, low_d, &spec.low.decoder, 0.25);
        let low_md = spec.low.ranges()[2].start;
        set_out_bias(&mut p, low_md, &spec.low.mix_decoder, 0.0);
        // f_l outputs its bias 2.0
        let lin = spec.linear_range().start;
        set_out_bias(&mut p, lin, &spec.linear, 2.0);
        let a = spec.alpha_offset();
        p[a] = 0.5;
        p[a + 1] = 0.5f64.atanh();
        p[a + 2] = 0.0;
        let (yl, yh) = mfnn_forward(&spec, &p, &Matrix::zeros(1, 1), &Matrix::from_vec(1, 1, vec![1.0]).unwrap()).unwrap();
        for (l, h) in yl.as_slice().iter().zip(yh.as_slice()) {
            assert!((l - 0.25).abs() < 1e-15);
            assert!((h - (0.5 * 0.25 + 0.1 * 0.5 * 2.0)).abs() < 1e-15);
        }
    }

    fn mini_batches(spec: &MfnnSpec, rng: &mut rng::Rng) -> (Batch, Batch) {
        let mk = |rows, rng: &mut rng::Rng| Batch {
            x: random(rows, spec.x_len, rng),
            tau: binary(rows, spec.n_lines, rng),
            y: random(rows, spec.y_len, rng),
        };
        (mk(3, rng), mk(2, rng))
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let spec = MfnnSpec::new(6, 5, 4, 2).unwrap();
        let mut rng = rng::stream(4, 0);
        let mut p = spec.init(4);
        let a = spec.alpha_offset();
        p[a..].copy_from_slice(&[0.8, 0.4, -0.6]);
        for v in &mut p[..a] {
            *v += 0.05 * rng.random_range(-1.0..1.0);
        }
        let (lb, hb) = mini_batches(&spec, &mut rng);
        let mut g = vec![0.0; p.len()];
        loss(&spec, &p, Some(&lb), Some(&hb), 1e-3, Some(&mut g)).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp[i] += h;
            pm[i] -= h;
            let f = |q: &[f64]| loss(&spec, q, Some(&lb), Some(&hb), 1e-3, None).unwrap().total;
            let num = (f(&pp) - f(&pm)) / (2.0 * h);
            let rel = (g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst <= 1e-5, "worst relative error {worst:e}");
    }

    #[test]
    fn coupling_reaches_low_block() {
        let spec = MfnnSpec::new(6, 5, 4, 2).unwrap();
        let mut rng = rng::stream(5, 0);
        let p = spec.init(5);
        let (_, hb) = mini_batches(&spec, &mut rng);
        let mut g = vec![0.0; p.len()];
        loss(&spec, &p, None, Some(&hb), 0.0, Some(&mut g)).unwrap();
        assert!(g[spec.low_range()].iter().any(|v| v.abs() > 1e-8));
    }

    #[test]
    fn loss_hand_values() {
        let spec = MfnnSpec::new(1, 1, 1, 2).unwrap();
        let p = vec![0.0; spec.n_params()];
        let one = |v: f64| Matrix::from_vec(1, 4, vec![v; 4]).unwrap();
        let b = Batch { x: Matrix::zeros(1, 1), tau: Matrix::from_vec(1, 1, vec![1.0]).unwrap(), y: one(1.0) };
        let l = loss(&spec, &p, Some(&b), None, 0.0, None).unwrap();
        assert_eq!(l.total, 1.0);
        let perfect = Batch { y: one(0.0), ..b.clone() };
        assert_eq!(loss(&spec, &p, Some(&perfect), Some(&perfect), 0.0, None).unwrap().total, 0.0);
        assert!(matches!(loss(&spec, &p, None, None, 0.0, None), Err(MfnnError::EmptyBatch)));
    }

    #[test]
    fn penalty_is_lambda_times_weight_norm() {
        let spec = MfnnSpec::new(3, 2, 4, 2).unwrap();
        let mut p = vec![0.0; spec.n_params()];
        // four unit weights, one bias and the scalars set too: only weights count
        let (w, b) = spec.linear.layer_ranges(0);
        let base = spec.linear_range().start;
        for i in 0..4 {
            p[base + w.start + i] = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        p[base + b.start] = 3.0;
        let a = spec.alpha_offset();
        p[a] = 1.0;
        assert_eq!(spec.weight_sq_norm(&p), 4.0);
        let mut rng = rng::stream(6, 0);
        let (lb, hb) = mini_batches(&spec, &mut rng);
        let l0 = loss(&spec, &p, Some(&lb), Some(&hb), 0.0, None).unwrap().total;
        let l1 = loss(&spec, &p, Some(&lb), Some(&hb), 0.01, None).unwrap().total;
        assert!((l1 - l0 - 0.04).abs() < 1e-14);
        let l2 = loss(&spec, &p, Some(&lb), Some(&hb), 0.02, None).unwrap().total;
        assert!(l2 > l1);
    }
}
