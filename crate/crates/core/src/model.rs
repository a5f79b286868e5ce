//! The STAR forward pass.
//!
//! Per window: one learned IHT step produces a sparse DFT estimate `z`,
//! its squared magnitude gives the rough spectrum `y~`, a parameter-free
//! dot-product attention over the `N_p` previous outputs yields a context
//! vector `a`, and the output is
//! `y = (y~ + ReLU(U a + b)) * sigmoid(V a)`.
//!
//! Windows are zero-filled to length K, so a single `2K x 2K` matrix `W`
//! serves every mask.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{hard_threshold, realize_matrix, realize_vector};
use crate::solvers::dft;
use crate::synth::CirWindow;

/// Model variants used in the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full model.
    #[serde(alias = "none")]
    #[value(name = "none")]
    Full,
    /// LIHT layer only; the output is `y~`.
    NoAttention,
    /// Attention with the additive branch only.
    OnlyAdd,
    /// Full model with a free `S` in place of `I - W^T W / mu`.
    LearnS,
}

impl Variant {
    pub fn uses_attention(self) -> bool {
        !matches!(self, Variant::NoAttention)
    }

    pub fn uses_mask_branch(self) -> bool {
        matches!(self, Variant::Full | Variant::LearnS)
    }

    pub fn learns_s(self) -> bool {
        matches!(self, Variant::LearnS)
    }

    pub fn tag(self) -> u32 {
        match self {
            Variant::Full => 0,
            Variant::NoAttention => 1,
            Variant::OnlyAdd => 2,
            Variant::LearnS => 3,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        Some(match tag {
            0 => Variant::Full,
            1 => Variant::NoAttention,
            2 => Variant::OnlyAdd,
            3 => Variant::LearnS,
            _ => return None,
        })
    }

    /// Learnable parameters actually used by this variant.
    pub fn param_count(self, k: usize) -> usize {
        let k2 = k * k;
        match self {
            Variant::Full => 6 * k2 + k,
            Variant::NoAttention => 4 * k2,
            Variant::OnlyAdd => 5 * k2 + k,
            Variant::LearnS => 10 * k2 + k,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "star",
            Variant::NoAttention => "star-no-attention",
            Variant::OnlyAdd => "star-only-add",
            Variant::LearnS => "star-learn-s",
        }
    }
}

/// `4K^2` for `W`, `2K^2 + K` for `U`, `V`, `b`, and `4K^2` more for `S`.
pub fn count_params(k: usize, learn_s: bool) -> usize {
    6 * k * k + k + if learn_s { 4 * k * k } else { 0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub k: usize,
    pub omega: usize,
    pub mu: f64,
    pub n_past: usize,
    pub variant: Variant,
}

impl Default for Hyper {
    fn default() -> Self {
        Self { k: 64, omega: 5, mu: 20.0, n_past: 6, variant: Variant::Full }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.omega == 0 || self.omega > self.k {
            return Err(Error::Config("need k >= 1 and 1 <= omega <= k".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be positive".into()));
        }
        if self.n_past == 0 && self.variant.uses_attention() {
            return Err(Error::Config("attention needs n_past >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyper,
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub b: Array1<f64>,
    pub s: Option<Array2<f64>>,
}

impl ModelParams {
    pub fn k(&self) -> usize {
        self.hyper.k
    }

    pub fn param_count(&self) -> usize {
        self.hyper.variant.param_count(self.hyper.k)
    }

    /// `I - W^T W / mu`, or `S` when it is learned.
    pub fn recurrence(&self) -> Array2<f64> {
        match &self.s {
            Some(s) => s.clone(),
            None => {
                let n = 2 * self.k();
                Array2::eye(n) - self.w.t().dot(&self.w) / self.hyper.mu
            }
        }
    }
}

/// `W = R(F_K)`; `U`, `V`, `b` i.i.d. uniform on `[-1/sqrt(K), 1/sqrt(K))`.
/// A learned `S` starts at `I - W^T W / mu`.
pub fn param_init(hyper: Hyper, seed: u64) -> Result<ModelParams> {
    hyper.validate()?;
    let k = hyper.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (k as f64).sqrt();
    let mut uniform = |shape: (usize, usize)| {
        Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..bound))
    };
    let u = uniform((k, k));
    let v = uniform((k, k));
    let b = uniform((1, k)).into_shape_with_order(k).unwrap();
    let w = realize_matrix(&dft(k));
    let mut params = ModelParams { hyper, w, u, v, b, s: None };
    if hyper.variant.learns_s() {
        params.s = Some(params.recurrence());
    }
    Ok(params)
}

/// Parameters plus the cached LIHT recurrence matrix. Call [`Model::sync`]
/// after mutating `params`.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    /// Transposed recurrence, so column `j` of the recurrence is a row here.
    recur_t: Array2<f64>,
}

impl Model {
    pub fn new(params: ModelParams) -> Self {
        let recur_t = params.recurrence().reversed_axes().as_standard_layout().into_owned();
        Self { params, recur_t }
    }

    pub fn sync(&mut self) {
        self.recur_t = self.params.recurrence().reversed_axes().as_standard_layout().into_owned();
    }

    pub fn hyper(&self) -> &Hyper {
        &self.params.hyper
    }

    /// `recurrence · x`, skipping zero entries of `x`.
    pub(crate) fn recur_apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(x.len());
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                out.scaled_add(xj, &self.recur_t.row(j));
            }
        }
        out
    }

    /// `recurrence^T · x`.
    pub(crate) fn recur_t_apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.recur_t.dot(&x)
    }
}

/// Causal buffer of the `N_p` most recent outputs, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct PastBuffer {
    k: usize,
    entries: VecDeque<Array1<f64>>,
}

impl PastBuffer {
    /// Zero-initialized buffer.
    pub fn new(n_past: usize, k: usize) -> Self {
        Self { k, entries: (0..n_past).map(|_| Array1::zeros(k)).collect() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts the newest output and evicts the oldest.
    pub fn push(&mut self, y: Array1<f64>) {
        assert_eq!(y.len(), self.k);
        if self.entries.is_empty() {
            return;
        }
        self.entries.pop_back();
        self.entries.push_front(y);
    }

    /// `Y = [y[t-1], ..., y[t-N_p]]^T`, shape `N_p x K`.
    pub fn matrix(&self) -> Array2<f64> {
        let mut y = Array2::zeros((self.entries.len(), self.k));
        for (i, e) in self.entries.iter().enumerate() {
            y.row_mut(i).assign(e);
        }
        y
    }

    pub fn entries(&self) -> impl Iterator<Item = &Array1<f64>> {
        self.entries.iter()
    }
}

/// Zero-filled realized input `h_bar` of a window.
pub fn realize_window(window: &CirWindow) -> Array1<f64> {
    realize_vector(&window.values)
}

#[derive(Debug, Clone)]
pub struct LihtOutput {
    pub h_bar: Array1<f64>,
    pub z0: Array1<f64>,
    pub support0: Vec<usize>,
    pub z: Array1<f64>,
    pub support: Vec<usize>,
}

/// Single LIHT layer:
/// `z0 = H(W^T h / mu)`, `z = H(R z0 + W^T h / mu)`.
pub fn liht_forward(window: &CirWindow, model: &Model) -> LihtOutput {
    let p = &model.params;
    let h_bar = realize_window(window);
    let inv_mu = 1.0 / p.hyper.mu;
    let mut proj = Array1::<f64>::zeros(2 * p.k());
    for (i, &hi) in h_bar.iter().enumerate() {
        if hi != 0.0 {
            proj.scaled_add(hi * inv_mu, &p.w.row(i));
        }
    }
    let (z0, support0) = hard_threshold(proj.view(), p.hyper.omega);
    let pre = model.recur_apply(z0.view()) + &proj;
    let (z, support) = hard_threshold(pre.view(), p.hyper.omega);
    LihtOutput { h_bar, z0, support0, z, support }
}

/// Squared magnitude of each complex bin: `y~_i = z_i^2 + z_{i+K}^2`.
pub fn md_convert(z: ArrayView1<'_, f64>) -> Array1<f64> {
    let k = z.len() / 2;
    Array1::from_shape_fn(k, |i| z[i] * z[i] + z[i + k] * z[i + k])
}

pub(crate) fn softmax(x: &Array1<f64>) -> Array1<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = x.mapv(|v| (v - m).exp());
    let s = e.sum();
    e / s
}

/// `w = softmax(Y y~ / sqrt(K))`, `a = Y^T w`.
pub fn attention_context(y_tilde: ArrayView1<'_, f64>, buf: &PastBuffer) -> (Array1<f64>, Array1<f64>) {
    let y = buf.matrix();
    let scale = 1.0 / (y_tilde.len() as f64).sqrt();
    let weights = softmax(&(y.dot(&y_tilde) * scale));
    let a = y.t().dot(&weights);
    (a, weights)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Refinement intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Refined {
    pub y: Array1<f64>,
    /// `U a + b`.
    pub pre_add: Array1<f64>,
    /// `sigmoid(V a)`, all ones when the variant has no mask branch.
    pub gate: Array1<f64>,
}

pub fn refine_traced(y_tilde: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>, params: &ModelParams) -> Refined {
    let pre_add = params.u.dot(&a) + &params.b;
    let gate = if params.hyper.variant.uses_mask_branch() {
        params.v.dot(&a).mapv(sigmoid)
    } else {
        Array1::ones(y_tilde.len())
    };
    let y = (&y_tilde + &pre_add.mapv(|v| v.max(0.0))) * &gate;
    Refined { y, pre_add, gate }
}

/// `y = (y~ + ReLU(U a + b)) * sigmoid(V a)`.
pub fn refine(y_tilde: ArrayView1<'_, f64>, a: ArrayView1<'_, f64>, params: &ModelParams) -> Array1<f64> {
    refine_traced(y_tilde, a, params).y
}

/// Every intermediate of one window's forward pass.
#[derive(Debug, Clone)]
pub struct WindowTrace {
    pub liht: LihtOutput,
    pub y_tilde: Array1<f64>,
    /// Buffer contents used by attention (`N_p x K`), empty without attention.
    pub past: Array2<f64>,
    pub weights: Array1<f64>,
    pub context: Array1<f64>,
    pub refined: Option<Refined>,
    pub y: Array1<f64>,
}

/// Forward pass of one window without touching the buffer.
pub fn forward_trace(window: &CirWindow, buf: &PastBuffer, model: &Model) -> WindowTrace {
    let liht = liht_forward(window, model);
    let y_tilde = md_convert(liht.z.view());
    if !model.hyper().variant.uses_attention() {
        return WindowTrace {
            y: y_tilde.clone(),
            liht,
            y_tilde,
            past: Array2::zeros((0, model.params.k())),
            weights: Array1::zeros(0),
            context: Array1::zeros(model.params.k()),
            refined: None,
        };
    }
    let past = buf.matrix();
    let (context, weights) = attention_context(y_tilde.view(), buf);
    let refined = refine_traced(y_tilde.view(), context.view(), &model.params);
    WindowTrace { y: refined.y.clone(), liht, y_tilde, past, weights, context, refined: Some(refined) }
}

/// Runs one window and then appends its output to the buffer.
pub fn star_forward_window(window: &CirWindow, buf: &mut PastBuffer, model: &Model) -> Array1<f64> {
    let y = forward_trace(window, buf, model).y;
    buf.push(y.clone());
    y
}

/// Processes a sequence in order from a fresh zero buffer. Rows of the
/// result are the output spectra.
pub fn star_forward_sequence(windows: &[CirWindow], model: &Model) -> Array2<f64> {
    let k = model.params.k();
    let mut buf = PastBuffer::new(model.hyper().n_past, k);
    let mut out = Array2::zeros((windows.len(), k));
    for (t, w) in windows.iter().enumerate() {
        out.row_mut(t).assign(&star_forward_window(w, &mut buf, model));
    }
    out
}
