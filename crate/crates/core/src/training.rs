//! Loss, reverse-mode gradients of the STAR graph, Adam, the training loop
//! and checkpoint I/O.
//!
//! Gradient rules: hard thresholding passes the gradient through on the
//! retained bins and blocks it elsewhere; `ReLU'(0) = 0`; the softmax is
//! differentiated exactly. With `detach_past` the buffered outputs are
//! constants, otherwise the gradient flows back through them to earlier
//! windows of the same sequence.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Zip};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{forward_trace, param_init, Hyper, Model, ModelParams, PastBuffer, Variant, WindowTrace};
use crate::solvers::{ground_truth_spectrogram, GroundTruth};
use crate::synth::{frame_windows, gen_window_mask, CirSequence, CirWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub lr: f64,
    pub epochs: usize,
    pub k: usize,
    pub shift: usize,
    pub omega: usize,
    pub mu: f64,
    pub n_past: usize,
    pub variant: Variant,
    /// Cap of the per-window missing probability `p ~ U(0, p_max)`.
    pub p_max: f64,
    /// Label -> replication factor. Fractional parts are drawn per epoch.
    pub oversample: BTreeMap<String, f64>,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub detach_past: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            beta: 0.1,
            lr: 2e-4,
            epochs: 5,
            k: 64,
            shift: 32,
            omega: 5,
            mu: 20.0,
            n_past: 6,
            variant: Variant::Full,
            p_max: 0.9,
            oversample: BTreeMap::new(),
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            detach_past: true,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> Hyper {
        Hyper { k: self.k, omega: self.omega, mu: self.mu, n_past: self.n_past, variant: self.variant }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) || !(self.alpha + self.beta > 0.0) {
            return Err(Error::Config("need alpha, beta >= 0 and alpha + beta > 0".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.p_max) {
            return Err(Error::Config("p_max must lie in [0, 1)".into()));
        }
        if self.shift == 0 || self.shift > self.k {
            return Err(Error::Config("shift must satisfy 0 < shift <= k".into()));
        }
        if self.oversample.values().any(|&f| !(f >= 0.0) || !f.is_finite()) {
            return Err(Error::Config("oversampling factors must be finite and >= 0".into()));
        }
        self.hyper().validate()
    }
}

fn mse(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// `alpha * MSE(y, y_gt) + beta * MSE(z, z_gt)`.
pub fn loss(
    y: ArrayView1<'_, f64>,
    y_gt: ArrayView1<'_, f64>,
    z: ArrayView1<'_, f64>,
    z_gt: ArrayView1<'_, f64>,
    alpha: f64,
    beta: f64,
) -> Result<f64> {
    if y.len() != y_gt.len() || z.len() != z_gt.len() || y.is_empty() || z.is_empty() {
        return Err(Error::Shape(format!(
            "loss operands: y {} vs {}, z {} vs {}",
            y.len(),
            y_gt.len(),
            z.len(),
            z_gt.len()
        )));
    }
    Ok(alpha * mse(y, y_gt) + beta * mse(z, z_gt))
}

/// Gradients with the shapes of the learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub b: Array1<f64>,
    pub s: Option<Array2<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            w: Array2::zeros(p.w.dim()),
            u: Array2::zeros(p.u.dim()),
            v: Array2::zeros(p.v.dim()),
            b: Array1::zeros(p.b.len()),
            s: p.s.as_ref().map(|s| Array2::zeros(s.dim())),
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.w *= c;
        self.u *= c;
        self.v *= c;
        self.b *= c;
        if let Some(s) = &mut self.s {
            *s *= c;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        self.w += &other.w;
        self.u += &other.u;
        self.v += &other.v;
        self.b += &other.b;
        if let (Some(s), Some(o)) = (&mut self.s, &other.s) {
            *s += o;
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        fn finite<'a>(mut x: impl Iterator<Item = &'a f64>) -> bool {
            x.all(|v| v.is_finite())
        }
        if !finite(self.w.iter()) {
            return Err(Error::NonFiniteGradient("W"));
        }
        if !finite(self.u.iter()) {
            return Err(Error::NonFiniteGradient("U"));
        }
        if !finite(self.v.iter()) {
            return Err(Error::NonFiniteGradient("V"));
        }
        if !finite(self.b.iter()) {
            return Err(Error::NonFiniteGradient("b"));
        }
        if let Some(s) = &self.s {
            if !finite(s.iter()) {
                return Err(Error::NonFiniteGradient("S"));
            }
        }
        Ok(())
    }
}

/// `m += alpha * a b^T`, visiting only non-zero entries of `a` and `b`.
fn add_outer(m: &mut Array2<f64>, alpha: f64, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) {
    let nz: Vec<usize> = b.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect();
    if nz.len() * 2 > b.len() {
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                m.row_mut(i).scaled_add(alpha * ai, &b);
            }
        }
        return;
    }
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let c = alpha * ai;
        let mut row = m.row_mut(i);
        for &j in &nz {
            row[j] += c * b[j];
        }
    }
}

/// `W x` for sparse `x`.
fn sparse_matvec(w: &Array2<f64>, x: ArrayView1<'_, f64>) -> Array1<f64> {
    let nz: Vec<usize> = x.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, _)| j).collect();
    Array1::from_shape_fn(w.nrows(), |i| {
        let row = w.row(i);
        nz.iter().map(|&j| row[j] * x[j]).sum()
    })
}

fn keep_support(x: &Array1<f64>, support: &[usize]) -> Array1<f64> {
    let k = x.len() / 2;
    let mut out = Array1::zeros(x.len());
    for &i in support {
        out[i] = x[i];
        out[i + k] = x[i + k];
    }
    out
}

/// Backward pass of one window. `dy_extra` carries gradient arriving from
/// later windows through the buffer. Returns the loss, accumulates into
/// `grads`, and returns the gradient w.r.t. the past-output matrix.
fn window_backward(
    trace: &WindowTrace,
    y_gt: ArrayView1<'_, f64>,
    z_gt: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
    model: &Model,
    dy_extra: Option<&Array1<f64>>,
    want_past: bool,
    grads: &mut Gradients,
) -> (f64, Option<Array2<f64>>) {
    let p = &model.params;
    let k = p.k();
    let z = &trace.liht.z;
    let value = loss(trace.y.view(), y_gt, z.view(), z_gt, cfg.alpha, cfg.beta)
        .expect("shapes checked by caller");

    let mut dy = (&trace.y - &y_gt) * (2.0 * cfg.alpha / k as f64);
    if let Some(extra) = dy_extra {
        dy += extra;
    }

    let mut d_past = None;
    let dyt = match &trace.refined {
        None => dy,
        Some(r) => {
            let a = &trace.context;
            let dy_gated = &dy * &r.gate;
            let dp = Zip::from(&dy_gated).and(&r.pre_add).map_collect(|&g, &pa| if pa > 0.0 { g } else { 0.0 });
            grads.b += &dp;
            add_outer(&mut grads.u, 1.0, dp.view(), a.view());
            let mut da = p.u.t().dot(&dp);
            if p.hyper.variant.uses_mask_branch() {
                let relu = r.pre_add.mapv(|v| v.max(0.0));
                let dq = Zip::from(&dy)
                    .and(&trace.y_tilde)
                    .and(&relu)
                    .and(&r.gate)
                    .map_collect(|&d, &yt, &rl, &g| d * (yt + rl) * g * (1.0 - g));
                add_outer(&mut grads.v, 1.0, dq.view(), a.view());
                da += &p.v.t().dot(&dq);
            }
            let y_past = &trace.past;
            let w = &trace.weights;
            let dw = y_past.dot(&da);
            let dot = w.dot(&dw);
            let dscore = w * &(dw - dot);
            let inv_sqrt_k = 1.0 / (k as f64).sqrt();
            let mut dyt = dy_gated;
            dyt.scaled_add(inv_sqrt_k, &y_past.t().dot(&dscore));
            if want_past {
                let mut dpast = Array2::zeros(y_past.dim());
                add_outer(&mut dpast, 1.0, w.view(), da.view());
                add_outer(&mut dpast, inv_sqrt_k, dscore.view(), trace.y_tilde.view());
                d_past = Some(dpast);
            }
            dyt
        }
    };

    // y~ = z_re^2 + z_im^2, plus the direct DFT loss
    let mut dz = (z - &z_gt) * (2.0 * cfg.beta / (2 * k) as f64);
    for i in 0..k {
        dz[i] += 2.0 * z[i] * dyt[i];
        dz[i + k] += 2.0 * z[i + k] * dyt[i];
    }
    let dv = keep_support(&dz, &trace.liht.support);
    let z0 = &trace.liht.z0;
    let inv_mu = 1.0 / p.hyper.mu;
    let dz0 = model.recur_t_apply(dv.view());
    match &mut grads.s {
        Some(gs) => add_outer(gs, 1.0, dv.view(), z0.view()),
        None => {
            let wz0 = sparse_matvec(&p.w, z0.view());
            let wdv = sparse_matvec(&p.w, dv.view());
            add_outer(&mut grads.w, -inv_mu, wz0.view(), dv.view());
            add_outer(&mut grads.w, -inv_mu, wdv.view(), z0.view());
        }
    }
    let du = &dv + &keep_support(&dz0, &trace.liht.support0);
    add_outer(&mut grads.w, inv_mu, trace.liht.h_bar.view(), du.view());
    (value, d_past)
}

/// Loss and gradients of a single window given the buffer contents.
pub fn backward(
    window: &CirWindow,
    buf: &PastBuffer,
    model: &Model,
    y_gt: ArrayView1<'_, f64>,
    z_gt: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
) -> Result<(f64, Gradients)> {
    check_targets(model.params.k(), y_gt, z_gt)?;
    let trace = forward_trace(window, buf, model);
    let mut grads = Gradients::zeros_like(&model.params);
    let (value, _) = window_backward(&trace, y_gt, z_gt, cfg, model, None, false, &mut grads);
    grads.check_finite()?;
    Ok((value, grads))
}

fn check_targets(k: usize, y_gt: ArrayView1<'_, f64>, z_gt: ArrayView1<'_, f64>) -> Result<()> {
    if y_gt.len() != k || z_gt.len() != 2 * k {
        return Err(Error::Shape(format!(
            "targets must have lengths {k} and {}, got {} and {}",
            2 * k,
            y_gt.len(),
            z_gt.len()
        )));
    }
    Ok(())
}

/// Forward and backward over a whole sequence. The loss is the mean over
/// windows whose reference spectrum is not identically zero; the gradient is
/// that of the mean. Returns `None` when every window is degenerate.
pub fn sequence_backward(
    windows: &[CirWindow],
    gt: &GroundTruth,
    model: &Model,
    cfg: &TrainConfig,
) -> Result<Option<(f64, Gradients)>> {
    let k = model.params.k();
    let mut buf = PastBuffer::new(model.hyper().n_past, k);
    let traces: Vec<WindowTrace> = windows
        .iter()
        .map(|w| {
            let tr = forward_trace(w, &buf, model);
            buf.push(tr.y.clone());
            tr
        })
        .collect();
    let active: Vec<bool> = (0..windows.len()).map(|t| !gt.is_degenerate(t)).collect();
    let n_active = active.iter().filter(|&&a| a).count();
    if n_active == 0 {
        return Ok(None);
    }
    let weight = 1.0 / n_active as f64;
    let bptt = !cfg.detach_past && model.hyper().variant.uses_attention();
    let mut carried: Vec<Array1<f64>> = vec![Array1::zeros(k); if bptt { windows.len() } else { 0 }];
    let mut grads = Gradients::zeros_like(&model.params);
    let mut total = 0.0;
    let wcfg = TrainConfig { alpha: cfg.alpha * weight, beta: cfg.beta * weight, ..cfg.clone() };
    for t in (0..windows.len()).rev() {
        let y_gt = gt.spectra.row(t);
        let z_gt = gt.z_scaled(t);
        check_targets(k, y_gt, z_gt.view())?;
        let lcfg = if active[t] {
            wcfg.clone()
        } else {
            TrainConfig { alpha: 0.0, beta: 0.0, ..cfg.clone() }
        };
        let extra = if bptt { Some(&carried[t]) } else { None };
        let (value, d_past) =
            window_backward(&traces[t], y_gt, z_gt.view(), &lcfg, model, extra, bptt, &mut grads);
        total += value;
        if let Some(dp) = d_past {
            for (i, row) in dp.rows().into_iter().enumerate() {
                if let Some(src) = t.checked_sub(i + 1) {
                    carried[src] += &row;
                }
            }
        }
    }
    grads.check_finite()?;
    Ok(Some((total, grads)))
}

/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(p: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: Gradients::zeros_like(p), v: Gradients::zeros_like(p), step: 0, beta1, beta2, eps }
    }
}

fn adam_tensor<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr_t: f64,
    st: (f64, f64, f64),
) {
    let (b1, b2, eps_hat) = st;
    Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr_t * *m / (v.sqrt() + eps_hat);
    });
}

/// One Adam update with bias correction.
pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    // p -= lr * m_hat / (sqrt(v_hat) + eps), rewritten on the raw moments
    let lr_t = lr * bc2.sqrt() / bc1;
    let st = (state.beta1, state.beta2, state.eps * bc2.sqrt());
    adam_tensor(&mut params.w, &grads.w, &mut state.m.w, &mut state.v.w, lr_t, st);
    adam_tensor(&mut params.u, &grads.u, &mut state.m.u, &mut state.v.u, lr_t, st);
    adam_tensor(&mut params.v, &grads.v, &mut state.m.v, &mut state.v.v, lr_t, st);
    adam_tensor(&mut params.b, &grads.b, &mut state.m.b, &mut state.v.b, lr_t, st);
    if let (Some(p), Some(g), Some(m), Some(v)) =
        (params.s.as_mut(), grads.s.as_ref(), state.m.s.as_mut(), state.v.s.as_mut())
    {
        adam_tensor(p, g, m, v, lr_t, st);
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config: TrainConfig,
    pub step: u64,
    pub adam: AdamState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Mean window loss of every optimizer step.
    pub step_losses: Vec<f64>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,steps,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| format!("{v:.9e}")).unwrap_or_default();
            s.push_str(&format!("{},{},{:.9e},{}\n", e.epoch, e.steps, e.train_loss, val));
        }
        s
    }
}

/// A sequence prepared for training: complete windows plus the cached
/// ground truth.
pub struct Prepared {
    pub label: String,
    pub windows: Vec<CirWindow>,
    pub gt: GroundTruth,
}

pub fn prepare(seqs: &[CirSequence], k: usize, shift: usize) -> Result<Vec<Prepared>> {
    seqs.par_iter()
        .map(|s| {
            let gt = ground_truth_spectrogram(s, k, shift)?;
            let windows = frame_windows(&s.fully_available(), k, shift)?;
            Ok(Prepared { label: s.meta.label.clone(), windows, gt })
        })
        .collect()
}

fn masked_windows(windows: &[CirWindow], k: usize, p_max: f64, rng: &mut ChaCha8Rng) -> Vec<CirWindow> {
    windows
        .iter()
        .map(|w| w.masked(&gen_window_mask(k, p_max, rng)).expect("generated masks are non-empty"))
        .collect()
}

const MASK_STREAM: u64 = 0x5354_4152_4d41_534b;
const VAL_STREAM: u64 = 0x5354_4152_5641_4c00;

/// Mean per-window loss over `data` with masks drawn from `seed`.
pub fn evaluate_loss(data: &[Prepared], model: &Model, cfg: &TrainConfig, seed: u64) -> Result<Option<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut n = 0usize;
    for item in data {
        let windows = masked_windows(&item.windows, cfg.k, cfg.p_max, &mut rng);
        let mut buf = PastBuffer::new(cfg.n_past, cfg.k);
        for (t, w) in windows.iter().enumerate() {
            let tr = forward_trace(w, &buf, model);
            buf.push(tr.y.clone());
            if item.gt.is_degenerate(t) {
                continue;
            }
            let z_gt = item.gt.z_scaled(t);
            sum += loss(tr.y.view(), item.gt.spectra.row(t), tr.liht.z.view(), z_gt.view(), cfg.alpha, cfg.beta)?;
            n += 1;
        }
    }
    Ok((n > 0).then(|| sum / n as f64))
}

/// Sequence indices for one epoch with label oversampling applied.
fn epoch_order(data: &[Prepared], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order = Vec::with_capacity(data.len());
    for (i, item) in data.iter().enumerate() {
        let factor = cfg.oversample.get(&item.label).copied().unwrap_or(1.0);
        let whole = factor.floor() as usize;
        let extra = usize::from(rng.random::<f64>() < factor - factor.floor());
        order.extend(std::iter::repeat_n(i, whole + extra));
    }
    order.shuffle(rng);
    order
}

/// Trains from scratch (or from `resume`) on `train_set`, reporting
/// validation loss on `val_set` after every epoch. One Adam step per
/// sequence.
pub fn train(
    train_set: &[CirSequence],
    val_set: &[CirSequence],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let train_data = prepare(train_set, cfg.k, cfg.shift)?;
    let val_data = prepare(val_set, cfg.k, cfg.shift)?;
    train_prepared(&train_data, &val_data, cfg, resume)
}

pub fn train_prepared(
    train_data: &[Prepared],
    val_data: &[Prepared],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
) -> Result<(Checkpoint, History)> {
    train_prepared_with(train_data, val_data, cfg, resume, |_, _| Ok(()))
}

/// As [`train_prepared`], calling `on_epoch` with the checkpoint reached at
/// the end of every epoch.
pub fn train_prepared_with(
    train_data: &[Prepared],
    val_data: &[Prepared],
    cfg: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&Checkpoint, &EpochRecord) -> Result<()>,
) -> Result<(Checkpoint, History)> {
    cfg.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (params, mut adam, mut step) = match resume {
        Some(c) => (c.params, c.adam, c.step),
        None => {
            let p = param_init(cfg.hyper(), cfg.seed)?;
            let a = AdamState::new(&p, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
            (p, a, 0)
        }
    };
    if params.hyper != cfg.hyper() {
        return Err(Error::Config("checkpoint hyperparameters differ from the training config".into()));
    }
    let mut model = Model::new(params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ MASK_STREAM);
    let mut history = History::default();

    for epoch in 0..cfg.epochs {
        let order = epoch_order(train_data, cfg, &mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0usize;
        for idx in order {
            let item = &train_data[idx];
            let windows = masked_windows(&item.windows, cfg.k, cfg.p_max, &mut rng);
            let Some((value, grads)) = sequence_backward(&windows, &item.gt, &model, cfg)? else {
                continue;
            };
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, step: step as usize, loss: value });
            }
            adam_step(&mut model.params, &grads, &mut adam, cfg.lr);
            model.sync();
            step += 1;
            epoch_sum += value;
            epoch_n += 1;
            history.step_losses.push(value);
        }
        let val_loss = if val_data.is_empty() {
            None
        } else {
            evaluate_loss(val_data, &model, cfg, cfg.seed ^ VAL_STREAM)?
        };
        let train_loss = if epoch_n > 0 { epoch_sum / epoch_n as f64 } else { f64::NAN };
        log::info!("epoch {epoch}: train loss {train_loss:.6e}, val loss {val_loss:?}");
        let record = EpochRecord { epoch, steps: step, train_loss, val_loss };
        let snapshot = Checkpoint { params: model.params.clone(), config: cfg.clone(), step, adam: adam.clone() };
        on_epoch(&snapshot, &record)?;
        history.epochs.push(record);
    }

    Ok((Checkpoint { params: model.params, config: cfg.clone(), step, adam }, history))
}

/// Splits sequences (not windows) into `(train, val)` with a seeded shuffle.
/// At least one sequence goes to validation when `val_fraction > 0` and
/// there are two or more sequences.
pub fn split_by_sequence<T: Clone>(items: &[T], val_fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut n_val = (val_fraction * items.len() as f64).round() as usize;
    if val_fraction > 0.0 && items.len() >= 2 {
        n_val = n_val.max(1);
    }
    n_val = n_val.min(items.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| items[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| items[i].clone()).collect();
    (train, val)
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"STAR";
const FLAG_HAS_S: u32 = 1 << 8;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<'a>(out: &mut Vec<u8>, t: impl ExactSizeIterator<Item = &'a f64>) {
    put_u64(out, t.len() as u64);
    for v in t {
        put_f64(out, *v);
    }
}

fn put_grads(out: &mut Vec<u8>, g: &Gradients) {
    put_tensor(out, g.w.iter());
    put_tensor(out, g.u.iter());
    put_tensor(out, g.v.iter());
    put_tensor(out, g.b.iter());
    if let Some(s) = &g.s {
        put_tensor(out, s.iter());
    }
}

pub fn encode_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let p = &c.params;
    let h = &p.hyper;
    let mut out = Vec::new();
    out.extend_from_slice(CKPT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, h.k as u32);
    put_u32(&mut out, h.variant.tag() | if p.s.is_some() { FLAG_HAS_S } else { 0 });
    put_u32(&mut out, h.omega as u32);
    put_f64(&mut out, h.mu);
    put_u32(&mut out, h.n_past as u32);
    put_tensor(&mut out, p.w.iter());
    put_tensor(&mut out, p.u.iter());
    put_tensor(&mut out, p.v.iter());
    put_tensor(&mut out, p.b.iter());
    if let Some(s) = &p.s {
        put_tensor(&mut out, s.iter());
    }
    put_u64(&mut out, c.adam.step);
    put_f64(&mut out, c.adam.beta1);
    put_f64(&mut out, c.adam.beta2);
    put_f64(&mut out, c.adam.eps);
    put_grads(&mut out, &c.adam.m);
    put_grads(&mut out, &c.adam.v);
    put_u64(&mut out, c.step);
    let meta = serde_json::to_vec(&c.config).expect("config is always serializable");
    put_u32(&mut out, meta.len() as u32);
    out.extend_from_slice(&meta);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.pos, format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u64(what)? as usize;
        if n != expected {
            return Err(Error::format(at, format!("{what}: expected {expected} values, found {n}")));
        }
        (0..n).map(|_| self.f64(what)).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let data = self.tensor(rows * cols, what)?;
        Ok(Array2::from_shape_vec((rows, cols), data).unwrap())
    }

    fn grads(&mut self, k: usize, has_s: bool, what: &str) -> Result<Gradients> {
        Ok(Gradients {
            w: self.matrix(2 * k, 2 * k, what)?,
            u: self.matrix(k, k, what)?,
            v: self.matrix(k, k, what)?,
            b: Array1::from(self.tensor(k, what)?),
            s: if has_s { Some(self.matrix(2 * k, 2 * k, what)?) } else { None },
        })
    }
}

/// Decodes a checkpoint; with `expected_k`, a different window length is an error.
pub fn decode_checkpoint(buf: &[u8], expected_k: Option<usize>) -> Result<Checkpoint> {
    let mut r = Cursor { buf, pos: 0 };
    if r.take(4, "magic")? != CKPT_MAGIC {
        return Err(Error::format(0, "bad magic, expected STAR"));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let k = r.u32("k")? as usize;
    if let Some(want) = expected_k {
        if want != k {
            return Err(Error::Shape(format!("checkpoint has K = {k}, expected K = {want}")));
        }
    }
    if k == 0 {
        return Err(Error::format(8, "K must be positive"));
    }
    let flags = r.u32("flags")?;
    let variant = Variant::from_tag(flags & 0xff)
        .ok_or_else(|| Error::format(12, format!("unknown variant tag {}", flags & 0xff)))?;
    let has_s = flags & FLAG_HAS_S != 0;
    if has_s != variant.learns_s() {
        return Err(Error::format(12, "S flag inconsistent with variant"));
    }
    let omega = r.u32("omega")? as usize;
    let mu = r.f64("mu")?;
    let n_past = r.u32("n_past")? as usize;
    let hyper = Hyper { k, omega, mu, n_past, variant };
    let w = r.matrix(2 * k, 2 * k, "W")?;
    let u = r.matrix(k, k, "U")?;
    let v = r.matrix(k, k, "V")?;
    let b = Array1::from(r.tensor(k, "b")?);
    let s = if has_s { Some(r.matrix(2 * k, 2 * k, "S")?) } else { None };
    let params = ModelParams { hyper, w, u, v, b, s };
    let adam_step = r.u64("adam step")?;
    let beta1 = r.f64("adam beta1")?;
    let beta2 = r.f64("adam beta2")?;
    let eps = r.f64("adam eps")?;
    let m = r.grads(k, has_s, "first moment")?;
    let v2 = r.grads(k, has_s, "second moment")?;
    let step = r.u64("step")?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let config: TrainConfig = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| Error::format(meta_at, format!("bad metadata: {e}")))?;
    if r.pos != buf.len() {
        return Err(Error::format(r.pos, "trailing bytes after metadata"));
    }
    Ok(Checkpoint {
        params,
        config,
        step,
        adam: AdamState { m, v: v2, step: adam_step, beta1, beta2, eps },
    })
}

pub fn save_checkpoint(path: &Path, c: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, expected_k: Option<usize>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected_k)
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check
// ---------------------------------------------------------------------------

/// Worst relative error of one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub tensor: &'static str,
    pub max_rel_err: f64,
    pub entries: usize,
}

/// Loss of one window with the thresholding supports pinned.
fn pinned_loss(
    window: &CirWindow,
    buf: &PastBuffer,
    model: &Model,
    supports: (&[usize], &[usize]),
    y_gt: ArrayView1<'_, f64>,
    z_gt: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
) -> f64 {
    use crate::model::{attention_context, md_convert, realize_window, refine};
    let p = &model.params;
    let h_bar = realize_window(window);
    let proj = p.w.t().dot(&h_bar) / p.hyper.mu;
    let z0 = keep_support(&proj, supports.0);
    let pre = p.recurrence().dot(&z0) + &proj;
    let z = keep_support(&pre, supports.1);
    let yt = md_convert(z.view());
    let y = if p.hyper.variant.uses_attention() {
        let (a, _) = attention_context(yt.view(), buf);
        refine(yt.view(), a.view(), p)
    } else {
        yt
    };
    loss(y.view(), y_gt, z.view(), z_gt, cfg.alpha, cfg.beta).unwrap()
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs() / 1e-7
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Central differences of the window loss against [`backward`], with the
/// thresholding supports held at their unperturbed values.
pub fn gradient_check(
    window: &CirWindow,
    buf: &PastBuffer,
    params: &ModelParams,
    y_gt: ArrayView1<'_, f64>,
    z_gt: ArrayView1<'_, f64>,
    cfg: &TrainConfig,
    eps: f64,
) -> Result<Vec<GradCheck>> {
    let model = Model::new(params.clone());
    let (_, grads) = backward(window, buf, &model, y_gt, z_gt, cfg)?;
    let trace = forward_trace(window, buf, &model);
    let s0 = trace.liht.support0.clone();
    let s1 = trace.liht.support.clone();

    type Pick = fn(&mut ModelParams) -> Option<&mut [f64]>;
    let picks: [(&'static str, Pick, Option<&Array2<f64>>); 5] = [
        ("W", |p| p.w.as_slice_mut(), Some(&grads.w)),
        ("U", |p| p.u.as_slice_mut(), Some(&grads.u)),
        ("V", |p| p.v.as_slice_mut(), Some(&grads.v)),
        ("b", |p| p.b.as_slice_mut(), None),
        ("S", |p| p.s.as_mut().and_then(|s| s.as_slice_mut()), grads.s.as_ref()),
    ];
    let mut report = Vec::new();
    for (name, pick, analytic) in picks {
        let analytic: Vec<f64> = match (name, analytic) {
            ("b", _) => grads.b.to_vec(),
            (_, Some(a)) => a.iter().cloned().collect(),
            _ => continue,
        };
        let mut worst = 0.0f64;
        for (i, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                pick(&mut p).expect("standard layout")[i] += delta;
                let m = Model::new(p);
                pinned_loss(window, buf, &m, (&s0, &s1), y_gt, z_gt, cfg)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            worst = worst.max(rel_err(a, numeric));
        }
        report.push(GradCheck { tensor: name, max_rel_err: worst, entries: analytic.len() });
    }
    Ok(report)
}

/// Random window, filled buffer, perturbed parameters and targets for a
/// gradient check.
pub struct GradCase {
    pub window: CirWindow,
    pub buf: PastBuffer,
    pub params: ModelParams,
    pub y_gt: Array1<f64>,
    pub z_gt: Array1<f64>,
}

pub fn gradcheck_case(cfg: &TrainConfig, seed: u64) -> Result<GradCase> {
    let k = cfg.k;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = param_init(cfg.hyper(), seed)?;
    // move away from the init so the check does not rely on W^T W = I
    params.w.mapv_inplace(|x| x + 0.05 * rng.random_range(-1.0..1.0));
    if let Some(s) = &mut params.s {
        s.mapv_inplace(|x| x + 0.05 * rng.random_range(-1.0..1.0));
    }
    let values: Vec<Complex64> = (0..k)
        .map(|_| Complex64::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect();
    let mask: Vec<bool> = (0..k).map(|i| i == 0 || rng.random::<f64>() < 0.6).collect();
    let window = CirWindow::new(&values, &mask, 0)?;
    let mut buf = PastBuffer::new(cfg.n_past, k);
    for _ in 0..cfg.n_past {
        buf.push(Array1::from_shape_simple_fn(k, || rng.random_range(0.0..1.0)));
    }
    let y_gt = Array1::from_shape_simple_fn(k, || rng.random_range(0.0..1.0));
    let z_gt = Array1::from_shape_simple_fn(2 * k, || rng.random_range(-1.0..1.0));
    Ok(GradCase { window, buf, params, y_gt, z_gt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, SynthConfig};

    fn small_cfg(k: usize) -> TrainConfig {
        TrainConfig { k, shift: k / 2, omega: 3.min(k), n_past: 3, ..TrainConfig::default() }
    }

    fn random_instance(k: usize, seed: u64, variant: Variant) -> (CirWindow, PastBuffer, ModelParams, Array1<f64>, Array1<f64>) {
        let c = gradcheck_case(&TrainConfig { variant, ..small_cfg(k) }, seed).unwrap();
        (c.window, c.buf, c.params, c.y_gt, c.z_gt)
    }

    #[test]
    fn loss_cases() {
        let y = Array1::from(vec![0.2, 0.4]);
        let z = Array1::from(vec![1.0, -1.0, 0.5, 0.0]);
        assert_eq!(loss(y.view(), y.view(), z.view(), z.view(), 0.9, 0.1).unwrap(), 0.0);
        let y2 = Array1::from(vec![0.0, 0.0]);
        let l = loss(y.view(), y2.view(), z.view(), Array1::zeros(4).view(), 1.0, 0.0).unwrap();
        assert!((l - 0.1).abs() < 1e-15);
        assert!(loss(y.view(), z.view(), z.view(), z.view(), 1.0, 1.0).is_err());
        let d = TrainConfig::default();
        assert_eq!((d.alpha, d.beta, d.lr, d.epochs), (0.9, 0.1, 2e-4, 5));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for k in [4usize, 8] {
            for (seed, variant) in [(1, Variant::Full), (2, Variant::OnlyAdd), (3, Variant::NoAttention), (4, Variant::LearnS)] {
                let (w, buf, p, y_gt, z_gt) = random_instance(k, seed + k as u64, variant);
                let cfg = TrainConfig { variant, ..small_cfg(k) };
                let report = gradient_check(&w, &buf, &p, y_gt.view(), z_gt.view(), &cfg, 1e-5).unwrap();
                for r in report {
                    assert!(r.max_rel_err < 1e-4, "K={k} {variant:?} {}: {}", r.tensor, r.max_rel_err);
                }
            }
        }
    }

    #[test]
    fn zero_loss_weights_give_zero_gradients() {
        let (w, buf, p, y_gt, z_gt) = random_instance(8, 5, Variant::Full);
        let cfg = TrainConfig { alpha: 0.0, beta: 0.0, ..small_cfg(8) };
        let (l, g) = backward(&w, &buf, &Model::new(p.clone()), y_gt.view(), z_gt.view(), &cfg).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g, Gradients::zeros_like(&p));
    }

    #[test]
    fn bias_gradient_vanishes_where_relu_is_off() {
        let (w, buf, mut p, y_gt, z_gt) = random_instance(8, 6, Variant::Full);
        for i in (0..8).step_by(2) {
            p.b[i] = -10.0;
        }
        let model = Model::new(p);
        let (_, g) = backward(&w, &buf, &model, y_gt.view(), z_gt.view(), &small_cfg(8)).unwrap();
        let tr = forward_trace(&w, &buf, &model);
        let pre = &tr.refined.unwrap().pre_add;
        for i in 0..8 {
            if pre[i] <= 0.0 {
                assert_eq!(g.b[i], 0.0);
                assert!(g.u.row(i).iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn bptt_gradient_matches_finite_differences_of_sequence_loss() {
        let k = 4;
        let cfg = TrainConfig { detach_past: false, p_max: 0.0, ..small_cfg(k) };
        let scfg = SynthConfig { k, shift: 2, q_min: 1, q_max: 1, v_max: 1.0, t_c: 1e-3, f_c: 1e9, ..SynthConfig::default() };
        let seq = synth_dataset(&scfg, 1, 6).unwrap().remove(0);
        let prep = prepare(&[seq], k, 2).unwrap().remove(0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = param_init(cfg.hyper(), 1).unwrap();
        params.u.mapv_inplace(|x| x + rng.random_range(0.0..0.3));
        params.b.mapv_inplace(|x| x.abs() + 0.1);
        let model = Model::new(params.clone());
        let (_, g) = sequence_backward(&prep.windows, &prep.gt, &model, &cfg).unwrap().unwrap();
        let (_, g_detached) = sequence_backward(&prep.windows, &prep.gt, &model, &TrainConfig { detach_past: true, ..cfg.clone() }).unwrap().unwrap();
        assert_ne!(g.u, g_detached.u);

        let seq_loss = |p: &ModelParams| {
            let m = Model::new(p.clone());
            sequence_backward(&prep.windows, &prep.gt, &m, &cfg).unwrap().unwrap().0
        };
        let eps = 1e-6;
        for i in 0..k {
            for j in 0..k {
                let mut plus = params.clone();
                plus.u[[i, j]] += eps;
                let mut minus = params.clone();
                minus.u[[i, j]] -= eps;
                let numeric = (seq_loss(&plus) - seq_loss(&minus)) / (2.0 * eps);
                assert!(rel_err(g.u[[i, j]], numeric) < 1e-4, "U[{i},{j}]: {} vs {numeric}", g.u[[i, j]]);
            }
        }
    }

    #[test]
    fn detached_gradient_ignores_future_windows() {
        let k = 8;
        let cfg = TrainConfig { p_max: 0.0, ..small_cfg(k) };
        let scfg = SynthConfig { k, shift: 4, q_max: 2, v_max: 1.0, t_c: 1e-3, f_c: 1e9, ..SynthConfig::default() };
        let seq = synth_dataset(&scfg, 1, 8).unwrap().remove(0);
        let prep = prepare(&[seq], k, 4).unwrap().remove(0);
        let model = Model::new(param_init(cfg.hyper(), 2).unwrap());
        let mut buf = PastBuffer::new(cfg.n_past, k);
        let mut per_window = Vec::new();
        for (t, w) in prep.windows.iter().enumerate() {
            let z_gt = prep.gt.z_scaled(t);
            per_window.push(backward(w, &buf, &model, prep.gt.spectra.row(t), z_gt.view(), &cfg).unwrap().1);
            buf.push(forward_trace(w, &buf, &model).y);
        }
        // window 2's gradient from a truncated run equals the one above
        let mut buf = PastBuffer::new(cfg.n_past, k);
        for w in &prep.windows[..2] {
            buf.push(forward_trace(w, &buf, &model).y);
        }
        let z_gt = prep.gt.z_scaled(2);
        let g2 = backward(&prep.windows[2], &buf, &model, prep.gt.spectra.row(2), z_gt.view(), &cfg).unwrap().1;
        assert_eq!(g2, per_window[2]);
    }

    #[test]
    fn adam_behaviour() {
        let p0 = param_init(Hyper { k: 4, ..Hyper::default().clone_with_omega(2) }, 0).unwrap();
        let mut p = p0.clone();
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let zero = Gradients::zeros_like(&p);
        adam_step(&mut p, &zero, &mut st, 1e-2);
        assert_eq!(p, p0);

        let mut g = Gradients::zeros_like(&p);
        g.b.fill(0.5);
        g.u.fill(-3.0);
        let mut st = AdamState::new(&p, 0.9, 0.999, 1e-8);
        let lr = 1e-3;
        for _ in 0..200 {
            let before = p.clone();
            adam_step(&mut p, &g, &mut st, lr);
            let db = &before.b - &p.b;
            let du = &before.u - &p.u;
            assert!(db.iter().all(|&d| (d - lr).abs() < 1e-9 * lr.max(1.0) + 1e-10));
            assert!(du.iter().all(|&d| (d + lr).abs() < 1e-9));
        }

        let mut a = p0.clone();
        let mut b = p0.clone();
        let mut sa = AdamState::new(&a, 0.9, 0.999, 1e-8);
        let mut sb = AdamState::new(&b, 0.9, 0.999, 1e-8);
        for i in 0..10 {
            let mut g = Gradients::zeros_like(&a);
            g.w.fill(i as f64 * 0.1 - 0.3);
            adam_step(&mut a, &g, &mut sa, 1e-3);
            adam_step(&mut b, &g, &mut sb, 1e-3);
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    impl Hyper {
        fn clone_with_omega(self, omega: usize) -> Self {
            Self { omega, ..self }
        }
    }

    fn tiny_data(n: usize, seed: u64) -> Vec<CirSequence> {
        let scfg = SynthConfig { k: 16, shift: 8, t_c: 1e-3, f_c: 1e9, q_max: 2, v_max: 20.0, freq_walk_std: 2.0, seed, ..SynthConfig::default() };
        synth_dataset(&scfg, n, 12).unwrap()
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig { k: 16, shift: 8, omega: 3, n_past: 3, epochs: 2, lr: 1e-3, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = tiny_data(2, 0);
        let cfg = TrainConfig { epochs: 0, ..tiny_cfg() };
        let (ck, hist) = train(&data, &[], &cfg, None).unwrap();
        assert_eq!(ck.params, param_init(cfg.hyper(), cfg.seed).unwrap());
        assert_eq!(ck.step, 0);
        assert!(hist.epochs.is_empty());
        assert!(matches!(train(&[], &[], &cfg, None), Err(Error::EmptyDataset)));
    }

    #[test]
    fn training_is_deterministic_and_finite() {
        let data = tiny_data(4, 1);
        let val = tiny_data(1, 100);
        let cfg = tiny_cfg();
        let (a, ha) = train(&data, &val, &cfg, None).unwrap();
        let (b, hb) = train(&data, &val, &cfg, None).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(a.step, 8);
        assert!(ha.step_losses.iter().all(|l| l.is_finite()));
        assert!(ha.epochs.iter().all(|e| e.val_loss.unwrap().is_finite()));
    }

    #[test]
    fn full_measurement_training_reduces_loss() {
        let data = tiny_data(8, 2);
        let cfg = TrainConfig { p_max: 0.0, epochs: 6, lr: 3e-3, ..tiny_cfg() };
        let prepared = prepare(&data, 16, 8).unwrap();
        let init = Model::new(param_init(cfg.hyper(), cfg.seed).unwrap());
        let before = evaluate_loss(&prepared, &init, &cfg, 0).unwrap().unwrap();
        let (ck, _) = train_prepared(&prepared, &[], &cfg, None).unwrap();
        let after = evaluate_loss(&prepared, &Model::new(ck.params), &cfg, 0).unwrap().unwrap();
        assert!(after < 0.85 * before, "before {before}, after {after}");
    }

    #[test]
    fn oversampling_repeats_labels() {
        let mut data = tiny_data(3, 3);
        data[1].meta.label = "run".into();
        let prepared = prepare(&data, 16, 8).unwrap();
        let mut cfg = tiny_cfg();
        cfg.oversample.insert("run".into(), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let order = epoch_order(&prepared, &cfg, &mut rng);
        assert_eq!(order.len(), 5);
        assert_eq!(order.iter().filter(|&&i| i == 1).count(), 3);
    }

    #[test]
    fn split_is_by_sequence() {
        let items: Vec<usize> = (0..100).collect();
        let (train, val) = split_by_sequence(&items, 0.2, 4);
        assert_eq!(train.len(), 80);
        assert_eq!(val.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&val).cloned().collect();
        all.sort();
        assert_eq!(all, items);
        let (t2, v2) = split_by_sequence(&items[..3], 0.01, 4);
        assert_eq!((t2.len(), v2.len()), (2, 1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let data = tiny_data(2, 4);
        let cfg = TrainConfig { epochs: 1, variant: Variant::LearnS, ..tiny_cfg() };
        let (ck, _) = train(&data, &[], &cfg, None).unwrap();
        let bytes = encode_checkpoint(&ck);
        let back = decode_checkpoint(&bytes, Some(16)).unwrap();
        assert_eq!(back, ck);
        assert_eq!(encode_checkpoint(&back), bytes);

        let windows = frame_windows(&data[0], 16, 8).unwrap();
        let y1 = crate::model::star_forward_sequence(&windows, &Model::new(ck.params.clone()));
        let y2 = crate::model::star_forward_sequence(&windows, &Model::new(back.params));
        assert_eq!(y1, y2);

        assert!(matches!(decode_checkpoint(&bytes, Some(64)), Err(Error::Shape(_))));
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad, None), Err(Error::Format { offset: 0, .. })));
        let mut bad_version = bytes.clone();
        bad_version[4] = 9;
        assert!(matches!(decode_checkpoint(&bad_version, None), Err(Error::Format { .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3], None).is_err());
    }
}
