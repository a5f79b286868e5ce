//! Classical sparse recovery over the partial-Fourier model
//! `h = M_t F_K z + n`: IHT, ISTA (LASSO) and OMP, plus the full-window IHT
//! ground truth used to train and score the learned model.
//!
//! The solvers work in complex arithmetic. The Gram matrix `Phi^H Phi` of a
//! row-selected unitary DFT only depends on `(b - a) mod K`, so it is stored
//! as a single length-K vector and applied in `O(K * nnz(z))`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::min_max_normalize;
use crate::model::md_convert;
use crate::numerics::{
    cnorm, hard_threshold_complex, inverse_dft_matrix, realize_matrix, realize_vector,
    soft_threshold_complex,
};
use crate::synth::{frame_windows, CirSequence, CirWindow};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Shared unitary inverse DFT matrix of size `k`.
pub fn dft(k: usize) -> Arc<Array2<Complex64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Array2<Complex64>>>>> = OnceLock::new();
    let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
    map.entry(k).or_insert_with(|| Arc::new(inverse_dft_matrix(k))).clone()
}

/// Row-selected inverse DFT `Phi = M_t F_K`.
#[derive(Debug, Clone)]
pub struct SensingOperator {
    pub mask: Vec<bool>,
    rows: Vec<usize>,
    f: Arc<Array2<Complex64>>,
    /// `gram_kernel[d] = (Phi^H Phi)[a, a + d mod K]`.
    gram_kernel: Vec<Complex64>,
}

impl SensingOperator {
    pub fn new(mask: &[bool]) -> Result<Self> {
        let rows: Vec<usize> = mask.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        if rows.is_empty() {
            return Err(Error::EmptyMask);
        }
        let k = mask.len();
        let gram_kernel = (0..k)
            .map(|d| {
                rows.iter()
                    .map(|&n| Complex64::from_polar(1.0, 2.0 * PI * ((n * d) % k) as f64 / k as f64))
                    .sum::<Complex64>()
                    / k as f64
            })
            .collect();
        Ok(Self { mask: mask.to_vec(), rows, f: dft(k), gram_kernel })
    }

    pub fn k(&self) -> usize {
        self.mask.len()
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// `Phi z`, skipping zero entries of `z`.
    pub fn apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![ZERO; self.rows.len()];
        for (col, &zc) in z.iter().enumerate() {
            if zc == ZERO {
                continue;
            }
            for (o, &r) in out.iter_mut().zip(&self.rows) {
                *o += self.f[[r, col]] * zc;
            }
        }
        out
    }

    /// `Phi^H r` for `r` of length `m_t`.
    pub fn adjoint(&self, r: &[Complex64]) -> Vec<Complex64> {
        let k = self.k();
        let mut out = vec![ZERO; k];
        for (&row, &rv) in self.rows.iter().zip(r) {
            if rv == ZERO {
                continue;
            }
            for (col, o) in out.iter_mut().enumerate() {
                *o += self.f[[row, col]].conj() * rv;
            }
        }
        out
    }

    /// `Phi^H Phi z`, skipping zero entries of `z`.
    pub fn gram_apply(&self, z: &[Complex64]) -> Vec<Complex64> {
        let k = self.k();
        let mut out = vec![ZERO; k];
        for (b, &zb) in z.iter().enumerate() {
            if zb == ZERO {
                continue;
            }
            for (a, o) in out.iter_mut().enumerate() {
                *o += self.gram_kernel[(b + k - a) % k] * zb;
            }
        }
        out
    }

    /// Available measurements of a window, in row order.
    pub fn measurements(&self, window: &CirWindow) -> Vec<Complex64> {
        self.rows.iter().map(|&r| window.values[r]).collect()
    }

    /// Dense complex `Phi` (m_t x K).
    pub fn matrix(&self) -> Array2<Complex64> {
        Array2::from_shape_fn((self.rows.len(), self.k()), |(i, j)| self.f[[self.rows[i], j]])
    }

    /// Realized `Phi'` (2 m_t x 2K).
    pub fn realized(&self) -> Array2<f64> {
        realize_matrix(&self.matrix())
    }
}

pub fn build_sensing(mask: &[bool]) -> Result<SensingOperator> {
    SensingOperator::new(mask)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// Realized DFT estimate, length 2K.
    pub z: Array1<f64>,
    pub iterations: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub diverged: bool,
    /// OMP atoms rejected because the least-squares refit was rank deficient.
    pub skipped_atoms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IhtConfig {
    pub omega: usize,
    pub mu: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IhtConfig {
    fn default() -> Self {
        Self { omega: 5, mu: 20.0, max_iter: 100, tol: 1e-6 }
    }
}

impl IhtConfig {
    /// Settings for runs meant to reach the fixed point. With `mu = 20` the
    /// iteration contracts by `1 - 1/mu` per step, so 100 steps leave ~0.6%.
    pub fn converged() -> Self {
        Self { max_iter: 1000, ..Self::default() }
    }

    pub fn single_iteration() -> Self {
        Self { max_iter: 1, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IstaConfig {
    /// Regularization weight; `None` uses `0.1 * max |Phi^H h|`.
    pub lambda: Option<f64>,
    pub mu: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for IstaConfig {
    fn default() -> Self {
        Self { lambda: None, mu: 20.0, max_iter: 1000, tol: 1e-6 }
    }
}

fn residual_norm(op: &SensingOperator, z: &[Complex64], h: &[Complex64]) -> f64 {
    let pz = op.apply(z);
    pz.iter().zip(h).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
}

fn diff_norm(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Shared gradient-step / threshold loop of IHT and ISTA.
fn thresholded_iteration(
    op: &SensingOperator,
    h: &[Complex64],
    mu: f64,
    max_iter: usize,
    tol: f64,
    threshold: impl Fn(&mut [Complex64]),
) -> SolveReport {
    let inv_mu = 1.0 / mu;
    let g: Vec<Complex64> = op.adjoint(h).into_iter().map(|c| c * inv_mu).collect();
    let mut z = g.clone();
    threshold(&mut z);
    let initial = residual_norm(op, &z, h).max(f64::MIN_POSITIVE);

    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    let mut grow_streak = 0;
    let mut residual = initial;
    for i in 1..=max_iter {
        iterations = i;
        let gz = op.gram_apply(&z);
        let mut next: Vec<Complex64> =
            z.iter().zip(&g).zip(&gz).map(|((&zi, &gi), &qi)| zi + gi - qi * inv_mu).collect();
        threshold(&mut next);
        let step = diff_norm(&next, &z);
        z = next;
        residual = residual_norm(op, &z, h);
        if !residual.is_finite() || residual > 10.0 * initial {
            grow_streak += 1;
            if grow_streak >= 5 || !residual.is_finite() {
                diverged = true;
                break;
            }
        } else {
            grow_streak = 0;
        }
        if step < tol {
            converged = true;
            break;
        }
    }
    SolveReport {
        z: realize_vector(&z),
        iterations,
        final_residual: residual,
        converged,
        diverged,
        skipped_atoms: 0,
    }
}

/// Iterative hard thresholding from `z0 = H(Phi^H h / mu)`.
pub fn iht_solve(window: &CirWindow, cfg: &IhtConfig) -> Result<SolveReport> {
    if cfg.omega == 0 || !(cfg.mu > 0.0) {
        return Err(Error::Config("IHT needs omega >= 1 and mu > 0".into()));
    }
    let op = SensingOperator::new(&window.mask)?;
    let h = op.measurements(window);
    let omega = cfg.omega;
    Ok(thresholded_iteration(&op, &h, cfg.mu, cfg.max_iter, cfg.tol, |z| {
        hard_threshold_complex(z, omega);
    }))
}

/// ISTA with complex soft thresholding at `lambda / mu`.
pub fn ista_solve(window: &CirWindow, cfg: &IstaConfig) -> Result<SolveReport> {
    if !(cfg.mu > 0.0) || cfg.lambda.is_some_and(|l| !(l >= 0.0)) {
        return Err(Error::Config("ISTA needs lambda >= 0 and mu > 0".into()));
    }
    let op = SensingOperator::new(&window.mask)?;
    let h = op.measurements(window);
    let lambda = cfg
        .lambda
        .unwrap_or_else(|| 0.1 * op.adjoint(&h).iter().map(|c| c.norm()).fold(0.0, f64::max));
    let tau = lambda / cfg.mu;
    Ok(thresholded_iteration(&op, &h, cfg.mu, cfg.max_iter, cfg.tol, |z| {
        soft_threshold_complex(z, tau)
    }))
}

/// Cholesky factor of a Hermitian matrix; `None` when a pivot collapses.
fn cholesky(a: &Array2<Complex64>) -> Option<Array2<Complex64>> {
    let n = a.nrows();
    let mut l = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]].re;
        for p in 0..j {
            d -= l[[j, p]].norm_sqr();
        }
        if !(d > 1e-8 * a[[j, j]].re.abs().max(f64::MIN_POSITIVE)) {
            return None;
        }
        let d = d.sqrt();
        l[[j, j]] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= l[[i, p]] * l[[j, p]].conj();
            }
            l[[i, j]] = s / d;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Array2<Complex64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    let mut y = vec![ZERO; n];
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= l[[i, p]] * y[p];
        }
        y[i] = s / l[[i, i]];
    }
    let mut x = vec![ZERO; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for p in i + 1..n {
            s -= l[[p, i]].conj() * x[p];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Least-squares coefficients of `h` on the columns `support` of `Phi`.
fn refit(op: &SensingOperator, support: &[usize], h: &[Complex64]) -> Option<Vec<Complex64>> {
    let phi = op.matrix();
    let s = support.len();
    let mut gram = Array2::<Complex64>::zeros((s, s));
    for (i, &a) in support.iter().enumerate() {
        for (j, &b) in support.iter().enumerate() {
            gram[[i, j]] = (0..op.m()).map(|r| phi[[r, a]].conj() * phi[[r, b]]).sum();
        }
    }
    let rhs: Vec<Complex64> =
        support.iter().map(|&a| (0..op.m()).map(|r| phi[[r, a]].conj() * h[r]).sum()).collect();
    cholesky(&gram).map(|l| cholesky_solve(&l, &rhs))
}

/// Orthogonal matching pursuit with `omega` greedy steps. Stops early once
/// the residual vanishes relative to `h`.
pub fn omp_solve(window: &CirWindow, omega: usize) -> Result<SolveReport> {
    let op = SensingOperator::new(&window.mask)?;
    if omega == 0 || omega > op.m() {
        return Err(Error::Config(format!(
            "OMP needs 1 <= omega <= m_t (omega = {omega}, m_t = {})",
            op.m()
        )));
    }
    let k = op.k();
    let h = op.measurements(window);
    let h_norm = cnorm(&h);
    let mut support: Vec<usize> = Vec::with_capacity(omega);
    let mut coeffs: Vec<Complex64> = Vec::new();
    let mut residual = h.clone();
    let mut res_norm = h_norm;
    let mut skipped = 0;
    let mut iterations = 0;

    while support.len() < omega {
        if res_norm <= 1e-12 * h_norm {
            break;
        }
        let corr = op.adjoint(&residual);
        let mut order: Vec<usize> = (0..k).filter(|i| !support.contains(i)).collect();
        order.sort_by(|&a, &b| corr[b].norm_sqr().total_cmp(&corr[a].norm_sqr()).then(a.cmp(&b)));
        let mut accepted = false;
        for cand in order {
            let mut trial = support.clone();
            trial.push(cand);
            match refit(&op, &trial, &h) {
                Some(c) => {
                    support = trial;
                    coeffs = c;
                    accepted = true;
                    break;
                }
                None => skipped += 1,
            }
        }
        if !accepted {
            break;
        }
        iterations += 1;
        let mut z = vec![ZERO; k];
        for (&i, &c) in support.iter().zip(&coeffs) {
            z[i] = c;
        }
        let pz = op.apply(&z);
        residual = h.iter().zip(&pz).map(|(a, b)| a - b).collect();
        res_norm = cnorm(&residual);
    }

    let mut z = vec![ZERO; k];
    for (&i, &c) in support.iter().zip(&coeffs) {
        z[i] = c;
    }
    Ok(SolveReport {
        z: realize_vector(&z),
        iterations,
        final_residual: res_norm,
        converged: true,
        diverged: false,
        skipped_atoms: skipped,
    })
}

/// Full-window reference reconstruction of a sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Min-max normalized spectrogram, one row per window.
    pub spectra: Array2<f64>,
    /// Raw realized DFT estimates, one per window.
    pub z: Vec<Array1<f64>>,
    pub min: f64,
    pub max: f64,
}

impl GroundTruth {
    /// DFT estimate of window `t` scaled so that `md_convert` of it matches
    /// the normalized spectrum (exactly when the spectrogram minimum is 0).
    pub fn z_scaled(&self, t: usize) -> Array1<f64> {
        let range = self.max - self.min;
        if range > 0.0 {
            &self.z[t] / range.sqrt()
        } else {
            Array1::zeros(self.z[t].len())
        }
    }

    /// Windows whose reference spectrum is identically zero.
    pub fn is_degenerate(&self, t: usize) -> bool {
        self.spectra.row(t).iter().all(|&v| v == 0.0)
    }
}

/// Which solver produces a full-window reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    Iht(IhtConfig),
    Ista(IstaConfig),
    Omp(usize),
}

/// Runs the reference solver on every complete window of `seq`, converts to
/// spectra and min-max normalizes the whole spectrogram to `[0, 1]`.
pub fn reference_spectrogram(
    seq: &CirSequence,
    k: usize,
    shift: usize,
    reference: Reference,
) -> Result<GroundTruth> {
    let full = seq.fully_available();
    let windows = frame_windows(&full, k, shift)?;
    let mut z = Vec::with_capacity(windows.len());
    let mut spectra = Array2::zeros((windows.len(), k));
    for (t, w) in windows.iter().enumerate() {
        let rep = match reference {
            Reference::Iht(c) => iht_solve(w, &c)?,
            Reference::Ista(c) => ista_solve(w, &c)?,
            Reference::Omp(o) => omp_solve(w, o)?,
        };
        if rep.diverged {
            return Err(Error::SolverDiverged { window: t });
        }
        spectra.row_mut(t).assign(&md_convert(rep.z.view()));
        z.push(rep.z);
    }
    let (min, max) = min_max_normalize(&mut spectra);
    Ok(GroundTruth { spectra, z, min, max })
}

/// IHT-at-convergence ground truth.
pub fn ground_truth_spectrogram(seq: &CirSequence, k: usize, shift: usize) -> Result<GroundTruth> {
    reference_spectrogram(seq, k, shift, Reference::Iht(IhtConfig::converged()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cmatvec, complexify_vector};
    use crate::synth::{tone_sequence, SynthConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn full_window(values: Vec<Complex64>) -> CirWindow {
        let k = values.len();
        CirWindow::new(&values, &vec![true; k], 0).unwrap()
    }

    /// Window holding `sum_m amps[m] * F[:, bins[m]]`, i.e. z has exactly
    /// these entries.
    fn grid_window(k: usize, bins: &[usize], amps: &[Complex64]) -> (CirWindow, Vec<Complex64>) {
        let mut z = vec![ZERO; k];
        for (&b, &a) in bins.iter().zip(amps) {
            z[b] = a;
        }
        let h = cmatvec(&dft(k), &z);
        (full_window(h), z)
    }

    fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
        diff_norm(a, b) / cnorm(b)
    }

    #[test]
    fn sensing_full_mask_is_unitary() {
        let op = build_sensing(&[true; 8]).unwrap();
        let phi = op.matrix();
        for a in 0..8 {
            for b in 0..8 {
                let g: Complex64 = (0..8).map(|r| phi[[r, a]].conj() * phi[[r, b]]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((g - want).norm() < 1e-14);
                assert!((g - op.gram_kernel[(b + 8 - a) % 8]).norm() < 1e-14);
            }
        }
        assert!(matches!(build_sensing(&[false; 8]), Err(Error::EmptyMask)));
    }

    #[test]
    fn single_sample_operator_has_rank_one() {
        let mut mask = vec![false; 16];
        mask[5] = true;
        let op = build_sensing(&mask).unwrap();
        assert_eq!(op.matrix().dim(), (1, 16));
        assert_eq!(op.realized().dim(), (2, 32));
    }

    #[test]
    fn realized_operator_matches_complex_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mask: Vec<bool> = (0..32).map(|i| i == 0 || rng.random::<f64>() < 0.4).collect();
            let op = build_sensing(&mask).unwrap();
            let z: Vec<Complex64> = (0..32)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let complex = realize_vector(&cmatvec(&op.matrix(), &z));
            let real = op.realized().dot(&realize_vector(&z));
            let err = (&complex - &real).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err < 1e-12);
            let fast = realize_vector(&op.apply(&z));
            assert!((&fast - &complex).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b)) < 1e-12);
            let gz = op.gram_apply(&z);
            let slow = op.adjoint(&op.apply(&z));
            assert!(diff_norm(&gz, &slow) < 1e-12);
        }
    }

    #[test]
    fn iht_zero_input() {
        let w = full_window(vec![ZERO; 16]);
        let rep = iht_solve(&w, &IhtConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
        assert!(rep.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iht_recovers_grid_tones() {
        let k = 64;
        let amps = [Complex64::new(1.0, 0.5), Complex64::new(-0.7, 0.2), Complex64::new(0.3, -0.9)];
        let (w, z_true) = grid_window(k, &[3, 17, 50], &amps);
        // step 1/mu = 1/2 halves the error every iteration
        let cfg = IhtConfig { omega: 5, mu: 2.0, max_iter: 50, tol: 0.0 };
        let rep = iht_solve(&w, &cfg).unwrap();
        let z = complexify_vector(rep.z.view());
        assert!(rel_err(&z, &z_true) < 1e-6);
        let support: Vec<usize> = (0..k).filter(|&i| z[i].norm() > 1e-3).collect();
        assert_eq!(support, vec![3, 17, 50]);
    }

    #[test]
    fn iht_respects_sparsity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let values: Vec<Complex64> =
                (0..32).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let mask: Vec<bool> = (0..32).map(|i| i == 3 || rng.random::<f64>() < 0.3).collect();
            let w = CirWindow::new(&values, &mask, 0).unwrap();
            let rep = iht_solve(&w, &IhtConfig { omega: 4, ..IhtConfig::default() }).unwrap();
            let z = complexify_vector(rep.z.view());
            assert!(z.iter().filter(|c| c.norm() > 0.0).count() <= 4);
            assert!(rep.iterations <= 100);
            assert!(rep.final_residual.is_finite());
        }
    }

    #[test]
    fn iht_rejects_bad_hyperparameters() {
        let w = full_window(vec![ZERO; 8]);
        assert!(iht_solve(&w, &IhtConfig { omega: 0, ..IhtConfig::default() }).is_err());
        assert!(iht_solve(&w, &IhtConfig { mu: 0.0, ..IhtConfig::default() }).is_err());
    }

    #[test]
    fn iht_flags_divergence() {
        // mu < 1/2 overshoots: the error is multiplied by (1 - 1/mu) = -4
        let (w, _) = grid_window(16, &[2], &[Complex64::new(1.0, 0.0)]);
        let rep = iht_solve(&w, &IhtConfig { omega: 1, mu: 0.2, max_iter: 100, tol: 1e-9 }).unwrap();
        assert!(rep.diverged);
        assert!(!rep.converged);
    }

    #[test]
    fn ista_without_shrinkage_is_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let values: Vec<Complex64> =
            (0..16).map(|_| Complex64::new(rng.random(), rng.random())).collect();
        let w = full_window(values.clone());
        let cfg = IstaConfig { lambda: Some(0.0), mu: 1.5, max_iter: 500, tol: 1e-13 };
        let rep = ista_solve(&w, &cfg).unwrap();
        assert!(rep.converged);
        let fh = dft(16).t().mapv(|c| c.conj());
        let want = cmatvec(&fh, &values);
        assert!(rel_err(&complexify_vector(rep.z.view()), &want) < 1e-10);
    }

    #[test]
    fn ista_large_lambda_gives_zero() {
        let (w, _) = grid_window(32, &[4, 9], &[Complex64::new(1.0, 0.0), Complex64::new(0.0, 2.0)]);
        let op = build_sensing(&w.mask).unwrap();
        let bound = op.adjoint(&op.measurements(&w)).iter().map(|c| c.norm()).fold(0.0, f64::max);
        let mu = 20.0;
        let cfg = IstaConfig { lambda: Some(1.01 * bound * mu), mu, ..IstaConfig::default() };
        let rep = ista_solve(&w, &cfg).unwrap();
        assert!(rep.z.iter().all(|&v| v == 0.0));

        let zero = full_window(vec![ZERO; 32]);
        let rep = ista_solve(&zero, &IstaConfig::default()).unwrap();
        assert!(rep.z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn omp_single_tone_first_step() {
        let (w, _) = grid_window(64, &[21], &[Complex64::new(0.4, -1.1)]);
        let rep = omp_solve(&w, 5).unwrap();
        assert_eq!(rep.iterations, 1);
        assert!(rep.final_residual < 1e-10);
        let z = complexify_vector(rep.z.view());
        assert!((z[21] - Complex64::new(0.4, -1.1)).norm() < 1e-8);
    }

    #[test]
    fn omp_first_step_is_matched_filter_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let values: Vec<Complex64> =
                (0..32).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let mask: Vec<bool> = (0..32).map(|i| i == 0 || rng.random::<f64>() < 0.5).collect();
            let w = CirWindow::new(&values, &mask, 0).unwrap();
            let op = build_sensing(&mask).unwrap();
            let corr = op.adjoint(&op.measurements(&w));
            let best = (0..32).max_by(|&a, &b| corr[a].norm().total_cmp(&corr[b].norm()).then(b.cmp(&a))).unwrap();
            let rep = omp_solve(&w, 1).unwrap();
            let z = complexify_vector(rep.z.view());
            let chosen: Vec<usize> = (0..32).filter(|&i| z[i] != ZERO).collect();
            assert_eq!(chosen, vec![best]);
        }
    }

    #[test]
    fn omp_zero_input_and_bounds() {
        let w = full_window(vec![ZERO; 16]);
        let rep = omp_solve(&w, 3).unwrap();
        assert!(rep.z.iter().all(|&v| v == 0.0));
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[1] = true;
        let sparse = w.masked(&mask).unwrap();
        assert!(omp_solve(&sparse, 3).is_err());
        assert!(omp_solve(&sparse, 0).is_err());
    }

    #[test]
    fn omp_residual_is_non_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let values: Vec<Complex64> =
                (0..32).map(|_| Complex64::new(rng.random(), rng.random())).collect();
            let mask: Vec<bool> = (0..32).map(|i| i < 2 || rng.random::<f64>() < 0.5).collect();
            let w = CirWindow::new(&values, &mask, 0).unwrap();
            let m = w.m_t.min(8);
            let mut last = f64::INFINITY;
            for omega in 1..=m {
                let r = omp_solve(&w, omega).unwrap().final_residual;
                assert!(r <= last + 1e-9, "omega {omega}: {r} > {last}");
                last = r;
            }
        }
    }

    #[test]
    fn omp_skips_dependent_atoms() {
        // samples {0, 8} of a 16-point DFT: columns j and j+2 coincide on them
        let mut mask = vec![false; 16];
        mask[0] = true;
        mask[8] = true;
        let values: Vec<Complex64> = (0..16).map(|i| Complex64::new(1.0 + i as f64, 0.5)).collect();
        let w = CirWindow::new(&values, &mask, 0).unwrap();
        let rep = omp_solve(&w, 2).unwrap();
        let z = complexify_vector(rep.z.view());
        let chosen: Vec<usize> = (0..16).filter(|&i| z[i] != ZERO).collect();
        assert_eq!(chosen.len(), 2);
        assert_ne!(chosen[0] % 2, chosen[1] % 2);
        assert!(rep.skipped_atoms > 0 || rep.final_residual < 1e-9);
    }

    #[test]
    fn ground_truth_cases() {
        let cfg = SynthConfig { snr_db: f64::INFINITY, q_min: 0, q_max: 0, ..SynthConfig::default() };
        let zero = tone_sequence(&cfg, 3, &[]).unwrap();
        let gt = ground_truth_spectrogram(&zero, 64, 32).unwrap();
        assert!(gt.spectra.iter().all(|&v| v == 0.0));
        assert!(gt.is_degenerate(0));

        let df = 1.0 / (64.0 * cfg.t_c);
        let two = tone_sequence(
            &cfg,
            4,
            &[(Complex64::new(1.0, 0.0), 5.0 * df), (Complex64::new(0.5, 0.5), -12.0 * df)],
        )
        .unwrap();
        let gt = ground_truth_spectrogram(&two, 64, 32).unwrap();
        for t in 0..gt.z.len() {
            let active = md_convert(gt.z[t].view()).iter().filter(|&&v| v > 1e-9).count();
            assert_eq!(active, 2);
        }
        let min = gt.spectra.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = gt.spectra.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((min, max), (0.0, 1.0));
        let rescaled = md_convert(gt.z_scaled(1).view());
        let err = (&rescaled - &gt.spectra.row(1)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-12);
    }

    #[test]
    fn solvers_agree_on_noiseless_grid_support() {
        let k = 64;
        let amps = [Complex64::new(2.0, 0.0), Complex64::new(0.0, -1.5), Complex64::new(1.0, 1.0)];
        let (w, _) = grid_window(k, &[1, 30, 44], &amps);
        let support = |r: &SolveReport, thr: f64| -> Vec<usize> {
            let z = complexify_vector(r.z.view());
            (0..k).filter(|&i| z[i].norm() > thr).collect()
        };
        let iht = iht_solve(&w, &IhtConfig::converged()).unwrap();
        let ista = ista_solve(&w, &IstaConfig::default()).unwrap();
        let omp = omp_solve(&w, 5).unwrap();
        assert_eq!(support(&iht, 1e-3), vec![1, 30, 44]);
        assert_eq!(support(&ista, 1e-3), vec![1, 30, 44]);
        assert_eq!(support(&omp, 1e-3), vec![1, 30, 44]);
    }
}
