//! Missing-measurement sweeps, spectrogram output, runtime benchmarks and
//! the sensing overhead estimate.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mean_stderr, min_max_normalize, rmse, ssim};
use crate::model::{md_convert, star_forward_window, Model, PastBuffer};
use crate::solvers::{
    iht_solve, ista_solve, omp_solve, reference_spectrogram, IhtConfig, IstaConfig, Reference,
};
use crate::synth::{doppler_axis, frame_windows, gen_grid_mask, CirSequence, CirWindow};

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.5, 0.75, 0.9];

/// A reconstruction method under evaluation.
#[derive(Debug, Clone)]
pub enum Method {
    /// Trained model under a display name.
    Star { name: String, model: Model },
    IhtSingle(IhtConfig),
    IhtConverged(IhtConfig),
    Omp(usize),
    Ista(IstaConfig),
}

impl Method {
    pub fn star(model: Model) -> Self {
        Method::Star { name: model.hyper().variant.name().to_string(), model }
    }

    pub fn iht_single() -> Self {
        Method::IhtSingle(IhtConfig::single_iteration())
    }

    pub fn iht_converged() -> Self {
        Method::IhtConverged(IhtConfig::converged())
    }

    pub fn name(&self) -> String {
        match self {
            Method::Star { name, .. } => name.clone(),
            Method::IhtSingle(_) => "iht-1".into(),
            Method::IhtConverged(_) => "iht-converged".into(),
            Method::Omp(_) => "omp".into(),
            Method::Ista(_) => "ista".into(),
        }
    }

    /// Full-window solver whose output this method is scored against.
    pub fn reference(&self) -> Reference {
        match self {
            Method::Omp(o) => Reference::Omp(*o),
            Method::Ista(c) => Reference::Ista(*c),
            _ => Reference::Iht(IhtConfig::converged()),
        }
    }

    /// Raw (unnormalized) spectrogram, one row per window, plus per-window
    /// wall times in milliseconds.
    pub fn reconstruct(&self, windows: &[CirWindow]) -> Result<(Array2<f64>, Vec<f64>)> {
        let k = windows.first().map_or(0, |w| w.k());
        let mut out = Array2::zeros((windows.len(), k));
        let mut times = Vec::with_capacity(windows.len());
        let mut buf = match self {
            Method::Star { model, .. } => Some(PastBuffer::new(model.hyper().n_past, model.params.k())),
            _ => None,
        };
        for (t, w) in windows.iter().enumerate() {
            let start = Instant::now();
            let row = match self {
                Method::Star { model, .. } => {
                    star_forward_window(w, buf.as_mut().expect("buffer exists for STAR"), model)
                }
                Method::IhtSingle(c) | Method::IhtConverged(c) => solve_spectrum(t, iht_solve(w, c)?)?,
                // at most m_t atoms are identifiable
                Method::Omp(o) => solve_spectrum(t, omp_solve(w, (*o).min(w.m_t))?)?,
                Method::Ista(c) => solve_spectrum(t, ista_solve(w, c)?)?,
            };
            times.push(start.elapsed().as_secs_f64() * 1e3);
            out.row_mut(t).assign(&row);
        }
        Ok((out, times))
    }
}

fn solve_spectrum(t: usize, rep: crate::solvers::SolveReport) -> Result<ndarray::Array1<f64>> {
    if rep.diverged {
        return Err(Error::SolverDiverged { window: t });
    }
    Ok(md_convert(rep.z.view()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepOptions {
    pub fractions: Vec<f64>,
    pub k: usize,
    pub shift: usize,
    pub seed: u64,
    /// Record wall times; off keeps the table byte-reproducible.
    pub timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { fractions: DEFAULT_FRACTIONS.to_vec(), k: 64, shift: 32, seed: 0, timing: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub missing_fraction: f64,
    pub rmse: f64,
    pub rmse_stderr: f64,
    pub ssim: f64,
    pub ssim_stderr: f64,
    pub n_windows: usize,
    pub median_ms_per_window: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_HEADER: &str =
    "method,missing_fraction,rmse,rmse_stderr,ssim,ssim_stderr,n_windows,median_ms_per_window";

impl SweepResult {
    pub fn get(&self, method: &str, fraction: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.method == method && r.missing_fraction == fraction)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{:.6}",
                r.method,
                r.missing_fraction,
                r.rmse,
                r.rmse_stderr,
                r.ssim,
                r.ssim_stderr,
                r.n_windows,
                r.median_ms_per_window
            );
        }
        s
    }
}

/// Grid mask for sequence `seq_idx` at fraction `frac_idx`; shared by all
/// methods so they see the same measurements.
pub fn sweep_mask(seq: &CirSequence, opts: &SweepOptions, seq_idx: usize, fraction: f64) -> Vec<bool> {
    let stream = (seq_idx as u64) << 16 | (fraction * 1000.0).round() as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    gen_grid_mask(seq.len(), opts.k, opts.shift, fraction, &mut rng)
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

struct Cell {
    rmse: f64,
    ssim: f64,
    n_windows: usize,
    times: Vec<f64>,
}

/// Scores every method at every missing fraction. Each method's spectrogram
/// is min-max normalized per sequence and compared against its reference
/// on the complete windows. Standard errors are over test sequences.
pub fn sweep_missing(methods: &[Method], test: &[CirSequence], opts: &SweepOptions) -> Result<SweepResult> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if let Some(f) = opts.fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::Config(format!("missing fraction {f} outside [0, 1)")));
    }
    for m in methods {
        if let Method::Star { model, .. } = m {
            if model.params.k() != opts.k {
                return Err(Error::Shape(format!("model K = {} but sweep K = {}", model.params.k(), opts.k)));
            }
        }
    }

    // distinct references, computed once per sequence
    let mut refs: Vec<Reference> = Vec::new();
    for m in methods {
        if !refs.contains(&m.reference()) {
            refs.push(m.reference());
        }
    }
    let ref_spectra: Vec<Vec<Array2<f64>>> = refs
        .iter()
        .map(|&r| {
            test.par_iter()
                .map(|s| reference_spectrogram(s, opts.k, opts.shift, r).map(|g| g.spectra))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..opts.fractions.len()).flat_map(move |f| (0..test.len()).map(move |s| (m, f, s))))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(m, f, s)| {
            let method = &methods[m];
            let seq = &test[s];
            let mask = sweep_mask(seq, opts, s, opts.fractions[f]);
            let windows = frame_windows(&seq.with_mask(mask), opts.k, opts.shift)?;
            let (mut spec, times) = method.reconstruct(&windows)?;
            min_max_normalize(&mut spec);
            let r = refs.iter().position(|&r| r == method.reference()).unwrap();
            let gt = &ref_spectra[r][s];
            Ok(Cell { rmse: rmse(spec.view(), gt.view())?, ssim: ssim(spec.view(), gt.view())?, n_windows: windows.len(), times })
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let per = test.len();
    for (m, method) in methods.iter().enumerate() {
        for (f, &fraction) in opts.fractions.iter().enumerate() {
            let base = (m * opts.fractions.len() + f) * per;
            let group = &cells[base..base + per];
            let (rmse, rmse_stderr) = mean_stderr(&group.iter().map(|c| c.rmse).collect::<Vec<_>>());
            let (ssim, ssim_stderr) = mean_stderr(&group.iter().map(|c| c.ssim).collect::<Vec<_>>());
            let median_ms_per_window = if opts.timing {
                median(&mut group.iter().flat_map(|c| c.times.iter().cloned()).collect::<Vec<_>>())
            } else {
                f64::NAN
            };
            rows.push(SweepRow {
                method: method.name(),
                missing_fraction: fraction,
                rmse,
                rmse_stderr,
                ssim,
                ssim_stderr,
                n_windows: group.iter().map(|c| c.n_windows).sum(),
                median_ms_per_window,
            });
        }
    }
    Ok(SweepResult { rows })
}

/// 8-bit binary PGM of a `T x K` spectrogram: fftshifted frequency on rows
/// (most negative at the bottom), windows on columns, min-max scaled.
pub fn encode_pgm(spec: ArrayView2<'_, f64>) -> Vec<u8> {
    let (t, k) = spec.dim();
    let mut scaled = spec.to_owned();
    min_max_normalize(&mut scaled);
    let mut out = format!("P5\n{t} {k}\n255\n").into_bytes();
    for row in 0..k {
        // top row is the highest positive frequency
        let shifted = k - 1 - row;
        let bin = (shifted + k / 2) % k;
        for col in 0..t {
            out.push((scaled[[col, bin]].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_pgm(path: &Path, spec: ArrayView2<'_, f64>) -> Result<()> {
    std::fs::write(path, encode_pgm(spec)).map_err(|e| Error::io(path, e))
}

/// CSV of a spectrogram: one row per window, one column per Doppler bin in
/// fftshifted order, headed by the bin frequency in Hz.
pub fn spectrogram_csv(spec: ArrayView2<'_, f64>, t_c: f64, f_c: f64) -> String {
    let (t, k) = spec.dim();
    let axis = doppler_axis(k, t_c, f_c);
    let mut s = String::from("window");
    for f in axis.shifted_bins() {
        let _ = write!(s, ",{f:.3}");
    }
    s.push('\n');
    for w in 0..t {
        let _ = write!(s, "{w}");
        for i in 0..k {
            let _ = write!(s, ",{:.9e}", spec[[w, (i + k / 2) % k]]);
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------------------
// Runtime benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub median_ms: f64,
    pub mean_iterations: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Median IHT-converged time over median STAR time.
    pub speedup: Option<f64>,
    /// `(m_t, median ms)` of the STAR forward pass.
    pub mt_scaling: Vec<(usize, f64)>,
    pub mt_slope: f64,
    pub mt_intercept: f64,
    pub mt_r2: f64,
}

impl BenchReport {
    pub fn row(&self, method: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("method,median_ms_per_window,mean_iterations\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.6},{:.2}", r.method, r.median_ms, r.mean_iterations);
        }
        if let Some(x) = self.speedup {
            let _ = writeln!(s, "# speedup iht-converged / star = {x:.2}");
        }
        for (m, t) in &self.mt_scaling {
            let _ = writeln!(s, "# m_t = {m}: {t:.6} ms");
        }
        let _ = writeln!(
            s,
            "# fit: ms = {:.3e} * m_t + {:.3e} (r^2 = {:.3})",
            self.mt_slope, self.mt_intercept, self.mt_r2
        );
        s
    }
}

/// Average per-call time of `f` in milliseconds over `reps` calls.
fn time_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    let start = Instant::now();
    for _ in 0..reps {
        f();
    }
    start.elapsed().as_secs_f64() * 1e3 / reps as f64
}

fn iterations_of(method: &Method, w: &CirWindow) -> Result<usize> {
    Ok(match method {
        Method::Star { .. } => 1,
        Method::IhtSingle(c) | Method::IhtConverged(c) => iht_solve(w, c)?.iterations,
        Method::Omp(o) => omp_solve(w, (*o).min(w.m_t))?.iterations,
        Method::Ista(c) => ista_solve(w, c)?.iterations,
    })
}

/// Median per-window wall time of each method on `windows`, run on the
/// calling thread. The STAR buffer is carried along the stream.
pub fn bench_runtime(methods: &[Method], windows: &[CirWindow], reps: usize) -> Result<BenchReport> {
    let reps = reps.max(1);
    let mut rows = Vec::new();
    let mut star_model = None;
    for method in methods {
        // warm-up pass
        method.reconstruct(&windows[..windows.len().min(4)])?;
        let mut times = Vec::with_capacity(windows.len());
        let mut iters = 0usize;
        match method {
            Method::Star { model, .. } => {
                star_model.get_or_insert(model);
                let mut buf = PastBuffer::new(model.hyper().n_past, model.params.k());
                for w in windows {
                    let snapshot = buf.clone();
                    times.push(time_ms(reps, || {
                        let mut b = snapshot.clone();
                        std::hint::black_box(star_forward_window(w, &mut b, model));
                    }));
                    star_forward_window(w, &mut buf, model);
                    iters += 1;
                }
            }
            _ => {
                for w in windows {
                    let mut err = None;
                    times.push(time_ms(reps, || {
                        if let Err(e) = method.reconstruct(std::slice::from_ref(w)) {
                            err = Some(e);
                        }
                    }));
                    if let Some(e) = err {
                        return Err(e);
                    }
                    iters += iterations_of(method, w)?;
                }
            }
        }
        rows.push(BenchRow {
            method: method.name(),
            median_ms: median(&mut times),
            mean_iterations: iters as f64 / windows.len().max(1) as f64,
        });
    }
    let star = rows.iter().find(|r| r.method.starts_with("star")).map(|r| r.median_ms);
    let iht = rows.iter().find(|r| r.method == "iht-converged").map(|r| r.median_ms);
    let speedup = star.zip(iht).map(|(s, i)| i / s);

    let mut mt_scaling = Vec::new();
    if let (Some(model), Some(w0)) = (star_model, windows.first()) {
        let k = w0.k();
        for m in (1..=4).map(|q| (q * k / 4).max(1)) {
            // m evenly spaced samples
            let mask: Vec<bool> = (0..k).map(|i| i * m / k != (i + 1) * m / k).collect();
            let masked: Vec<CirWindow> = windows.iter().take(32).map(|w| w.masked(&mask)).collect::<Result<_>>()?;
            let mut ts: Vec<f64> = masked
                .iter()
                .map(|w| {
                    let buf = PastBuffer::new(model.hyper().n_past, k);
                    time_ms(reps, || {
                        let mut b = buf.clone();
                        std::hint::black_box(star_forward_window(w, &mut b, model));
                    })
                })
                .collect();
            mt_scaling.push((m, median(&mut ts)));
        }
    }
    let (mt_slope, mt_intercept, mt_r2) = linear_fit(&mt_scaling);
    Ok(BenchReport { rows, speedup, mt_scaling, mt_slope, mt_intercept, mt_r2 })
}

fn linear_fit(points: &[(usize, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

/// Packet accounting for the extra symbols spent on sensing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverheadParams {
    pub trn_symbols_per_estimate: usize,
    pub preamble_symbols: usize,
    pub psdu_bytes: usize,
    pub packets_per_window: usize,
    pub window_slots: usize,
    /// Coded bits per symbol of the data MCS; the default is pi/2-QPSK at
    /// code rate 13/16.
    pub bits_per_symbol: f64,
}

impl Default for OverheadParams {
    fn default() -> Self {
        Self {
            trn_symbols_per_estimate: 768,
            preamble_symbols: 4352,
            psdu_bytes: 4096,
            packets_per_window: 10,
            window_slots: 64,
            bits_per_symbol: 1.625,
        }
    }
}

impl OverheadParams {
    pub fn validate(&self) -> Result<()> {
        let ints = [
            self.trn_symbols_per_estimate,
            self.preamble_symbols,
            self.psdu_bytes,
            self.packets_per_window,
            self.window_slots,
        ];
        if ints.contains(&0) || !(self.bits_per_symbol > 0.0) {
            return Err(Error::Config("overhead parameters must be positive".into()));
        }
        Ok(())
    }

    /// Symbols of one data packet: preamble plus payload.
    pub fn packet_symbols(&self) -> f64 {
        self.preamble_symbols as f64 + (self.psdu_bytes as f64 * 8.0 / self.bits_per_symbol).ceil()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub samples_per_window: usize,
    pub overhead: f64,
    /// Estimates beyond one per data packet, which need their own
    /// transmissions.
    pub dedicated_transmissions: usize,
    pub assumptions: String,
}

/// Ratio of training-field symbols to the communication symbols of one
/// window. Linear in the number of estimates.
pub fn overhead_estimate(samples_per_window: usize, p: &OverheadParams) -> f64 {
    (samples_per_window * p.trn_symbols_per_estimate) as f64 / (p.packets_per_window as f64 * p.packet_symbols())
}

pub fn overhead_report(samples_per_window: usize, p: &OverheadParams) -> Result<OverheadReport> {
    p.validate()?;
    Ok(OverheadReport {
        samples_per_window,
        overhead: overhead_estimate(samples_per_window, p),
        dedicated_transmissions: samples_per_window.saturating_sub(p.packets_per_window),
        assumptions: format!(
            "{} TRN symbols per estimate; {} packets of {} symbols ({} preamble + {} B at {} bits/symbol) per {}-slot window",
            p.trn_symbols_per_estimate,
            p.packets_per_window,
            p.packet_symbols(),
            p.preamble_symbols,
            p.psdu_bytes,
            p.bits_per_symbol,
            p.window_slots
        ),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{param_init, Hyper};
    use crate::synth::{synth_dataset, SynthConfig};

    fn small_set(n: usize) -> Vec<CirSequence> {
        let cfg = SynthConfig { k: 16, shift: 8, t_c: 1e-3, f_c: 1e9, v_max: 20.0, q_max: 2, seed: 9, ..SynthConfig::default() };
        synth_dataset(&cfg, n, 10).unwrap()
    }

    fn small_opts(fractions: Vec<f64>) -> SweepOptions {
        SweepOptions { fractions, k: 16, shift: 8, seed: 1, timing: false }
    }

    #[test]
    fn fraction_zero_iht_matches_its_oracle() {
        let res = sweep_missing(&[Method::iht_converged()], &small_set(3), &small_opts(vec![0.0])).unwrap();
        let row = res.get("iht-converged", 0.0).unwrap();
        assert!(row.rmse < 1e-12);
        assert!((row.ssim - 1.0).abs() < 1e-9);
        assert_eq!(row.n_windows, 30);
    }

    #[test]
    fn sweep_is_deterministic_and_thread_independent() {
        let model = Model::new(param_init(Hyper { k: 16, omega: 3, n_past: 3, ..Hyper::default() }, 0).unwrap());
        let methods = vec![Method::star(model), Method::iht_single(), Method::Omp(3), Method::Ista(IstaConfig::default())];
        let data = small_set(3);
        let opts = small_opts(vec![0.5, 0.9]);
        let a = sweep_missing(&methods, &data, &opts).unwrap().to_csv();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| sweep_missing(&methods, &data, &opts).unwrap().to_csv());
        assert_eq!(a, b);
        assert!(a.starts_with(SWEEP_HEADER));
        assert_eq!(a.lines().count(), 1 + 4 * 2);
        assert!(a.contains("\nstar,0.9,"));
    }

    #[test]
    fn sweep_rejects_bad_inputs() {
        let data = small_set(1);
        assert!(sweep_missing(&[Method::iht_single()], &[], &small_opts(vec![0.5])).is_err());
        assert!(sweep_missing(&[Method::iht_single()], &data, &small_opts(vec![1.0])).is_err());
        let model = Model::new(param_init(Hyper::default(), 0).unwrap());
        assert!(matches!(
            sweep_missing(&[Method::star(model)], &data, &small_opts(vec![0.5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn pgm_layout() {
        let mut spec = Array2::zeros((3, 4));
        spec[[1, 0]] = 2.0; // DC of window 1
        spec[[2, 3]] = 1.0; // bin -1 of window 2
        let pgm = encode_pgm(spec.view());
        let header = b"P5\n3 4\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        let px = &pgm[header.len()..];
        assert_eq!(px.len(), 12);
        // rows top to bottom: +1, 0, -1, -2
        assert_eq!(px[3 + 1], 255);
        assert_eq!(px[2 * 3 + 2], 128);
        assert_eq!(px.iter().filter(|&&p| p > 0).count(), 2);
    }

    #[test]
    fn spectrogram_csv_shape() {
        let spec = Array2::from_shape_fn((2, 4), |(t, i)| (t * 4 + i) as f64);
        let csv = spectrogram_csv(spec.view(), 1e-3, 1e9);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "window,-500.000,-250.000,0.000,250.000");
        assert!(lines[1].starts_with("0,2.0"));
    }

    #[test]
    fn overhead_properties() {
        let p = OverheadParams::default();
        let ratio = overhead_estimate(7, &p) / overhead_estimate(16, &p);
        assert!((ratio - 7.0 / 16.0).abs() < 1e-15);
        for s in 1..40 {
            assert!(overhead_estimate(s + 1, &p) > overhead_estimate(s, &p));
        }
        let double = OverheadParams { trn_symbols_per_estimate: 1536, ..p.clone() };
        assert!((overhead_estimate(9, &double) - 2.0 * overhead_estimate(9, &p)).abs() < 1e-15);
        let rep = overhead_report(16, &p).unwrap();
        assert_eq!(rep.dedicated_transmissions, 6);
        assert!(overhead_report(3, &OverheadParams { psdu_bytes: 0, ..p }).is_err());
    }

    #[test]
    fn bench_reports_every_method() {
        let data = small_set(1);
        let windows = frame_windows(&data[0], 16, 8).unwrap();
        let model = Model::new(param_init(Hyper { k: 16, omega: 3, n_past: 3, ..Hyper::default() }, 0).unwrap());
        let rep = bench_runtime(&[Method::star(model), Method::iht_converged()], &windows, 2).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.speedup.unwrap() > 0.0);
        assert_eq!(rep.mt_scaling.iter().map(|p| p.0).collect::<Vec<_>>(), vec![4, 8, 12, 16]);
        assert!(rep.row("iht-converged").unwrap().mean_iterations >= 1.0);
    }

    #[test]
    fn linear_fit_exact() {
        let (s, i, r2) = linear_fit(&[(1, 3.0), (2, 5.0), (4, 9.0)]);
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }
}
