//! Synthetic CIR generation, framing into overlapping windows, availability
//! masks, and CIR file I/O.
//!
//! A sequence is a single tracked CIR component sampled every `t_c` seconds.
//! Each scatterer contributes a complex sinusoid whose Doppler frequency is
//! piecewise constant over hops of `shift` samples and follows a clipped
//! Gaussian random walk from one hop to the next. Phase is accumulated
//! sample by sample, so the signal stays continuous across hops.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Window length in samples.
    pub k: usize,
    /// Window shift in samples.
    pub shift: usize,
    /// Channel sampling period (s).
    pub t_c: f64,
    /// Carrier frequency (Hz).
    pub f_c: f64,
    pub q_min: usize,
    pub q_max: usize,
    /// Maximum radial scatterer speed (m/s).
    pub v_max: f64,
    /// Std of the per-hop Doppler random walk (Hz).
    pub freq_walk_std: f64,
    pub amp_min: f64,
    pub amp_max: f64,
    /// Per-sample signal power over noise variance, in dB. `inf` disables noise.
    pub snr_db: f64,
    pub seed: u64,
    pub label: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            k: 64,
            shift: 32,
            t_c: 0.27e-3,
            f_c: 60e9,
            q_min: 1,
            q_max: 3,
            v_max: 4.0,
            freq_walk_std: 5.0,
            amp_min: 0.5,
            amp_max: 1.5,
            snr_db: 20.0,
            seed: 0,
            label: "walk".to_string(),
        }
    }
}

impl SynthConfig {
    /// Largest Doppler frequency produced by a scatterer moving at `v_max`.
    pub fn max_doppler(&self) -> f64 {
        2.0 * self.v_max * self.f_c / SPEED_OF_LIGHT
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return fail("k must be positive");
        }
        if self.shift == 0 || self.shift > self.k {
            return fail("shift must satisfy 0 < shift <= k");
        }
        if !(self.t_c > 0.0) || !(self.f_c > 0.0) {
            return fail("t_c and f_c must be positive");
        }
        if self.q_min > self.q_max {
            return fail("q_min must not exceed q_max");
        }
        if 4 * self.q_max > self.k {
            return fail("q_max must be well below k (at most k/4)");
        }
        if !(self.v_max >= 0.0) || self.max_doppler() >= 1.0 / (2.0 * self.t_c) {
            return fail("Doppler of v_max must stay below 1/(2 t_c)");
        }
        if !(self.freq_walk_std >= 0.0) {
            return fail("freq_walk_std must be non-negative");
        }
        if !(self.amp_min >= 0.0) || self.amp_min > self.amp_max || !self.amp_max.is_finite() {
            return fail("amplitude range must satisfy 0 <= amp_min <= amp_max");
        }
        if self.snr_db.is_nan() {
            return fail("snr_db must not be NaN");
        }
        Ok(())
    }
}

/// Generation record attached to a sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceMeta {
    pub label: String,
    pub config: Option<SynthConfig>,
    pub seed: Option<u64>,
    /// Complex amplitude `(re, im)` of each scatterer.
    pub amplitudes: Vec<(f64, f64)>,
    /// True Doppler frequencies of every scatterer, one entry per window.
    pub window_freqs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirSequence {
    pub samples: Vec<Complex64>,
    pub grid_mask: Vec<bool>,
    pub t_c: f64,
    pub f_c: f64,
    pub meta: SequenceMeta,
}

impl CirSequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same samples with a different availability mask.
    pub fn with_mask(&self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.samples.len());
        Self { grid_mask: mask, ..self.clone() }
    }

    /// Same samples with every sample marked available.
    pub fn fully_available(&self) -> Self {
        self.with_mask(vec![true; self.samples.len()])
    }
}

/// One length-K measurement window. Unavailable entries are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CirWindow {
    pub values: Vec<Complex64>,
    pub mask: Vec<bool>,
    pub t: usize,
    pub m_t: usize,
}

impl CirWindow {
    /// Builds a window, zeroing the entries the mask marks unavailable.
    pub fn new(values: &[Complex64], mask: &[bool], t: usize) -> Result<Self> {
        if values.len() != mask.len() {
            return Err(Error::Shape(format!(
                "window values ({}) and mask ({}) differ in length",
                values.len(),
                mask.len()
            )));
        }
        let m_t = mask.iter().filter(|&&b| b).count();
        if m_t == 0 {
            return Err(Error::EmptyMask);
        }
        let values = values
            .iter()
            .zip(mask)
            .map(|(&v, &m)| if m { v } else { Complex64::new(0.0, 0.0) })
            .collect();
        Ok(Self { values, mask: mask.to_vec(), t, m_t })
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Re-masks the window. Entries already missing stay zero.
    pub fn masked(&self, mask: &[bool]) -> Result<Self> {
        Self::new(&self.values, mask, self.t)
    }
}

/// Scatterer track: fixed complex amplitude, one Doppler frequency per hop.
#[derive(Debug, Clone)]
pub struct Scatterer {
    pub amplitude: Complex64,
    pub hop_freqs: Vec<f64>,
}

fn n_samples(k: usize, shift: usize, n_windows: usize) -> usize {
    (n_windows - 1) * shift + k
}

fn reflect(mut f: f64, lim: f64) -> f64 {
    if lim <= 0.0 {
        return 0.0;
    }
    // fold back into (-lim, lim); a couple of passes covers any sane step
    for _ in 0..8 {
        if f >= lim {
            f = 2.0 * lim - f;
        } else if f <= -lim {
            f = -2.0 * lim - f;
        } else {
            return f;
        }
    }
    f.clamp(-lim * (1.0 - 1e-12), lim * (1.0 - 1e-12))
}

/// Draws a random sequence of `n_windows` windows from the channel model.
pub fn synth_sequence(cfg: &SynthConfig, n_windows: usize) -> Result<CirSequence> {
    cfg.validate()?;
    if n_windows == 0 {
        return Err(Error::Config("n_windows must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let len = n_samples(cfg.k, cfg.shift, n_windows);
    let n_hops = len.div_ceil(cfg.shift);
    let lim = cfg.max_doppler();
    let q = rng.random_range(cfg.q_min..=cfg.q_max);

    let scatterers: Vec<Scatterer> = (0..q)
        .map(|_| {
            let mag = if cfg.amp_max > cfg.amp_min {
                rng.random_range(cfg.amp_min..cfg.amp_max)
            } else {
                cfg.amp_min
            };
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let mut f = if lim > 0.0 { rng.random_range(-lim..lim) } else { 0.0 };
            let mut hop_freqs = Vec::with_capacity(n_hops);
            for _ in 0..n_hops {
                hop_freqs.push(f);
                if cfg.freq_walk_std > 0.0 {
                    let step: f64 = StandardNormal.sample(&mut rng);
                    f = reflect(f + cfg.freq_walk_std * step, lim);
                }
            }
            Scatterer { amplitude: Complex64::from_polar(mag, phase), hop_freqs }
        })
        .collect();

    Ok(render(cfg, n_windows, &scatterers, &mut rng))
}

/// Sequence made of constant tones `(amplitude, frequency in Hz)`, with
/// noise drawn according to `cfg.snr_db`.
pub fn tone_sequence(
    cfg: &SynthConfig,
    n_windows: usize,
    tones: &[(Complex64, f64)],
) -> Result<CirSequence> {
    cfg.validate()?;
    if n_windows == 0 {
        return Err(Error::Config("n_windows must be at least 1".into()));
    }
    let len = n_samples(cfg.k, cfg.shift, n_windows);
    let n_hops = len.div_ceil(cfg.shift);
    let scatterers: Vec<Scatterer> = tones
        .iter()
        .map(|&(a, f)| Scatterer { amplitude: a, hop_freqs: vec![f; n_hops] })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    Ok(render(cfg, n_windows, &scatterers, &mut rng))
}

fn render(
    cfg: &SynthConfig,
    n_windows: usize,
    scatterers: &[Scatterer],
    rng: &mut ChaCha8Rng,
) -> CirSequence {
    let len = n_samples(cfg.k, cfg.shift, n_windows);
    let mut samples = vec![Complex64::new(0.0, 0.0); len];
    for s in scatterers {
        let mut phase = 0.0f64;
        for (n, x) in samples.iter_mut().enumerate() {
            *x += s.amplitude * Complex64::from_polar(1.0, phase);
            let f = s.hop_freqs[n / cfg.shift];
            phase = (phase + std::f64::consts::TAU * f * cfg.t_c) % std::f64::consts::TAU;
        }
    }

    if cfg.snr_db.is_finite() {
        let power: f64 = scatterers.iter().map(|s| s.amplitude.norm_sqr()).sum();
        let reference = if power > 0.0 {
            power
        } else {
            let mid = 0.5 * (cfg.amp_min + cfg.amp_max);
            mid * mid
        };
        let sigma = (reference / 10f64.powf(cfg.snr_db / 10.0) / 2.0).sqrt();
        for x in samples.iter_mut() {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *x += Complex64::new(sigma * re, sigma * im);
        }
    }

    let window_freqs = (0..n_windows)
        .map(|t| scatterers.iter().map(|s| s.hop_freqs[t]).collect())
        .collect();
    CirSequence {
        samples,
        grid_mask: vec![true; len],
        t_c: cfg.t_c,
        f_c: cfg.f_c,
        meta: SequenceMeta {
            label: cfg.label.clone(),
            config: Some(cfg.clone()),
            seed: Some(cfg.seed),
            amplitudes: scatterers.iter().map(|s| (s.amplitude.re, s.amplitude.im)).collect(),
            window_freqs,
        },
    }
}

/// Generates `n_sequences` sequences; sequence `i` uses seed `cfg.seed + i`.
pub fn synth_dataset(
    cfg: &SynthConfig,
    n_sequences: usize,
    n_windows: usize,
) -> Result<Vec<CirSequence>> {
    (0..n_sequences)
        .map(|i| {
            let c = SynthConfig { seed: cfg.seed.wrapping_add(i as u64), ..cfg.clone() };
            synth_sequence(&c, n_windows)
        })
        .collect()
}

/// Number of windows `frame_windows` produces for a sequence of length `len`.
pub fn window_count(len: usize, k: usize, shift: usize) -> usize {
    if len < k {
        0
    } else {
        (len - k) / shift + 1
    }
}

/// Frames a sequence into windows `[t*shift, t*shift + k)`, masked with the
/// sequence's grid mask.
pub fn frame_windows(seq: &CirSequence, k: usize, shift: usize) -> Result<Vec<CirWindow>> {
    if k == 0 || shift == 0 {
        return Err(Error::Config("k and shift must be positive".into()));
    }
    if seq.len() < k {
        return Err(Error::TooShort { len: seq.len(), k });
    }
    (0..window_count(seq.len(), k, shift))
        .map(|t| {
            let r = t * shift..t * shift + k;
            CirWindow::new(&seq.samples[r.clone()], &seq.grid_mask[r], t)
        })
        .collect()
}

/// Per-window training mask: draws `p ~ U(0, p_max)`, then drops each
/// sample with probability `p`. All-missing draws are redrawn.
pub fn gen_window_mask<R: Rng + ?Sized>(k: usize, p_max: f64, rng: &mut R) -> Vec<bool> {
    assert!((0.0..1.0).contains(&p_max), "p_max must lie in [0, 1)");
    assert!(k > 0);
    let p = if p_max > 0.0 { rng.random_range(0.0..p_max) } else { 0.0 };
    loop {
        let mask: Vec<bool> = (0..k).map(|_| rng.random::<f64>() >= p).collect();
        if mask.iter().any(|&b| b) {
            return mask;
        }
    }
}

/// Evaluation mask on the sample grid. Each sample is missing with
/// probability `missing_fraction`; any window of the framing `(k, shift)`
/// left without samples is redrawn until it has at least one.
pub fn gen_grid_mask<R: Rng + ?Sized>(
    seq_len: usize,
    k: usize,
    shift: usize,
    missing_fraction: f64,
    rng: &mut R,
) -> Vec<bool> {
    assert!((0.0..1.0).contains(&missing_fraction), "missing fraction must lie in [0, 1)");
    let mut mask: Vec<bool> = (0..seq_len).map(|_| rng.random::<f64>() >= missing_fraction).collect();
    for t in 0..window_count(seq_len, k, shift) {
        let r = t * shift..t * shift + k;
        while !mask[r.clone()].iter().any(|&b| b) {
            for b in &mut mask[r.clone()] {
                *b = rng.random::<f64>() >= missing_fraction;
            }
        }
    }
    mask
}

/// Frequency and velocity resolution of a `k`-point spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerAxis {
    pub delta_f: f64,
    pub f_max: f64,
    pub delta_v: f64,
    pub v_max: f64,
    /// Bin centre frequencies in DFT order (bin `m >= k/2` is negative).
    pub bins: Vec<f64>,
}

impl DopplerAxis {
    /// Bin frequencies in display (fftshifted) order.
    pub fn shifted_bins(&self) -> Vec<f64> {
        let k = self.bins.len();
        (0..k).map(|i| self.bins[(i + k / 2) % k]).collect()
    }
}

pub fn doppler_axis(k: usize, t_c: f64, f_c: f64) -> DopplerAxis {
    assert!(k > 0 && t_c > 0.0 && f_c > 0.0);
    let delta_f = 1.0 / (k as f64 * t_c);
    let bins = (0..k)
        .map(|m| {
            let signed = if m < k.div_ceil(2) { m as f64 } else { m as f64 - k as f64 };
            signed * delta_f
        })
        .collect();
    DopplerAxis {
        delta_f,
        f_max: 1.0 / (2.0 * t_c),
        delta_v: SPEED_OF_LIGHT / (2.0 * f_c * k as f64 * t_c),
        v_max: SPEED_OF_LIGHT / (4.0 * f_c * t_c),
        bins,
    }
}

/// Index permutation that maps DFT order to fftshifted order.
pub fn fftshift_index(k: usize, i: usize) -> usize {
    (i + k / 2) % k
}

// ---------------------------------------------------------------------------
// CIR file I/O
// ---------------------------------------------------------------------------

const CIR_MAGIC: &[u8; 4] = b"CIR1";

/// Serializes a sequence into the binary CIR layout.
pub fn encode_cir(seq: &CirSequence) -> Vec<u8> {
    let n = seq.len();
    let mut out = Vec::with_capacity(24 + 17 * n + 64);
    out.extend_from_slice(CIR_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&seq.t_c.to_le_bytes());
    out.extend_from_slice(&seq.f_c.to_le_bytes());
    for s in &seq.samples {
        out.extend_from_slice(&s.re.to_le_bytes());
        out.extend_from_slice(&s.im.to_le_bytes());
    }
    out.extend(seq.grid_mask.iter().map(|&b| b as u8));
    let meta = serde_json::to_vec(&seq.meta).expect("metadata is always serializable");
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
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

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_cir(buf: &[u8]) -> Result<CirSequence> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != CIR_MAGIC {
        return Err(Error::format(0, "bad magic, expected CIR1"));
    }
    let n = r.u32("length")? as usize;
    let t_c = r.f64("t_c")?;
    let f_c = r.f64("f_c")?;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f64("sample")?;
        let im = r.f64("sample")?;
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::format(r.pos - 16, "non-finite sample"));
        }
        samples.push(Complex64::new(re, im));
    }
    let start = r.pos;
    let grid_mask = r
        .take(n, "mask")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::format(start + i, format!("invalid mask byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let meta_len = r.u32("metadata length")? as usize;
    let meta_pos = r.pos;
    let meta_bytes = r.take(meta_len, "metadata")?;
    let meta = serde_json::from_slice(meta_bytes)
        .map_err(|e| Error::format(meta_pos, format!("bad metadata: {e}")))?;
    if r.pos != buf.len() {
        return Err(Error::format(r.pos, "trailing bytes after metadata"));
    }
    Ok(CirSequence { samples, grid_mask, t_c, f_c, meta })
}

/// Parses the CSV form with columns `index,real,imag[,mask]`. Sampling
/// parameters are not part of the CSV; `t_c` and `f_c` are supplied.
pub fn decode_cir_csv(text: &str, t_c: f64, f_c: f64) -> Result<CirSequence> {
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().ok_or_else(|| Error::format(0, "empty CSV"))?;
    let cols: Vec<&str> = header.trim().split(',').map(str::trim).collect();
    let has_mask = match cols.as_slice() {
        ["index", "real", "imag"] => false,
        ["index", "real", "imag", "mask"] => true,
        _ => return Err(Error::format(0, format!("unexpected CSV header {:?}", header.trim()))),
    };
    offset += header.len();
    let mut samples = Vec::new();
    let mut grid_mask = Vec::new();
    for line in lines {
        let here = offset;
        offset += line.len();
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::format(here, format!("expected {} columns", cols.len())));
        }
        let bad = |what: &str| Error::format(here, format!("cannot parse {what}"));
        let idx: usize = fields[0].parse().map_err(|_| bad("index"))?;
        if idx != samples.len() {
            return Err(Error::format(here, format!("expected index {}, found {idx}", samples.len())));
        }
        let re: f64 = fields[1].parse().map_err(|_| bad("real"))?;
        let im: f64 = fields[2].parse().map_err(|_| bad("imag"))?;
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::format(here, "non-finite sample"));
        }
        samples.push(Complex64::new(re, im));
        if has_mask {
            grid_mask.push(match fields[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("mask")),
            });
        }
    }
    if !has_mask {
        log::warn!("CSV has no mask column; assuming every sample is available");
        grid_mask = vec![true; samples.len()];
    }
    Ok(CirSequence { samples, grid_mask, t_c, f_c, meta: SequenceMeta::default() })
}

pub fn save_cir(path: &Path, seq: &CirSequence) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_cir(seq)).map_err(|e| Error::io(path, e))
}

/// Loads a binary CIR file, or a CSV file when the extension is `.csv`
/// (sampled with the default `t_c`/`f_c`).
pub fn load_cir(path: &Path) -> Result<CirSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::format(e.valid_up_to(), "CSV is not valid UTF-8"))?;
        let d = SynthConfig::default();
        decode_cir_csv(text, d.t_c, d.f_c)
    } else {
        decode_cir(&bytes)
    }
}
