//! Command-line driver. Every command that writes files also writes a
//! `manifest.toml` next to them holding the resolved configuration. Passing
//! that manifest back through `--config` reproduces the outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    bench_runtime, encode_pgm, spectrogram_csv, sweep_missing, Method, SweepOptions, DEFAULT_FRACTIONS,
};
use crate::model::{count_params, param_init, star_forward_sequence, Model, Variant};
use crate::solvers::{IhtConfig, IstaConfig};
use crate::synth::{frame_windows, gen_grid_mask, load_cir, save_cir, synth_dataset, synth_sequence, CirSequence, SynthConfig};
use crate::training::{
    gradcheck_case, gradient_check, load_checkpoint, prepare, save_checkpoint, split_by_sequence, train_prepared_with,
    Checkpoint, TrainConfig,
};

pub const MANIFEST: &str = "manifest.toml";

/// Exit status for a run that completed but breached a tolerance or an
/// acceptance check.
pub const EXIT_CHECK_FAILED: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "star", version, about = "Sparse Doppler spectrogram reconstruction")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Run configuration or a manifest written by an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub ablation: Option<Variant>,
    /// Number of past spectra in the attention buffer.
    #[arg(long, global = true)]
    pub np: Option<usize>,
    /// Missing fractions, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub missing: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub assert_acceptance: bool,
    /// Record wall times in the sweep table.
    #[arg(long, global = true)]
    pub timing: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic CIR sequences.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a synthesized data directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the spectrogram of one CIR file.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        cir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Missing-fraction sweep against the solver baselines.
    Eval {
        #[arg(long = "checkpoint")]
        checkpoints: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-window runtime of the model and the solvers.
    Bench {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the analytic gradients.
    Gradcheck {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Train { .. } => "train",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Eval { .. } => "eval",
            Command::Bench { .. } => "bench",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_sequences: usize,
    pub n_windows: usize,
    /// Share of sequences held out for the validation loss.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n_sequences: 20, n_windows: 100, val_fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub timing: bool,
    /// Any of `iht-1`, `iht-converged`, `omp`, `ista`.
    pub baselines: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            seed: 0,
            timing: false,
            baselines: ["iht-1", "iht-converged", "omp", "ista"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructConfig {
    pub missing_fraction: f64,
    pub seed: u64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self { missing_fraction: 0.9, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub n_windows: usize,
    pub missing_fraction: f64,
    pub reps: usize,
    pub seed: u64,
    /// Required ratio of IHT-at-convergence time over model time.
    pub min_speedup: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { n_windows: 64, missing_fraction: 0.5, reps: 5, seed: 0, min_speedup: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub ks: Vec<usize>,
    pub instances: usize,
    pub eps: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { ks: vec![4, 8], instances: 2, eps: 1e-5, tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threads: usize,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub reconstruct: ReconstructConfig,
    pub bench: BenchConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            threads: 1,
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            reconstruct: ReconstructConfig::default(),
            bench: BenchConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    /// Applies command-line overrides. `--seed` replaces every seed.
    pub fn resolve(mut self, args: &GlobalArgs) -> Result<Self> {
        if let Some(s) = args.seed {
            self.synth.seed = s;
            self.train.seed = s;
            self.eval.seed = s;
            self.reconstruct.seed = s;
            self.bench.seed = s;
            self.gradcheck.seed = s;
        }
        if let Some(t) = args.threads {
            self.threads = t;
        }
        if let Some(v) = args.ablation {
            self.train.variant = v;
        }
        if let Some(np) = args.np {
            self.train.n_past = np;
        }
        if let Some(m) = &args.missing {
            if m.is_empty() {
                return Err(Error::Config("--missing needs at least one fraction".into()));
            }
            self.eval.fractions = m.clone();
            self.reconstruct.missing_fraction = m[0];
        }
        if args.timing {
            self.eval.timing = true;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.synth.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.data.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        let in_range = |f: f64| (0.0..1.0).contains(&f);
        if let Some(f) = self.eval.fractions.iter().find(|f| !in_range(**f)) {
            return Err(Error::Config(format!("missing fraction {f} outside [0, 1)")));
        }
        if !in_range(self.reconstruct.missing_fraction) || !in_range(self.bench.missing_fraction) {
            return Err(Error::Config("missing fraction outside [0, 1)".into()));
        }
        for b in &self.eval.baselines {
            baseline(b, self.train.omega)?;
        }
        if self.gradcheck.ks.iter().any(|&k| k < 2) || !(self.gradcheck.eps > 0.0) {
            return Err(Error::Config("gradcheck needs K >= 2 and eps > 0".into()));
        }
        Ok(())
    }
}

fn baseline(name: &str, omega: usize) -> Result<Method> {
    Ok(match name {
        "iht-1" => Method::IhtSingle(IhtConfig::single_iteration()),
        "iht-converged" => Method::IhtConverged(IhtConfig::converged()),
        "omp" => Method::Omp(omega),
        "ista" => Method::Ista(IstaConfig::default()),
        other => return Err(Error::Config(format!("unknown baseline `{other}`"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    #[serde(default)]
    pub inputs: BTreeMap<String, String>,
    #[serde(default)]
    pub files: Vec<FileRecord>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("manifest serialization: {e}")))
    }
}

/// Reads a run configuration, accepting either a plain config file or a
/// manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |e: toml::de::Error| Error::Config(format!("{}: {e}", path.display()));
    let table: toml::Table = toml::from_str(&text).map_err(bad)?;
    if table.contains_key("command") {
        Ok(toml::from_str::<Manifest>(&text).map_err(bad)?.config)
    } else {
        toml::from_str(&text).map_err(bad)
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: &Cli) -> Result<u8> {
    let base = match &cli.global.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth { out, n } => cmd_synth(&cfg, out, *n),
        Command::Train { data, out } => cmd_train(&cfg, data, out),
        Command::Reconstruct { checkpoint, cir, out } => cmd_reconstruct(&cfg, checkpoint, cir, out),
        Command::Eval { checkpoints, data, out } => cmd_eval(&cfg, checkpoints, data, out, cli.global.assert_acceptance),
        Command::Bench { checkpoint, out } => cmd_bench(&cfg, checkpoint.as_deref(), out.as_deref()),
        Command::Gradcheck { out } => cmd_gradcheck(&cfg, out.as_deref()),
    })
    .inspect(|_| log::debug!("{} done", cli.command.name()))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    inputs: BTreeMap<String, String>,
    files: Vec<FileRecord>,
) -> Result<()> {
    let m = Manifest { command: command.into(), inputs, files, config: cfg.clone() };
    write_file(&dir.join(MANIFEST), m.to_toml()?)
}

fn plain(path: &str) -> FileRecord {
    FileRecord { path: path.into(), seed: None, label: None }
}

fn inputs(pairs: &[(&str, &Path)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, p)| (k.to_string(), p.display().to_string())).collect()
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, n: Option<usize>) -> Result<u8> {
    let mut cfg = cfg.clone();
    if let Some(n) = n {
        cfg.data.n_sequences = n;
    }
    create_dir(out)?;
    let seqs = synth_dataset(&cfg.synth, cfg.data.n_sequences, cfg.data.n_windows)?;
    let mut files = Vec::with_capacity(seqs.len());
    for (i, s) in seqs.iter().enumerate() {
        let name = format!("seq_{i:05}.cir");
        save_cir(&out.join(&name), s)?;
        files.push(FileRecord { path: name, seed: s.meta.seed, label: Some(s.meta.label.clone()) });
    }
    write_manifest(out, "synth", &cfg, BTreeMap::new(), files)?;
    println!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(0)
}

/// Loads every sequence listed in a data directory's manifest.
pub fn load_data_dir(dir: &Path) -> Result<Vec<CirSequence>> {
    let m = Manifest::load(&dir.join(MANIFEST))?;
    m.files.iter().map(|f| load_cir(&dir.join(&f.path))).collect()
}

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<u8> {
    let seqs = load_data_dir(data)?;
    let (train_set, val_set) = split_by_sequence(&seqs, cfg.data.val_fraction, cfg.train.seed);
    create_dir(out)?;
    let ckpt_path = out.join("checkpoint.star");
    let tc = &cfg.train;
    let train_data = prepare(&train_set, tc.k, tc.shift)?;
    let val_data = prepare(&val_set, tc.k, tc.shift)?;

    // the initialization is the last good state until an epoch completes
    let init = param_init(tc.hyper(), tc.seed)?;
    let adam = crate::training::AdamState::new(&init, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);
    save_checkpoint(&ckpt_path, &Checkpoint { params: init, config: tc.clone(), step: 0, adam })?;
    let result = train_prepared_with(&train_data, &val_data, tc, None, |c, rec| {
        log::info!("epoch {} done, {} steps", rec.epoch, rec.steps);
        save_checkpoint(&ckpt_path, c)
    });
    let (ckpt, history) = match result {
        Ok(r) => r,
        Err(e @ (Error::Diverged { .. } | Error::NonFiniteGradient(_))) => {
            eprintln!("training aborted: {e}; last good checkpoint kept at {}", ckpt_path.display());
            return Err(e);
        }
        Err(e) => return Err(e),
    };
    save_checkpoint(&ckpt_path, &ckpt)?;
    write_file(&out.join("history.csv"), history.to_csv())?;
    write_manifest(
        out,
        "train",
        cfg,
        inputs(&[("data", data)]),
        vec![plain("checkpoint.star"), plain("history.csv")],
    )?;
    let last = history.epochs.last();
    println!(
        "trained {} on {} sequences ({} held out): train loss {}, val loss {}",
        tc.variant.name(),
        train_set.len(),
        val_set.len(),
        last.map_or("n/a".into(), |e| format!("{:.6e}", e.train_loss)),
        last.and_then(|e| e.val_loss).map_or("n/a".into(), |v| format!("{v:.6e}")),
    );
    Ok(0)
}

pub fn cmd_reconstruct(cfg: &RunConfig, checkpoint: &Path, cir: &Path, out: &Path) -> Result<u8> {
    let ckpt = load_checkpoint(checkpoint, Some(cfg.train.k))?;
    let (k, shift) = (ckpt.config.k, ckpt.config.shift);
    let seq = load_cir(cir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.reconstruct.seed);
    let mask = gen_grid_mask(seq.len(), k, shift, cfg.reconstruct.missing_fraction, &mut rng);
    let windows = frame_windows(&seq.with_mask(mask), k, shift)?;
    let spec = star_forward_sequence(&windows, &Model::new(ckpt.params));
    create_dir(out)?;
    write_file(&out.join("spectrogram.csv"), spectrogram_csv(spec.view(), seq.t_c, seq.f_c))?;
    write_file(&out.join("spectrogram.pgm"), encode_pgm(spec.view()))?;
    write_manifest(
        out,
        "reconstruct",
        cfg,
        inputs(&[("checkpoint", checkpoint), ("cir", cir)]),
        vec![plain("spectrogram.csv"), plain("spectrogram.pgm")],
    )?;
    println!("reconstructed {} windows into {}", windows.len(), out.display());
    Ok(0)
}

pub fn cmd_eval(cfg: &RunConfig, checkpoints: &[PathBuf], data: &Path, out: &Path, assert_acceptance: bool) -> Result<u8> {
    let test = load_data_dir(data)?;
    let mut methods = Vec::new();
    let mut star_names = Vec::new();
    let (mut k, mut shift) = (cfg.train.k, cfg.train.shift);
    for (i, path) in checkpoints.iter().enumerate() {
        let ckpt = load_checkpoint(path, None)?;
        if i == 0 {
            (k, shift) = (ckpt.config.k, ckpt.config.shift);
        }
        let mut name = ckpt.config.variant.name().to_string();
        if star_names.contains(&name) {
            name = format!("{name}-{}", i + 1);
        }
        star_names.push(name.clone());
        methods.push(Method::Star { name, model: Model::new(ckpt.params) });
    }
    let mut baselines = cfg.eval.baselines.clone();
    if assert_acceptance {
        for b in ["iht-1", "iht-converged"] {
            if !baselines.iter().any(|x| x == b) {
                baselines.push(b.into());
            }
        }
    }
    for b in &baselines {
        methods.push(baseline(b, cfg.train.omega)?);
    }
    let opts = SweepOptions { fractions: cfg.eval.fractions.clone(), k, shift, seed: cfg.eval.seed, timing: cfg.eval.timing };
    let res = sweep_missing(&methods, &test, &opts)?;
    create_dir(out)?;
    let csv = res.to_csv();
    write_file(&out.join("sweep.csv"), &csv)?;
    let mut ins = inputs(&[("data", data)]);
    for (i, p) in checkpoints.iter().enumerate() {
        ins.insert(format!("checkpoint_{i}"), p.display().to_string());
    }
    write_manifest(out, "eval", cfg, ins, vec![plain("sweep.csv")])?;
    print!("{csv}");

    if !assert_acceptance {
        return Ok(0);
    }
    if star_names.is_empty() {
        return Err(Error::Config("--assert-acceptance needs at least one checkpoint".into()));
    }
    let Some(&f) = opts.fractions.iter().find(|f| (**f - 0.9).abs() < 1e-12) else {
        return Err(Error::Config("--assert-acceptance needs 0.9 among the missing fractions".into()));
    };
    let rmse = |m: &str| res.get(m, f).map(|r| r.rmse).unwrap_or(f64::NAN);
    let mut ok = true;
    for name in &star_names {
        let (s, one, conv) = (rmse(name), rmse("iht-1"), rmse("iht-converged"));
        let pass = s < one && s < conv;
        println!(
            "acceptance {}: {name} rmse {s:.4} vs iht-1 {one:.4}, iht-converged {conv:.4} at {f}",
            if pass { "PASS" } else { "FAIL" }
        );
        ok &= pass;
    }
    Ok(if ok { 0 } else { EXIT_CHECK_FAILED })
}

pub fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>, out: Option<&Path>) -> Result<u8> {
    let params = match checkpoint {
        Some(p) => load_checkpoint(p, Some(cfg.train.k))?.params,
        None => param_init(cfg.train.hyper(), cfg.train.seed)?,
    };
    let (k, shift) = (params.k(), cfg.train.shift);
    let n_params = params.param_count();
    let learn_s = params.s.is_some();
    let synth = SynthConfig { k, shift, seed: cfg.bench.seed, ..cfg.synth.clone() };
    let seq = synth_sequence(&synth, cfg.bench.n_windows.max(1))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.bench.seed);
    let mask = gen_grid_mask(seq.len(), k, shift, cfg.bench.missing_fraction, &mut rng);
    let windows = frame_windows(&seq.with_mask(mask), k, shift)?;
    let methods = vec![
        Method::star(Model::new(params)),
        Method::IhtSingle(IhtConfig::single_iteration()),
        Method::IhtConverged(IhtConfig::converged()),
    ];
    let report = bench_runtime(&methods, &windows, cfg.bench.reps)?;
    let mut text = report.to_table();
    let _ = writeln!(text, "# parameters: {n_params} (count_params({k}, {learn_s}) = {})", count_params(k, learn_s));
    print!("{text}");
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("bench.csv"), &text)?;
        let ins = checkpoint.map(|p| inputs(&[("checkpoint", p)])).unwrap_or_default();
        write_manifest(dir, "bench", cfg, ins, vec![plain("bench.csv")])?;
    }
    let speedup = report.speedup.unwrap_or(0.0);
    if speedup < cfg.bench.min_speedup {
        eprintln!("speedup {speedup:.2} below the required {:.2}", cfg.bench.min_speedup);
        return Ok(EXIT_CHECK_FAILED);
    }
    Ok(0)
}

pub fn cmd_gradcheck(cfg: &RunConfig, out: Option<&Path>) -> Result<u8> {
    let gc = &cfg.gradcheck;
    let variants = [Variant::Full, Variant::NoAttention, Variant::OnlyAdd, Variant::LearnS];
    let mut text = String::from("k,variant,instance,tensor,max_rel_err,entries\n");
    let mut worst = 0.0f64;
    for &k in &gc.ks {
        for variant in variants {
            let tc = TrainConfig {
                k,
                shift: k / 2,
                omega: cfg.train.omega.min(k),
                n_past: cfg.train.n_past,
                variant,
                ..cfg.train.clone()
            };
            for inst in 0..gc.instances {
                let seed = gc.seed.wrapping_add((k * 1000 + inst) as u64);
                let c = gradcheck_case(&tc, seed)?;
                let report = gradient_check(&c.window, &c.buf, &c.params, c.y_gt.view(), c.z_gt.view(), &tc, gc.eps)?;
                for r in report {
                    worst = worst.max(r.max_rel_err);
                    let _ = writeln!(text, "{k},{},{inst},{},{:.3e},{}", variant.name(), r.tensor, r.max_rel_err, r.entries);
                }
            }
        }
    }
    print!("{text}");
    println!("# worst relative error {worst:.3e} (tolerance {:.1e})", gc.tol);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_file(&dir.join("gradcheck.csv"), &text)?;
        write_manifest(dir, "gradcheck", cfg, BTreeMap::new(), vec![plain("gradcheck.csv")])?;
    }
    Ok(if worst < gc.tol { 0 } else { EXIT_CHECK_FAILED })
}
