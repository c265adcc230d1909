//! The `texsyn` command-line tool.
//!
//! ```text
//! texsyn train           --config run.json [--seed N] [--out DIR]
//! texsyn generate        --config run.json [--seed N] [--out DIR] [--raw]
//! texsyn evaluate        --config run.json [--out DIR]
//! texsyn bench           --config run.json [--seed N] [--out DIR]
//! texsyn validate-config --config run.json
//! ```
//!
//! Exit codes: 0 success, 2 usage or config error, 3 runtime error
//! (including training divergence).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::{MetricOptions, RunConfig};
use crate::error::{Error, Result};
use crate::grids::{load_texture, TextureGrid};
use crate::metrics::{curve, ensemble_stats, mean_abs_diff, porosity, Averaging, EnsembleCurve, MetricCurve, MetricKind};
use crate::nets::{DiscriminatorSpec, Generator};
use crate::synthesis::{generate_with, write_realizations};
use crate::training::{checkpoint_name, run_training, GanMode, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Caps the worker threads used by `evaluate`.
pub const THREADS_ENV: &str = "TEXSYN_THREADS";

pub const REALIZATIONS_DIR: &str = "realizations";
pub const EVALUATION_DIR: &str = "evaluation";
pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_CSV_HEADER: &str = "model,output_dims,segment_dims,segments,steps_timed,median_step_seconds,ratio_to_dcgan";

#[derive(Debug, Parser)]
#[command(name = "texsyn", version, about = "Segment-assembled adversarial texture synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a generator; writes checkpoints and a loss history CSV.
    Train(Common),
    /// Draw realizations from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Write model-range float32 .npy arrays instead of binary images.
        #[arg(long)]
        raw: bool,
    },
    /// Compare realization statistics against the training images.
    Evaluate(Common),
    /// Time DCGAN and SAGAN training steps at the configured output size.
    Bench(Common),
    /// Check a config file and print diagnostics.
    ValidateConfig(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(Error),
    Runtime(Error),
}

impl Failure {
    fn report(self) -> i32 {
        match self {
            Failure::Config(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e}");
                EXIT_RUNTIME
            }
        }
    }
}

fn runtime(e: Error) -> Failure {
    Failure::Runtime(e)
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(c) => load(&c).and_then(|cfg| cmd_train(&cfg)),
        Command::Generate { common, raw } => load(&common).and_then(|cfg| cmd_generate(&cfg, raw)),
        Command::Evaluate(c) => load(&c).and_then(|cfg| cmd_evaluate(&cfg)),
        Command::Bench(c) => load(&c).and_then(|cfg| cmd_bench(&cfg)),
        Command::ValidateConfig(c) => load(&c).map(|cfg| {
            for w in cfg.warnings() {
                eprintln!("warning: {w}");
            }
            println!("{}: ok", c.config.display());
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => f.report(),
    }
}

fn load(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&c.config).map_err(|e| match e {
        Error::Io { .. } => Failure::Runtime(e),
        other => Failure::Config(other),
    })?;
    if let Some(seed) = c.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &c.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn load_tis(cfg: &RunConfig) -> Result<Vec<TextureGrid<f32>>, Failure> {
    if cfg.ti_paths.is_empty() {
        return Err(Failure::Config(Error::Config {
            path: "ti_paths".into(),
            message: "at least one training image is required".into(),
        }));
    }
    cfg.ti_paths.iter().map(load_texture::<f32>).collect::<Result<_>>().map_err(runtime)
}

fn cmd_train(cfg: &RunConfig) -> Result<(), Failure> {
    let tis = load_tis(cfg)?;
    let tc = cfg.train_config().map_err(Failure::Config)?;
    let trainer = Trainer::new(&tis, &cfg.generator, &cfg.discriminator, tc).map_err(runtime)?;
    let outcome = run_training(trainer, Some(&cfg.out_dir), |_| {}).map_err(runtime)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} steps: j_d={:.4} j_g={:.4}; checkpoints in {}",
            outcome.history.len(),
            last.j_d,
            last.j_g,
            cfg.out_dir.join("checkpoints").display()
        );
    } else {
        println!("trained 0 steps");
    }
    Ok(())
}

/// Newest `ckpt_*.sgck` in `dir`.
pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("ckpt_") && n.ends_with(".sgck"))
        })
        .collect();
    found.sort();
    found
        .pop()
        .ok_or_else(|| Error::Invalid(format!("no checkpoints in {}", dir.display())))
}

fn cmd_generate(cfg: &RunConfig, raw: bool) -> Result<(), Failure> {
    let ckpt_path = match &cfg.synthesis.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&cfg.out_dir.join("checkpoints")).map_err(runtime)?,
    };
    let ckpt = Checkpoint::<f32>::load(&ckpt_path).map_err(runtime)?;
    let mut g = Generator::from_params(&ckpt.meta.generator, ckpt.generator).map_err(runtime)?;
    let dims = match &cfg.synthesis.output_dims {
        Some(d) => d.clone(),
        None => g.spec().output_dims().map_err(runtime)?,
    };
    let threshold = (!raw).then_some(cfg.synthesis.binarize_threshold);
    let grids = generate_with(&mut g, &dims, cfg.synthesis.count, cfg.synthesis_seed(), threshold).map_err(runtime)?;
    let dir = cfg.out_dir.join(REALIZATIONS_DIR);
    clear_realizations(&dir).map_err(runtime)?;
    let written = write_realizations(&grids, &dir).map_err(runtime)?;
    println!("wrote {} realizations of {dims:?} to {}", written.len(), dir.display());
    Ok(())
}

fn is_realization(p: &Path) -> bool {
    p.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n.starts_with("real_"))
}

fn clear_realizations(dir: &Path) -> Result<()> {
    let Ok(entries) = fs::read_dir(dir) else {
        return Ok(());
    };
    for p in entries.filter_map(|e| e.ok().map(|e| e.path())) {
        if is_realization(&p) {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// Binary realization files (`real_*.png|.sgrd`) in name order.
pub fn realization_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            is_realization(p) && matches!(p.extension().and_then(|e| e.to_str()), Some("png" | "sgrd"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<(), Failure> {
    let tis = load_tis(cfg)?;
    let files = realization_files(&cfg.out_dir.join(REALIZATIONS_DIR)).map_err(runtime)?;
    let reals: Vec<TextureGrid<f32>> = files.iter().map(load_texture).collect::<Result<_>>().map_err(runtime)?;
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| runtime(Error::Invalid(format!("thread pool: {e}"))))?;
    let out = cfg.out_dir.join(EVALUATION_DIR);
    let summary = pool
        .install(|| evaluate_run(&reals, &tis, &cfg.metrics, &out))
        .map_err(runtime)?;
    println!(
        "evaluated {} realizations against {} training images; porosity {:.4} vs {:.4}; report in {}",
        summary.realizations,
        summary.training_images,
        summary.porosity.realizations_mean,
        summary.porosity.tis_mean,
        out.display()
    );
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PorositySummary {
    pub realizations_mean: f64,
    pub realizations_std: f64,
    pub tis_mean: f64,
    pub tis_std: f64,
}

/// Ensemble-mean comparison for one statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveComparison {
    pub kind: MetricKind,
    pub averaging: Averaging,
    pub max_lag: usize,
    /// Mean over lags of `|mean_realizations(r) − mean_tis(r)|`.
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationSummary {
    pub realizations: usize,
    pub training_images: usize,
    pub porosity: PorositySummary,
    pub comparisons: Vec<CurveComparison>,
}

fn curves_csv(names: &[String], curves: &[MetricCurve]) -> String {
    let mut s = String::from("r");
    for n in names {
        let _ = write!(s, ",{n}");
    }
    s.push('\n');
    for (i, lag) in curves[0].lags.iter().enumerate() {
        let _ = write!(s, "{lag}");
        for c in curves {
            let _ = write!(s, ",{}", c.values[i]);
        }
        s.push('\n');
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Computes every configured curve for realizations and training images and
/// writes `curves_*`, `ensemble_*` CSVs and `summary.json` into `out`.
pub fn evaluate_run(
    reals: &[TextureGrid<f32>],
    tis: &[TextureGrid<f32>],
    options: &MetricOptions,
    out: &Path,
) -> Result<EvaluationSummary> {
    if reals.is_empty() {
        return Err(Error::Invalid("no realizations to evaluate".into()));
    }
    if tis.is_empty() {
        return Err(Error::Invalid("no training images to compare against".into()));
    }
    let ndim = reals[0].ndim();
    if reals.iter().chain(tis).any(|g| g.ndim() != ndim) {
        return Err(Error::Shape("realizations and training images must share dimensionality".into()));
    }
    let min_dim = reals
        .iter()
        .chain(tis)
        .flat_map(|g| g.dims().iter().copied())
        .min()
        .expect("non-empty");
    let max_lag = options.max_lag.unwrap_or((min_dim / 2).max(1));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let por = |gs: &[TextureGrid<f32>]| -> Result<(f64, f64)> {
        let v: Vec<f64> = gs.iter().map(porosity).collect::<Result<_>>()?;
        let mean = v[0] + v.iter().map(|p| p - v[0]).sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / v.len() as f64;
        Ok((mean, var.sqrt()))
    };
    let (rm, rs) = por(reals)?;
    let (tm, ts) = por(tis)?;

    let real_names: Vec<String> = (0..reals.len()).map(|i| format!("real_{i:04}")).collect();
    let ti_names: Vec<String> = (0..tis.len()).map(|i| format!("ti_{i:04}")).collect();
    let mut comparisons = Vec::new();
    for &kind in &options.kinds {
        for averaging in options.averaging_for(ndim) {
            let compute = |gs: &[TextureGrid<f32>]| -> Result<Vec<MetricCurve>> {
                gs.par_iter()
                    .map(|g| curve(g, kind, averaging, max_lag, options.boundary, options.connectivity))
                    .collect()
            };
            let rc = compute(reals)?;
            let tc = compute(tis)?;
            let tag = format!("{}_{}", kind_name(kind), averaging.name());
            write_file(&out.join(format!("curves_realizations_{tag}.csv")), &curves_csv(&real_names, &rc))?;
            write_file(&out.join(format!("curves_tis_{tag}.csv")), &curves_csv(&ti_names, &tc))?;
            let re: EnsembleCurve = ensemble_stats(&rc)?;
            let te = ensemble_stats(&tc)?;
            write_file(&out.join(format!("ensemble_realizations_{tag}.csv")), &re.to_csv())?;
            write_file(&out.join(format!("ensemble_tis_{tag}.csv")), &te.to_csv())?;
            comparisons.push(CurveComparison {
                kind,
                averaging,
                max_lag,
                mae: mean_abs_diff(&re.mean, &te.mean),
            });
        }
    }
    let summary = EvaluationSummary {
        realizations: reals.len(),
        training_images: tis.len(),
        porosity: PorositySummary {
            realizations_mean: rm,
            realizations_std: rs,
            tis_mean: tm,
            tis_std: ts,
        },
        comparisons,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Invalid(e.to_string()))?;
    write_file(&out.join("summary.json"), &(json + "\n"))?;
    Ok(summary)
}

fn kind_name(kind: MetricKind) -> &'static str {
    match kind {
        MetricKind::S2 => "s2",
        MetricKind::C2 => "c2",
    }
}

/// One model's timing in `bench`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub mode: GanMode,
    pub output_dims: Vec<usize>,
    pub segment_dims: Vec<usize>,
    pub segments: usize,
    pub steps_timed: usize,
    pub median_step_seconds: f64,
}

fn dims_str(d: &[usize]) -> String {
    d.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("x")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times DCGAN (whole-image discriminator) and SAGAN (the configured
/// segments) training steps at the generator's output size, reporting the
/// median over steps `warmup..steps`. Steps of the two models are
/// interleaved, alternating which goes first, so drift in machine load
/// affects both equally.
pub fn bench_run(cfg: &RunConfig, tis: &[TextureGrid<f32>]) -> Result<Vec<BenchRow>> {
    let out = cfg.generator.output_dims()?;
    let layout = cfg.segment_layout()?.ok_or_else(|| Error::Config {
        path: "segment".into(),
        message: "bench needs segment dims for the SAGAN model".into(),
    })?;
    let modes = [GanMode::Dcgan, GanMode::Sagan];
    let mut trainers = Vec::with_capacity(2);
    for mode in modes {
        let mut tc = cfg.train_config()?;
        tc.mode = mode;
        tc.epochs = cfg.bench.steps;
        tc.layout = (mode == GanMode::Sagan).then(|| layout.clone());
        let input_dims = match mode {
            GanMode::Dcgan => out.clone(),
            GanMode::Sagan => layout.segment_dims().to_vec(),
        };
        let d_spec = DiscriminatorSpec {
            input_dims,
            ..cfg.discriminator.clone()
        };
        trainers.push(Trainer::new(tis, &cfg.generator, &d_spec, tc)?);
    }
    let mut times: [Vec<_>; 2] = std::array::from_fn(|_| Vec::with_capacity(cfg.bench.steps as usize));
    for step in 0..cfg.bench.steps {
        let order = if step % 2 == 0 { [0, 1] } else { [1, 0] };
        for m in order {
            let t0 = Instant::now();
            trainers[m].step()?;
            times[m].push(t0.elapsed().as_secs_f64());
        }
    }
    Ok(modes
        .iter()
        .zip(trainers.iter().zip(times))
        .map(|(&mode, (trainer, mut t))| {
            let timed = t.split_off(cfg.bench.warmup as usize);
            BenchRow {
                mode,
                output_dims: out.clone(),
                segment_dims: trainer.layout().segment_dims().to_vec(),
                segments: trainer.layout().n(),
                steps_timed: timed.len(),
                median_step_seconds: median(timed),
            }
        })
        .collect())
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let base = rows
        .iter()
        .find(|r| r.mode == GanMode::Dcgan)
        .map(|r| r.median_step_seconds);
    let mut s = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let name = match r.mode {
            GanMode::Dcgan => "dcgan",
            GanMode::Sagan => "sagan",
        };
        let ratio = base.map_or(f64::NAN, |b| r.median_step_seconds / b);
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{:.6},{:.4}",
            dims_str(&r.output_dims),
            dims_str(&r.segment_dims),
            r.segments,
            r.steps_timed,
            r.median_step_seconds,
            ratio
        );
    }
    s
}

fn cmd_bench(cfg: &RunConfig) -> Result<(), Failure> {
    let tis = load_tis(cfg)?;
    let rows = bench_run(cfg, &tis).map_err(|e| match e {
        Error::Config { .. } => Failure::Config(e),
        other => Failure::Runtime(other),
    })?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| runtime(Error::io(&cfg.out_dir, e)))?;
    let path = cfg.out_dir.join(BENCH_CSV);
    let csv = bench_csv(&rows);
    write_file(&path, &csv).map_err(runtime)?;
    print!("{csv}");
    Ok(())
}

/// File name of the checkpoint written after `step` steps.
pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join("checkpoints").join(checkpoint_name(step))
}
