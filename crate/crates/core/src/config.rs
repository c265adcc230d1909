//! JSON run configuration shared by every command-line subcommand.
//!
//! Relative paths inside a config file resolve against the directory that
//! contains the file. Validation errors carry the JSON path of the offending
//! key (`training.batch_size`, `segment`, `metrics.averaging[1]`, ...).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Averaging, Boundary, Connectivity, MetricKind};
use crate::nets::{projective_field_warnings, DiscriminatorSpec, GeneratorSpec};
use crate::optim::AdamConfig;
use crate::segmentation::{plan_layout, SegmentLayout, TiSampling};
use crate::synthesis::lattice_for;
use crate::training::{GanMode, TrainConfig, MAX_EPOCHS};

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: GanMode,
    #[serde(default)]
    pub ti_paths: Vec<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub rng_seed: u64,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
    /// Segment dims over the generator output (SAGAN).
    #[serde(default)]
    pub segment: Option<Vec<usize>>,
    /// Per-axis overlap of adjacent segments; zero when absent.
    #[serde(default)]
    pub overlap: Option<Vec<usize>>,
    #[serde(default)]
    pub training: TrainingOptions,
    #[serde(default)]
    pub synthesis: SynthesisOptions,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub bench: BenchOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingOptions {
    pub batch_size: usize,
    pub epochs: u64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub checkpoint_every: u64,
    pub ti_sampling: TiSampling,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        let adam = AdamConfig::default();
        TrainingOptions {
            batch_size: 16,
            epochs: MAX_EPOCHS,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            checkpoint_every: 1000,
            ti_sampling: TiSampling::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisOptions {
    /// Defaults to the newest checkpoint under `out_dir/checkpoints`.
    pub checkpoint: Option<PathBuf>,
    /// Defaults to the generator's training output size.
    pub output_dims: Option<Vec<usize>>,
    pub count: usize,
    /// Defaults to the top-level `rng_seed`.
    pub rng_seed: Option<u64>,
    pub binarize_threshold: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            checkpoint: None,
            output_dims: None,
            count: 20,
            rng_seed: None,
            binarize_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub kinds: Vec<MetricKind>,
    /// Defaults to one directional curve per grid axis.
    pub averaging: Option<Vec<Averaging>>,
    /// Defaults to half the smallest dim over all evaluated grids.
    pub max_lag: Option<usize>,
    pub boundary: Boundary,
    pub connectivity: Connectivity,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            kinds: vec![MetricKind::S2, MetricKind::C2],
            averaging: None,
            max_lag: None,
            boundary: Boundary::Truncated,
            connectivity: Connectivity::Face,
        }
    }
}

impl MetricOptions {
    pub fn averaging_for(&self, ndim: usize) -> Vec<Averaging> {
        self.averaging.clone().unwrap_or_else(|| {
            let mut v = vec![Averaging::DirectionalX, Averaging::DirectionalY];
            if ndim == 3 {
                v.push(Averaging::DirectionalZ);
            }
            v
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchOptions {
    /// Timed steps per model.
    pub steps: u64,
    /// Steps excluded from the median.
    pub warmup: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions { steps: 150, warmup: 50 }
    }
}

fn config_err(path: &str, message: impl std::fmt::Display) -> Error {
    Error::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

impl RunConfig {
    /// Parses and validates; returns the config with paths resolved.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Parses and validates a JSON document; relative paths are kept as is.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_err(&path, e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.ti_paths.iter_mut().for_each(fix);
        fix(&mut self.out_dir);
        if let Some(c) = self.synthesis.checkpoint.as_mut() {
            fix(c);
        }
    }

    /// Replaces every seed in the config.
    pub fn override_seed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.synthesis.rng_seed = None;
    }

    pub fn synthesis_seed(&self) -> u64 {
        self.synthesis.rng_seed.unwrap_or(self.rng_seed)
    }

    pub fn ndim(&self) -> usize {
        self.generator.ndim()
    }

    /// The configured segment layout over the generator output, if any.
    pub fn segment_layout(&self) -> Result<Option<SegmentLayout>> {
        let Some(seg) = &self.segment else {
            return Ok(None);
        };
        let out = self.generator.output_dims().map_err(|e| config_err("generator", e))?;
        let overlap = self.overlap.clone().unwrap_or_else(|| vec![0; seg.len()]);
        if seg.len() != out.len() {
            return Err(config_err(
                "segment",
                format!("expected {} entries, got {}", out.len(), seg.len()),
            ));
        }
        if overlap.len() != out.len() {
            return Err(config_err(
                "overlap",
                format!("expected {} entries, got {}", out.len(), overlap.len()),
            ));
        }
        plan_layout(&out, seg, &overlap).map(Some).map_err(|e| config_err("segment", e))
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.training;
        let mut cfg = TrainConfig::new(self.mode, t.batch_size, t.epochs, self.rng_seed);
        cfg.adam = AdamConfig {
            learning_rate: t.learning_rate,
            beta1: t.adam_beta1,
            beta2: t.adam_beta2,
            eps: t.adam_eps,
        };
        cfg.checkpoint_every = t.checkpoint_every;
        cfg.ti_sampling = t.ti_sampling;
        if self.mode == GanMode::Sagan {
            cfg.layout = self.segment_layout()?;
        }
        Ok(cfg)
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        self.generator.validate().map_err(|e| config_err("generator", e))?;
        self.discriminator.validate().map_err(|e| config_err("discriminator", e))?;
        let nd = self.ndim();
        let out = self.generator.output_dims().map_err(|e| config_err("generator", e))?;
        if self.discriminator.input_dims.len() != nd {
            return Err(config_err(
                "discriminator.input_dims",
                format!("expected {nd} entries to match the generator"),
            ));
        }

        let t = &self.training;
        if !(4..=64).contains(&t.batch_size) {
            return Err(config_err("training.batch_size", format!("must lie in [4, 64], got {}", t.batch_size)));
        }
        if t.epochs > MAX_EPOCHS {
            return Err(config_err("training.epochs", format!("must be at most {MAX_EPOCHS}")));
        }
        if t.checkpoint_every == 0 {
            return Err(config_err("training.checkpoint_every", "must be positive"));
        }
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return Err(config_err("training.learning_rate", "must be positive and finite"));
        }
        for (key, b) in [("training.adam_beta1", t.adam_beta1), ("training.adam_beta2", t.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(key, "must lie in [0, 1)"));
            }
        }
        if !(t.adam_eps > 0.0 && t.adam_eps.is_finite()) {
            return Err(config_err("training.adam_eps", "must be positive and finite"));
        }

        let layout = self.segment_layout()?;
        match self.mode {
            GanMode::Dcgan => {
                if self.discriminator.input_dims != out {
                    return Err(config_err(
                        "discriminator.input_dims",
                        format!(
                            "DCGAN needs the discriminator input {:?} to equal the generator output {out:?}",
                            self.discriminator.input_dims
                        ),
                    ));
                }
            }
            GanMode::Sagan => {
                let layout = layout
                    .as_ref()
                    .ok_or_else(|| config_err("segment", "SAGAN mode requires segment dims"))?;
                if layout.segment_dims() != self.discriminator.input_dims.as_slice() {
                    return Err(config_err(
                        "discriminator.input_dims",
                        format!(
                            "must equal the segment dims {:?}, got {:?}",
                            layout.segment_dims(),
                            self.discriminator.input_dims
                        ),
                    ));
                }
            }
        }
        // backstop for anything the checks above missed
        self.train_config()?
            .resolve_layout(&self.generator, &self.discriminator)
            .map_err(|e| config_err("training", e))?;

        let s = &self.synthesis;
        if s.count == 0 {
            return Err(config_err("synthesis.count", "must be at least 1"));
        }
        if !(s.binarize_threshold > -1.0 && s.binarize_threshold < 1.0) {
            return Err(config_err("synthesis.binarize_threshold", "must lie in (-1, 1)"));
        }
        if let Some(dims) = &s.output_dims {
            lattice_for(&self.generator, dims).map_err(|e| config_err("synthesis.output_dims", e))?;
        }

        let m = &self.metrics;
        if m.kinds.is_empty() {
            return Err(config_err("metrics.kinds", "must name at least one statistic"));
        }
        if let Some(avg) = &m.averaging {
            if avg.is_empty() {
                return Err(config_err("metrics.averaging", "must not be empty"));
            }
            for (i, a) in avg.iter().enumerate() {
                if nd == 2 && *a == Averaging::DirectionalZ {
                    return Err(config_err(&format!("metrics.averaging[{i}]"), "directional_z needs 3D grids"));
                }
            }
        }
        if m.max_lag == Some(0) {
            return Err(config_err("metrics.max_lag", "must be positive"));
        }

        if self.bench.steps <= self.bench.warmup {
            return Err(config_err("bench.steps", "must exceed bench.warmup"));
        }
        Ok(())
    }

    /// Non-fatal advice, such as segments too small for the projective field.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Ok(Some(layout)) = self.segment_layout() {
            if let Ok(w) = projective_field_warnings(&self.generator, layout.segment_dims()) {
                out.extend(w);
            }
        }
        if self.ti_paths.is_empty() {
            out.push("ti_paths is empty; train and bench need at least one training image".into());
        }
        out
    }
}
