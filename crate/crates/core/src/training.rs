//! Adversarial training with whole-image (DCGAN) or segment-assembled (SAGAN)
//! losses.
//!
//! One step ("epoch") is one discriminator update followed by one generator
//! update. With `N` scored samples per side (`batch_size` images for DCGAN,
//! `batch_size · n` segments for SAGAN):
//!
//! ```text
//! J_D = −1/(2N) Σ [ log D(real_i) + log(1 − D(fake_i)) ]
//! J_G = −1/(2N) Σ log D(fake_i) = −1/(2N) log Π D(fake_i)
//! ```
//!
//! Probabilities are clamped to `[1e-7, 1 − 1e-7]` inside the logarithms; a
//! clamped term contributes no gradient.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::grids::{dims3, to_model_range, TextureGrid, ValueDomain};
use crate::nets::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use crate::nn::{Activations, Mode, NetParams};
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;
use crate::segmentation::{add_box, crop_into, sample_origins, SegmentLayout, TiSampling};

pub const PROB_CLAMP: f64 = 1e-7;
pub const MAX_EPOCHS: u64 = 100_000;
pub const LOSS_CSV_HEADER: &str = "step,j_d,j_g,d_real_mean,d_fake_mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GanMode {
    Dcgan,
    Sagan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: GanMode,
    pub batch_size: usize,
    /// Number of paired D+G update steps.
    pub epochs: u64,
    pub adam: AdamConfig,
    pub rng_seed: u64,
    pub checkpoint_every: u64,
    /// Segment layout over the generator output (SAGAN only).
    pub layout: Option<SegmentLayout>,
    pub ti_sampling: TiSampling,
}

impl TrainConfig {
    pub fn new(mode: GanMode, batch_size: usize, epochs: u64, rng_seed: u64) -> Self {
        TrainConfig {
            mode,
            batch_size,
            epochs,
            adam: AdamConfig::default(),
            rng_seed,
            checkpoint_every: epochs.max(1),
            layout: None,
            ti_sampling: TiSampling::Random,
        }
    }

    pub fn with_layout(mut self, layout: SegmentLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    /// Checks the config against both network specs and returns the layout
    /// the discriminator sees (a single whole-image segment for DCGAN).
    pub fn resolve_layout(&self, g: &GeneratorSpec, d: &DiscriminatorSpec) -> Result<SegmentLayout> {
        if !(4..=64).contains(&self.batch_size) {
            return Err(Error::Invalid(format!(
                "batch_size must lie in [4, 64], got {}",
                self.batch_size
            )));
        }
        if self.epochs > MAX_EPOCHS {
            return Err(Error::Invalid(format!("epochs must be at most {MAX_EPOCHS}")));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Invalid("checkpoint_every must be positive".into()));
        }
        let out = g.output_dims()?;
        match self.mode {
            GanMode::Dcgan => {
                if d.input_dims != out {
                    return Err(Error::Invalid(format!(
                        "DCGAN needs generator output {out:?} equal to discriminator input {:?}",
                        d.input_dims
                    )));
                }
                Ok(SegmentLayout::whole(&out))
            }
            GanMode::Sagan => {
                let layout = self
                    .layout
                    .clone()
                    .ok_or_else(|| Error::Invalid("SAGAN mode requires a segment layout".into()))?;
                if layout.output_dims() != out.as_slice() {
                    return Err(Error::Invalid(format!(
                        "layout output {:?} differs from generator output {out:?}",
                        layout.output_dims()
                    )));
                }
                if layout.segment_dims() != d.input_dims.as_slice() {
                    return Err(Error::Invalid(format!(
                        "segment dims {:?} differ from discriminator input {:?}",
                        layout.segment_dims(),
                        d.input_dims
                    )));
                }
                Ok(layout)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub step: u64,
    pub j_d: f64,
    pub j_g: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
}

impl LossReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.step, self.j_d, self.j_g, self.d_real_mean, self.d_fake_mean
        )
    }
}

fn clamped_log(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

fn unclamped(p: f64) -> bool {
    (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p)
}

/// Discriminator loss over `n` real and `n` fake scores.
pub fn d_loss<T: Scalar>(real: &[T], fake: &[T]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Invalid("d_loss needs non-empty score lists".into()));
    }
    if real.len() != fake.len() {
        return Err(Error::Invalid(format!(
            "d_loss needs equal-length score lists, got {} and {}",
            real.len(),
            fake.len()
        )));
    }
    let n = real.len() as f64;
    let s: f64 = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| clamped_log(r.to_f64_lossy()) + clamped_log(1.0 - f.to_f64_lossy()))
        .sum();
    Ok(-s / (2.0 * n))
}

/// Generator loss: `−1/(2n) Σ log D(fake_i)`.
pub fn g_loss<T: Scalar>(fake: &[T]) -> Result<f64> {
    if fake.is_empty() {
        return Err(Error::Invalid("g_loss needs a non-empty score list".into()));
    }
    let n = fake.len() as f64;
    let s: f64 = fake.iter().map(|&f| clamped_log(f.to_f64_lossy())).sum();
    Ok(-s / (2.0 * n))
}

/// `∂J_D/∂real_i`, `∂J_D/∂fake_i`.
pub fn d_loss_grad<T: Scalar>(real: &[T], fake: &[T]) -> (Vec<T>, Vec<T>) {
    let scale = 1.0 / (2.0 * real.len() as f64);
    let dr = real
        .iter()
        .map(|&r| {
            let r = r.to_f64_lossy();
            T::lit(if unclamped(r) { -scale / r } else { 0.0 })
        })
        .collect();
    let df = fake
        .iter()
        .map(|&f| {
            let f = f.to_f64_lossy();
            T::lit(if unclamped(f) { scale / (1.0 - f) } else { 0.0 })
        })
        .collect();
    (dr, df)
}

/// `∂J_G/∂fake_i`.
pub fn g_loss_grad<T: Scalar>(fake: &[T]) -> Vec<T> {
    let scale = 1.0 / (2.0 * fake.len() as f64);
    fake.iter()
        .map(|&f| {
            let f = f.to_f64_lossy();
            T::lit(if unclamped(f) { -scale / f } else { 0.0 })
        })
        .collect()
}

/// Cuts every image of a `B × 1 × out` batch into the layout's segments,
/// giving `B·n` segments ordered image-major.
pub fn segment_batch<T: Scalar>(images: &Activations<T>, layout: &SegmentLayout) -> Activations<T> {
    let seg3 = dims3(layout.segment_dims());
    let origins: Vec<[usize; 3]> = layout.origins().iter().map(|o| pad_origin(o)).collect();
    let n = origins.len();
    let mut data = Vec::with_capacity(images.batch * n * seg3.iter().product::<usize>());
    for b in 0..images.batch {
        let img = images.sample(b);
        for o in &origins {
            crop_into(img, images.spatial, *o, seg3, &mut data);
        }
    }
    Activations {
        batch: images.batch * n,
        channels: 1,
        spatial: seg3,
        data,
    }
}

/// Adjoint of [`segment_batch`]: overlapping gradients add up.
pub fn unsegment_grad<T: Scalar>(
    grads: &Activations<T>,
    layout: &SegmentLayout,
    batch: usize,
) -> Activations<T> {
    let out3 = dims3(layout.output_dims());
    let seg3 = dims3(layout.segment_dims());
    let origins: Vec<[usize; 3]> = layout.origins().iter().map(|o| pad_origin(o)).collect();
    let mut out = Activations::zeros(batch, 1, out3);
    let img_len: usize = out3.iter().product();
    for b in 0..batch {
        let dst = &mut out.data[b * img_len..(b + 1) * img_len];
        for (k, o) in origins.iter().enumerate() {
            add_box(dst, out3, *o, seg3, grads.sample(b * origins.len() + k));
        }
    }
    out
}

fn pad_origin(o: &[usize]) -> [usize; 3] {
    match *o {
        [a, b] => [0, a, b],
        [a, b, c] => [a, b, c],
        _ => unreachable!("layouts are 2D or 3D"),
    }
}

/// Independent RNG stream for one training step.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn init_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - stream);
    rng
}

fn mean<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy()).sum::<f64>() / v.len() as f64
}

/// Gradients of one step, exposed for gradient checking.
#[derive(Debug, Clone)]
pub struct StepGradients<T> {
    pub j_d: f64,
    pub j_g: f64,
    pub d_grads: NetParams<T>,
    pub g_grads: NetParams<T>,
}

/// Model-range training images plus the crop policy.
pub(crate) fn real_batch<T: Scalar, R: Rng + ?Sized>(
    tis: &[TextureGrid<T>],
    layout: &SegmentLayout,
    count: usize,
    sampling: TiSampling,
    rng: &mut R,
) -> Result<Activations<T>> {
    let seg = layout.segment_dims();
    let strides = layout.strides();
    let picks = sample_origins(tis, seg, count, sampling, Some(&strides), rng)?;
    let seg3 = dims3(seg);
    let mut data = Vec::with_capacity(count * seg3.iter().product::<usize>());
    for (ti, origin) in picks {
        crop_into(tis[ti].data(), tis[ti].dims3(), pad_origin(&origin), seg3, &mut data);
    }
    Activations::from_vec(count, 1, seg3, data)
}

/// Discriminator half of a step: scores, loss and parameter gradients.
fn discriminator_pass<T: Scalar, R: Rng + ?Sized>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    tis: &[TextureGrid<T>],
    layout: &SegmentLayout,
    batch: usize,
    sampling: TiSampling,
    d_grads: &mut NetParams<T>,
    rng: &mut R,
) -> Result<(f64, f64, f64)> {
    let real = real_batch(tis, layout, batch * layout.n(), sampling, rng)?;
    let z = g.sample_input(batch, rng);
    let (fake_images, _) = g.forward(z, Mode::Train, rng)?;
    let fake = segment_batch(&fake_images, layout);
    let (p_real, tape_real) = d.forward(real, Mode::Train, rng)?;
    let (p_fake, tape_fake) = d.forward(fake, Mode::Train, rng)?;
    let j_d = d_loss(&p_real, &p_fake)?;
    let (dr, df) = d_loss_grad(&p_real, &p_fake);
    d_grads.fill_zero();
    d.backward(tape_real, dr, Some(d_grads));
    d.backward(tape_fake, df, Some(d_grads));
    Ok((j_d, mean(&p_real), mean(&p_fake)))
}

/// Generator half of a step on fresh latent samples.
fn generator_pass<T: Scalar, R: Rng + ?Sized>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    layout: &SegmentLayout,
    batch: usize,
    g_grads: &mut NetParams<T>,
    rng: &mut R,
) -> Result<f64> {
    let z = g.sample_input(batch, rng);
    let (images, g_tape) = g.forward(z, Mode::Train, rng)?;
    let segs = segment_batch(&images, layout);
    let (p, d_tape) = d.forward(segs, Mode::Train, rng)?;
    let j_g = g_loss(&p)?;
    let dseg = d.backward(d_tape, g_loss_grad(&p), None);
    let dimg = unsegment_grad(&dseg, layout, batch);
    g_grads.fill_zero();
    g.backward(g_tape, dimg, Some(g_grads));
    Ok(j_g)
}

/// Gradients of both losses at the current parameters without updating them.
///
/// Uses the same RNG consumption as [`Trainer::step`], so the D pass and G
/// pass see identical crops, latents and dropout masks for a given `rng`.
pub fn loss_gradients<T: Scalar, R: Rng + ?Sized>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    tis: &[TextureGrid<T>],
    layout: &SegmentLayout,
    batch: usize,
    rng: &mut R,
) -> Result<StepGradients<T>> {
    let tis = model_range_tis(tis)?;
    let mut d_grads = d.params.zeros_like();
    let mut g_grads = g.params.zeros_like();
    let (j_d, _, _) = discriminator_pass(g, d, &tis, layout, batch, TiSampling::Random, &mut d_grads, rng)?;
    let j_g = generator_pass(g, d, layout, batch, &mut g_grads, rng)?;
    Ok(StepGradients {
        j_d,
        j_g,
        d_grads,
        g_grads,
    })
}

fn model_range_tis<T: Scalar>(tis: &[TextureGrid<T>]) -> Result<Vec<TextureGrid<T>>> {
    tis.iter()
        .map(|t| match t.domain() {
            ValueDomain::Binary01 => to_model_range(t),
            ValueDomain::ModelRange => Ok(t.clone()),
        })
        .collect()
}

/// Mutable training state: both networks, their optimizers and the step count.
#[derive(Debug, Clone)]
pub struct Trainer<T: Scalar> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub g_adam: Adam<T>,
    pub d_adam: Adam<T>,
    pub config: TrainConfig,
    layout: SegmentLayout,
    tis: Vec<TextureGrid<T>>,
    step: u64,
    g_grads: NetParams<T>,
    d_grads: NetParams<T>,
}

impl<T: Scalar> Trainer<T> {
    /// Fresh networks initialized from `config.rng_seed`.
    pub fn new(
        tis: &[TextureGrid<T>],
        g_spec: &GeneratorSpec,
        d_spec: &DiscriminatorSpec,
        config: TrainConfig,
    ) -> Result<Self> {
        let generator = Generator::build(g_spec, &mut init_rng(config.rng_seed, 0))?;
        let discriminator = Discriminator::build(d_spec, &mut init_rng(config.rng_seed, 1))?;
        let g_adam = Adam::new(config.adam, &generator.params);
        let d_adam = Adam::new(config.adam, &discriminator.params);
        Self::assemble(tis, generator, discriminator, g_adam, d_adam, config, 0)
    }

    /// Continues a run from a checkpoint; the step count and optimizer
    /// moments are restored so the continuation matches an uninterrupted run.
    pub fn resume(tis: &[TextureGrid<T>], ckpt: Checkpoint<T>, config: TrainConfig) -> Result<Self> {
        let generator = Generator::from_params(&ckpt.meta.generator, ckpt.generator)?;
        let discriminator = Discriminator::from_params(&ckpt.meta.discriminator, ckpt.discriminator)?;
        let mut g_adam = ckpt.generator_adam;
        let mut d_adam = ckpt.discriminator_adam;
        g_adam.config = config.adam;
        d_adam.config = config.adam;
        Self::assemble(tis, generator, discriminator, g_adam, d_adam, config, ckpt.meta.step)
    }

    fn assemble(
        tis: &[TextureGrid<T>],
        generator: Generator<T>,
        discriminator: Discriminator<T>,
        g_adam: Adam<T>,
        d_adam: Adam<T>,
        config: TrainConfig,
        step: u64,
    ) -> Result<Self> {
        if tis.is_empty() {
            return Err(Error::Invalid("at least one training image is required".into()));
        }
        let layout = config.resolve_layout(generator.spec(), discriminator.spec())?;
        let tis = model_range_tis(tis)?;
        for (i, ti) in tis.iter().enumerate() {
            if ti.ndim() != layout.segment_dims().len()
                || ti.dims().iter().zip(layout.segment_dims()).any(|(t, s)| s > t)
            {
                return Err(Error::Invalid(format!(
                    "training image {i} ({:?}) is smaller than the discriminator input {:?}",
                    ti.dims(),
                    layout.segment_dims()
                )));
            }
        }
        let g_grads = generator.params.zeros_like();
        let d_grads = discriminator.params.zeros_like();
        Ok(Trainer {
            generator,
            discriminator,
            g_adam,
            d_adam,
            config,
            layout,
            tis,
            step,
            g_grads,
            d_grads,
        })
    }

    pub fn layout(&self) -> &SegmentLayout {
        &self.layout
    }

    /// Completed steps.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One discriminator update then one generator update.
    ///
    /// On a non-finite loss the networks are left exactly as before the call.
    pub fn step(&mut self) -> Result<LossReport> {
        let step = self.step + 1;
        let mut rng = step_rng(self.config.rng_seed, step);
        train_step(
            &mut self.generator,
            &mut self.discriminator,
            &mut self.g_adam,
            &mut self.d_adam,
            &mut self.g_grads,
            &mut self.d_grads,
            &self.tis,
            &self.layout,
            &self.config,
            step,
            &mut rng,
        )
        .inspect(|_| self.step = step)
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            meta: CheckpointMeta {
                generator: self.generator.spec().clone(),
                discriminator: self.discriminator.spec().clone(),
                step: self.step,
                adam: self.config.adam.into(),
            },
            generator: self.generator.params.clone(),
            discriminator: self.discriminator.params.clone(),
            generator_adam: self.g_adam.clone(),
            discriminator_adam: self.d_adam.clone(),
        }
    }
}

/// One paired update. `tis` must already be in model range.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    g: &mut Generator<T>,
    d: &mut Discriminator<T>,
    g_adam: &mut Adam<T>,
    d_adam: &mut Adam<T>,
    g_grads: &mut NetParams<T>,
    d_grads: &mut NetParams<T>,
    tis: &[TextureGrid<T>],
    layout: &SegmentLayout,
    config: &TrainConfig,
    step: u64,
    rng: &mut R,
) -> Result<LossReport> {
    let batch = config.batch_size;
    let g_before = g.params.clone();
    let (j_d, d_real_mean, d_fake_mean) =
        discriminator_pass(g, d, tis, layout, batch, config.ti_sampling, d_grads, rng)?;
    if !j_d.is_finite() || !d_grads.all_finite() {
        g.params = g_before;
        return Err(Error::Divergence {
            step,
            message: format!("discriminator loss {j_d}"),
        });
    }
    let d_before = (d.params.clone(), d_adam.clone());
    d_adam.step(&mut d.params, d_grads);
    let j_g = generator_pass(g, d, layout, batch, g_grads, rng)?;
    if !j_g.is_finite() || !g_grads.all_finite() || !d_adam.moments_finite() {
        g.params = g_before;
        (d.params, *d_adam) = d_before;
        return Err(Error::Divergence {
            step,
            message: format!("generator loss {j_g}"),
        });
    }
    g_adam.step(&mut g.params, g_grads);
    Ok(LossReport {
        step,
        j_d,
        j_g,
        d_real_mean,
        d_fake_mean,
    })
}

/// Result of [`train`].
#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub trainer: Trainer<T>,
    pub history: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt_{step:06}.sgck")
}

pub fn write_loss_csv(path: impl AsRef<Path>, history: &[LossReport]) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::with_capacity(64 * (history.len() + 1));
    s.push_str(LOSS_CSV_HEADER);
    s.push('\n');
    for r in history {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Runs `config.epochs` steps from `trainer`'s current state.
///
/// With an output directory, checkpoints land in `out/checkpoints/` every
/// `checkpoint_every` steps (and after the last step) and the loss history in
/// `out/loss_history.csv`. On divergence the last good state is checkpointed
/// before the error is returned.
pub fn run_training<T: Scalar>(
    mut trainer: Trainer<T>,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&LossReport),
) -> Result<TrainOutcome<T>> {
    let ckpt_dir = out_dir.map(|d| d.join("checkpoints"));
    if let Some(dir) = &ckpt_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut history = Vec::new();
    let mut checkpoints = Vec::new();
    let target = trainer.step_count() + trainer.config.epochs;
    let every = trainer.config.checkpoint_every;
    while trainer.step_count() < target {
        match trainer.step() {
            Ok(report) => {
                on_step(&report);
                history.push(report);
            }
            Err(e) => {
                if let Some(dir) = &ckpt_dir {
                    let path = dir.join(checkpoint_name(trainer.step_count()));
                    trainer.checkpoint().save(&path)?;
                    write_loss_csv(dir.parent().expect("checkpoint dir has a parent").join("loss_history.csv"), &history)?;
                }
                return Err(e);
            }
        }
        let s = trainer.step_count();
        if let Some(dir) = &ckpt_dir {
            if s.is_multiple_of(every) || s == target {
                let path = dir.join(checkpoint_name(s));
                trainer.checkpoint().save(&path)?;
                checkpoints.push(path);
            }
        }
    }
    if let Some(dir) = out_dir {
        write_loss_csv(dir.join("loss_history.csv"), &history)?;
    }
    Ok(TrainOutcome {
        trainer,
        history,
        checkpoints,
    })
}

/// Builds fresh networks and trains them.
pub fn train<T: Scalar>(
    tis: &[TextureGrid<T>],
    g_spec: &GeneratorSpec,
    d_spec: &DiscriminatorSpec,
    config: TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    let trainer = Trainer::new(tis, g_spec, d_spec, config)?;
    run_training(trainer, out_dir, |_| {})
}
