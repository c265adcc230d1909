//! Generator and discriminator construction, forward/backward passes and the
//! projective-field calculation.
//!
//! The generator maps a latent lattice `z'` (`lattice_channels × lattice_dims`)
//! through stride-`s` transposed convolutions (each followed by batch
//! normalization and ReLU) and a final stride-1 convolution with tanh. Every
//! transposed convolution multiplies the spatial size by exactly `s`, so the
//! output is `lattice_dims · s^depth`. The body is fully convolutional; only the
//! optional dense head (`latent_mode = fc`) depends on the lattice size.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{dims3, TextureGrid, ValueDomain};
use crate::nn::layers::{Layer, Sequential};
use crate::nn::{Activations, Mode, NetParams, Tape};
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BATCHNORM_EPS: f64 = 1e-3;

/// A per-axis integer given either once for all axes or per axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

impl AxisValue {
    pub fn resolve(&self, ndim: usize) -> Result<Vec<usize>> {
        match self {
            AxisValue::Uniform(v) => Ok(vec![*v; ndim]),
            AxisValue::PerAxis(v) if v.len() == ndim => Ok(v.clone()),
            AxisValue::PerAxis(v) => Err(Error::Spec(format!(
                "expected {ndim} per-axis values, got {}",
                v.len()
            ))),
        }
    }

    fn resolve3(&self, ndim: usize) -> Result<[usize; 3]> {
        let v = self.resolve(ndim)?;
        Ok(match *v.as_slice() {
            [a, b] => [1, a, b],
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Spec(format!("grids are 2D or 3D, got {ndim} axes"))),
        })
    }
}

/// How the latent lattice `z'` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentMode {
    /// `z'` sampled i.i.d. standard normal per lattice cell; no dense head.
    #[default]
    Direct,
    /// `z ∈ R^latent_dim` mapped to `z'` by a dense layer.
    Fc,
}

fn default_latent_dim() -> usize {
    100
}
fn default_stride() -> AxisValue {
    AxisValue::Uniform(2)
}
fn default_true() -> bool {
    true
}
fn default_bn_momentum() -> f64 {
    0.8
}
fn default_dropout() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    pub lattice_dims: Vec<usize>,
    /// Channels of `z'`; defaults to the first filter count.
    #[serde(default)]
    pub lattice_channels: Option<usize>,
    pub filters: Vec<usize>,
    pub kernel: AxisValue,
    #[serde(default = "default_stride")]
    pub stride: AxisValue,
    #[serde(default = "default_true")]
    pub use_batchnorm: bool,
    #[serde(default = "default_bn_momentum")]
    pub batchnorm_momentum: f64,
    #[serde(default)]
    pub latent_mode: LatentMode,
}

impl GeneratorSpec {
    pub fn new(lattice_dims: Vec<usize>, filters: Vec<usize>, kernel: usize) -> Self {
        GeneratorSpec {
            latent_dim: default_latent_dim(),
            lattice_dims,
            lattice_channels: None,
            filters,
            kernel: AxisValue::Uniform(kernel),
            stride: default_stride(),
            use_batchnorm: true,
            batchnorm_momentum: default_bn_momentum(),
            latent_mode: LatentMode::Direct,
        }
    }

    pub fn ndim(&self) -> usize {
        self.lattice_dims.len()
    }

    pub fn channels(&self) -> usize {
        self.lattice_channels
            .unwrap_or_else(|| self.filters.first().copied().unwrap_or(1))
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.ndim();
        if !(2..=3).contains(&nd) {
            return Err(Error::Spec(format!(
                "lattice_dims must have 2 or 3 entries, got {nd}"
            )));
        }
        if self.lattice_dims.contains(&0) {
            return Err(Error::Spec("lattice_dims must be positive".into()));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::Spec("generator needs at least one positive filter count".into()));
        }
        if self.channels() == 0 || self.latent_dim == 0 {
            return Err(Error::Spec("latent_dim and lattice_channels must be positive".into()));
        }
        let k = self.kernel.resolve(nd)?;
        let s = self.stride.resolve(nd)?;
        for a in 0..nd {
            if s[a] == 0 {
                return Err(Error::Spec(format!("axis {a}: stride must be at least 1")));
            }
            if k[a] < s[a] {
                return Err(Error::Spec(format!(
                    "axis {a}: kernel {} smaller than stride {}",
                    k[a], s[a]
                )));
            }
        }
        if !(0.0..1.0).contains(&self.batchnorm_momentum) {
            return Err(Error::Spec("batchnorm_momentum must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Cumulative upsampling factor per axis (`stride^depth`).
    pub fn scale(&self) -> Result<Vec<usize>> {
        Ok(self
            .stride
            .resolve(self.ndim())?
            .into_iter()
            .map(|s| s.pow(self.filters.len() as u32))
            .collect())
    }

    /// Output dims for the given lattice.
    pub fn output_dims_for(&self, lattice: &[usize]) -> Result<Vec<usize>> {
        let scale = self.scale()?;
        Ok(lattice.iter().zip(scale).map(|(l, s)| l * s).collect())
    }

    /// Output dims at the training lattice.
    pub fn output_dims(&self) -> Result<Vec<usize>> {
        self.output_dims_for(&self.lattice_dims)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorSpec {
    pub input_dims: Vec<usize>,
    pub filters: Vec<usize>,
    pub kernel: AxisValue,
    #[serde(default = "default_stride")]
    pub stride: AxisValue,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

impl DiscriminatorSpec {
    pub fn new(input_dims: Vec<usize>, filters: Vec<usize>, kernel: usize) -> Self {
        DiscriminatorSpec {
            input_dims,
            filters,
            kernel: AxisValue::Uniform(kernel),
            stride: default_stride(),
            dropout_rate: default_dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nd = self.input_dims.len();
        if !(2..=3).contains(&nd) || self.input_dims.contains(&0) {
            return Err(Error::Spec(format!(
                "discriminator input_dims must be 2 or 3 positive entries, got {:?}",
                self.input_dims
            )));
        }
        if self.filters.is_empty() || self.filters.contains(&0) {
            return Err(Error::Spec(
                "discriminator needs at least one positive filter count".into(),
            ));
        }
        let k = self.kernel.resolve(nd)?;
        let s = self.stride.resolve(nd)?;
        if k.contains(&0) || s.contains(&0) {
            return Err(Error::Spec("kernel and stride must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Spec("dropout_rate must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Spatial dims of each feature map, input first (ceil division per layer).
    pub fn feature_dims(&self) -> Result<Vec<Vec<usize>>> {
        let s = self.stride.resolve(self.input_dims.len())?;
        let mut dims = vec![self.input_dims.clone()];
        for _ in &self.filters {
            let prev = dims.last().expect("non-empty");
            dims.push(prev.iter().zip(&s).map(|(d, s)| d.div_ceil(*s)).collect());
        }
        Ok(dims)
    }
}

/// Projective field per axis: the output extent influenced by one `z'` cell.
///
/// `pf = 1`, then `pf = (pf − 1)·stride + kernel` for every transposed
/// convolution and `pf += kernel − 1` for the final stride-1 convolution.
pub fn projective_field(spec: &GeneratorSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let k = spec.kernel.resolve(spec.ndim())?;
    let s = spec.stride.resolve(spec.ndim())?;
    Ok((0..spec.ndim())
        .map(|a| {
            let mut pf = 1;
            for _ in &spec.filters {
                pf = (pf - 1) * s[a] + k[a];
            }
            pf + k[a] - 1
        })
        .collect())
}

/// Warnings for segments too small to hold two projective fields.
pub fn projective_field_warnings(spec: &GeneratorSpec, segment_dims: &[usize]) -> Result<Vec<String>> {
    let pf = projective_field(spec)?;
    Ok(segment_dims
        .iter()
        .zip(&pf)
        .enumerate()
        .filter(|(_, (s, p))| **s < 2 * **p)
        .map(|(a, (s, p))| {
            format!("axis {a}: segment size {s} holds fewer than two projective fields (PF = {p})")
        })
        .collect())
}

fn kernel_shape(lead: [usize; 2], k3: [usize; 3], ndim: usize) -> Vec<usize> {
    let mut s = lead.to_vec();
    s.extend_from_slice(&k3[3 - ndim..]);
    s
}

#[derive(Debug, Clone)]
pub struct Generator<T: Scalar> {
    spec: GeneratorSpec,
    head: Option<Sequential>,
    body: Sequential,
    pub params: NetParams<T>,
}

/// Caches of one generator forward pass.
#[derive(Debug)]
pub struct GeneratorTape<T> {
    head: Option<Tape<T>>,
    body: Tape<T>,
}

impl<T: Scalar> Generator<T> {
    /// Builds the network with Gaussian(0, 0.02) weights and zero biases.
    pub fn build<R: Rng + ?Sized>(spec: &GeneratorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let nd = spec.ndim();
        let k3 = spec.kernel.resolve3(nd)?;
        let s3 = spec.stride.resolve3(nd)?;
        let d = spec.channels();
        let lattice3 = dims3(&spec.lattice_dims);
        let mut params = NetParams::new();
        let head = match spec.latent_mode {
            LatentMode::Direct => None,
            LatentMode::Fc => {
                let outputs = d * lattice3.iter().product::<usize>();
                let weight = params.push_gaussian("fc.weight", vec![outputs, spec.latent_dim], INIT_STD, rng);
                let bias = params.push_const("fc.bias", vec![outputs], T::zero(), true);
                Some(Sequential {
                    layers: vec![
                        Layer::Linear {
                            weight,
                            bias,
                            inputs: spec.latent_dim,
                            outputs,
                        },
                        Layer::Reshape {
                            channels: d,
                            spatial: lattice3,
                        },
                    ],
                })
            }
        };
        let mut layers = Vec::new();
        let mut cin = d;
        for (i, &f) in spec.filters.iter().enumerate() {
            let weight = params.push_gaussian(format!("up{i}.weight"), kernel_shape([cin, f], k3, nd), INIT_STD, rng);
            let bias = params.push_const(format!("up{i}.bias"), vec![f], T::zero(), true);
            layers.push(Layer::ConvTranspose {
                weight,
                bias,
                cin,
                cout: f,
                kernel: k3,
                stride: s3,
            });
            if spec.use_batchnorm {
                let gamma = params.push_const(format!("bn{i}.gamma"), vec![f], T::one(), true);
                let beta = params.push_const(format!("bn{i}.beta"), vec![f], T::zero(), true);
                let mean = params.push_const(format!("bn{i}.running_mean"), vec![f], T::zero(), false);
                let var = params.push_const(format!("bn{i}.running_var"), vec![f], T::one(), false);
                layers.push(Layer::BatchNorm {
                    gamma,
                    beta,
                    mean,
                    var,
                    momentum: spec.batchnorm_momentum,
                    eps: BATCHNORM_EPS,
                });
            }
            layers.push(Layer::Relu);
            cin = f;
        }
        let weight = params.push_gaussian("out.weight", kernel_shape([1, cin], k3, nd), INIT_STD, rng);
        let bias = params.push_const("out.bias", vec![1], T::zero(), true);
        layers.push(Layer::Conv {
            weight,
            bias,
            cin,
            cout: 1,
            kernel: k3,
            stride: [1, 1, 1],
        });
        layers.push(Layer::Tanh);
        Ok(Generator {
            spec: spec.clone(),
            head,
            body: Sequential { layers },
            params,
        })
    }

    /// Reattaches trained parameters to a freshly built network.
    pub fn from_params(spec: &GeneratorSpec, params: NetParams<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut g = Self::build(spec, &mut rng)?;
        if !g.params.same_layout(&params) {
            return Err(Error::Shape("parameter tensors do not match the generator spec".into()));
        }
        g.params = params;
        Ok(g)
    }

    pub fn spec(&self) -> &GeneratorSpec {
        &self.spec
    }

    /// Samples network input for a batch at the training lattice.
    pub fn sample_input<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Activations<T> {
        match self.spec.latent_mode {
            LatentMode::Direct => sample_normal(batch, self.spec.channels(), dims3(&self.spec.lattice_dims), rng),
            LatentMode::Fc => sample_normal(batch, self.spec.latent_dim, [1, 1, 1], rng),
        }
    }

    /// Forward pass from [`sample_input`](Self::sample_input)-shaped input.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: Activations<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Activations<T>, GeneratorTape<T>)> {
        let (lattice, head) = match &self.head {
            Some(h) => {
                let (z, tape) = h.forward(&mut self.params, input, mode, rng)?;
                (z, Some(tape))
            }
            None => {
                if input.channels != self.spec.channels() {
                    return Err(Error::Shape(format!(
                        "latent lattice needs {} channels, got {}",
                        self.spec.channels(),
                        input.channels
                    )));
                }
                (input, None)
            }
        };
        let (out, body) = self.body.forward(&mut self.params, lattice, mode, rng)?;
        Ok((out, GeneratorTape { head, body }))
    }

    /// Runs only the convolutional body on an explicit `z'` lattice of any size.
    pub fn forward_lattice<R: Rng + ?Sized>(
        &mut self,
        lattice: Activations<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Activations<T>, GeneratorTape<T>)> {
        if lattice.channels != self.spec.channels() {
            return Err(Error::Shape(format!(
                "latent lattice needs {} channels, got {}",
                self.spec.channels(),
                lattice.channels
            )));
        }
        let (out, body) = self.body.forward(&mut self.params, lattice, mode, rng)?;
        Ok((out, GeneratorTape { head: None, body }))
    }

    pub fn backward(
        &self,
        tape: GeneratorTape<T>,
        grad: Activations<T>,
        mut grads: Option<&mut NetParams<T>>,
    ) -> Activations<T> {
        let g = self.body.backward(&self.params, tape.body, grad, grads.as_deref_mut());
        match (&self.head, tape.head) {
            (Some(h), Some(t)) => h.backward(&self.params, t, g, grads),
            _ => g,
        }
    }

    /// Draws a `z'` lattice of arbitrary size for inference.
    ///
    /// `direct` samples every cell i.i.d. standard normal. `fc` fills the
    /// lattice with independent dense-head draws, one per training-lattice
    /// block, cropped at the far edges.
    pub fn sample_lattice<R: Rng + ?Sized>(
        &mut self,
        batch: usize,
        lattice_dims: &[usize],
        rng: &mut R,
    ) -> Result<Activations<T>> {
        if lattice_dims.len() != self.spec.ndim() || lattice_dims.contains(&0) {
            return Err(Error::Shape(format!(
                "lattice {lattice_dims:?} incompatible with a {}D generator",
                self.spec.ndim()
            )));
        }
        let d = self.spec.channels();
        let big = dims3(lattice_dims);
        match &self.head {
            None => Ok(sample_normal(batch, d, big, rng)),
            Some(head) => {
                let block = dims3(&self.spec.lattice_dims);
                let nb: Vec<usize> = (0..3).map(|a| big[a].div_ceil(block[a])).collect();
                let blocks = nb.iter().product::<usize>();
                let head = head.clone();
                let mut out = Activations::zeros(batch, d, big);
                let big_len: usize = big.iter().product();
                for b in 0..batch {
                    let z = sample_normal(blocks, self.spec.latent_dim, [1, 1, 1], rng);
                    let (tiles, _) = head.forward(&mut self.params, z, Mode::Infer, rng)?;
                    let tile_len = tiles.sample_len() / d;
                    for t in 0..blocks {
                        let bz = t / (nb[1] * nb[2]);
                        let by = (t / nb[2]) % nb[1];
                        let bx = t % nb[2];
                        let tile = tiles.sample(t);
                        for c in 0..d {
                            for z in 0..block[0] {
                                for y in 0..block[1] {
                                    for x in 0..block[2] {
                                        let (gz, gy, gx) = (bz * block[0] + z, by * block[1] + y, bx * block[2] + x);
                                        if gz < big[0] && gy < big[1] && gx < big[2] {
                                            let src = c * tile_len + (z * block[1] + y) * block[2] + x;
                                            let dst = (b * d + c) * big_len + (gz * big[1] + gy) * big[2] + gx;
                                            out.data[dst] = tile[src];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Ok(out)
            }
        }
    }

    /// Inference-mode realizations at the given lattice size.
    pub fn generate<R: Rng + ?Sized>(
        &mut self,
        batch: usize,
        lattice_dims: &[usize],
        rng: &mut R,
    ) -> Result<Vec<TextureGrid<T>>> {
        let z = self.sample_lattice(batch, lattice_dims, rng)?;
        let (out, _) = self.forward_lattice(z, Mode::Infer, rng)?;
        let dims = self.spec.output_dims_for(lattice_dims)?;
        activations_to_grids(&out, &dims)
    }
}

#[derive(Debug, Clone)]
pub struct Discriminator<T: Scalar> {
    spec: DiscriminatorSpec,
    net: Sequential,
    pub params: NetParams<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn build<R: Rng + ?Sized>(spec: &DiscriminatorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let nd = spec.input_dims.len();
        let k3 = spec.kernel.resolve3(nd)?;
        let s3 = spec.stride.resolve3(nd)?;
        let mut params = NetParams::new();
        let mut layers = Vec::new();
        let mut cin = 1;
        for (i, &f) in spec.filters.iter().enumerate() {
            let weight = params.push_gaussian(format!("conv{i}.weight"), kernel_shape([f, cin], k3, nd), INIT_STD, rng);
            let bias = params.push_const(format!("conv{i}.bias"), vec![f], T::zero(), true);
            layers.push(Layer::Conv {
                weight,
                bias,
                cin,
                cout: f,
                kernel: k3,
                stride: s3,
            });
            layers.push(Layer::LeakyRelu(LEAKY_SLOPE));
            layers.push(Layer::Dropout(spec.dropout_rate));
            cin = f;
        }
        let last = spec.feature_dims()?.pop().expect("non-empty");
        let inputs = cin * last.iter().product::<usize>();
        let weight = params.push_gaussian("fc.weight", vec![1, inputs], INIT_STD, rng);
        let bias = params.push_const("fc.bias", vec![1], T::zero(), true);
        layers.push(Layer::Flatten);
        layers.push(Layer::Linear {
            weight,
            bias,
            inputs,
            outputs: 1,
        });
        layers.push(Layer::Sigmoid);
        Ok(Discriminator {
            spec: spec.clone(),
            net: Sequential { layers },
            params,
        })
    }

    pub fn from_params(spec: &DiscriminatorSpec, params: NetParams<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut d = Self::build(spec, &mut rng)?;
        if !d.params.same_layout(&params) {
            return Err(Error::Shape("parameter tensors do not match the discriminator spec".into()));
        }
        d.params = params;
        Ok(d)
    }

    pub fn spec(&self) -> &DiscriminatorSpec {
        &self.spec
    }

    /// Scores a `batch × 1 × input_dims` tensor; returns probabilities and the tape.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        input: Activations<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Vec<T>, Tape<T>)> {
        if input.channels != 1 || input.spatial != dims3(&self.spec.input_dims) {
            return Err(Error::Shape(format!(
                "discriminator expects 1×{:?} inputs, got {}×{:?}",
                self.spec.input_dims, input.channels, input.spatial
            )));
        }
        let (out, tape) = self.net.forward(&mut self.params, input, mode, rng)?;
        Ok((out.data, tape))
    }

    /// Backpropagates `dscore` (one value per sample) to the input.
    pub fn backward(&self, tape: Tape<T>, dscore: Vec<T>, grads: Option<&mut NetParams<T>>) -> Activations<T> {
        let grad = Activations {
            batch: dscore.len(),
            channels: 1,
            spatial: [1, 1, 1],
            data: dscore,
        };
        self.net.backward(&self.params, tape, grad, grads)
    }

    /// Convenience scorer for grids (inference mode).
    pub fn score(&mut self, grids: &[TextureGrid<T>]) -> Result<Vec<T>> {
        let x = grids_to_activations(grids)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, Mode::Infer, &mut rng)?.0)
    }
}

pub(crate) fn sample_normal<T: Scalar, R: Rng + ?Sized>(
    batch: usize,
    channels: usize,
    spatial: [usize; 3],
    rng: &mut R,
) -> Activations<T> {
    let len = batch * channels * spatial.iter().product::<usize>();
    let data = (0..len)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Activations {
        batch,
        channels,
        spatial,
        data,
    }
}

/// Stacks same-sized grids into a `batch × 1 × dims` tensor.
pub fn grids_to_activations<T: Scalar>(grids: &[TextureGrid<T>]) -> Result<Activations<T>> {
    let first = grids
        .first()
        .ok_or_else(|| Error::Shape("empty grid batch".into()))?;
    let mut data = Vec::with_capacity(grids.len() * first.len());
    for g in grids {
        if g.dims() != first.dims() {
            return Err(Error::Shape("grids in a batch must share dims".into()));
        }
        data.extend_from_slice(g.data());
    }
    Activations::from_vec(grids.len(), 1, first.dims3(), data)
}

/// Splits single-channel generator output into model-range grids.
pub fn activations_to_grids<T: Scalar>(a: &Activations<T>, dims: &[usize]) -> Result<Vec<TextureGrid<T>>> {
    if a.channels != 1 || a.spatial != dims3(dims) {
        return Err(Error::Shape(format!(
            "expected 1×{dims:?} outputs, got {}×{:?}",
            a.channels, a.spatial
        )));
    }
    a.data
        .chunks_exact(a.sample_len())
        .map(|c| TextureGrid::new(dims.to_vec(), c.to_vec(), ValueDomain::ModelRange))
        .collect()
}
