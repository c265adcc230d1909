//! Sequential layer stack with hand-written backward passes.

use rand::Rng;

use super::geometry::ConvGeometry;
use super::params::NetParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A batch of `channels × spatial` feature maps, row-major per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations<T> {
    pub batch: usize,
    pub channels: usize,
    pub spatial: [usize; 3],
    pub data: Vec<T>,
}

impl<T: Scalar> Activations<T> {
    pub fn zeros(batch: usize, channels: usize, spatial: [usize; 3]) -> Self {
        let len = batch * channels * spatial.iter().product::<usize>();
        Activations {
            batch,
            channels,
            spatial,
            data: vec![T::zero(); len],
        }
    }

    pub fn from_vec(batch: usize, channels: usize, spatial: [usize; 3], data: Vec<T>) -> Result<Self> {
        let len = batch * channels * spatial.iter().product::<usize>();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "activation buffer holds {} values, shape {batch}×{channels}×{spatial:?} needs {len}",
                data.len()
            )));
        }
        Ok(Activations {
            batch,
            channels,
            spatial,
            data,
        })
    }

    pub fn spatial_len(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.spatial_len()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, active dropout, running-stat updates.
    Train,
    /// Running statistics, no dropout; deterministic.
    Infer,
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Linear {
        weight: usize,
        bias: usize,
        inputs: usize,
        outputs: usize,
    },
    /// Features to `channels × spatial`.
    Reshape { channels: usize, spatial: [usize; 3] },
    Flatten,
    Conv {
        weight: usize,
        bias: usize,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    ConvTranspose {
        weight: usize,
        bias: usize,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
    },
    BatchNorm {
        gamma: usize,
        beta: usize,
        mean: usize,
        var: usize,
        momentum: f64,
        eps: f64,
    },
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
    Dropout(f64),
}

#[derive(Debug)]
pub(crate) enum Cache<T> {
    Input(Activations<T>),
    Shape { channels: usize, spatial: [usize; 3] },
    BatchNorm { xhat: Vec<T>, inv_std: Vec<T> },
    BatchNormInfer { scale: Vec<T> },
    Output(Vec<T>),
    Mask(Vec<T>),
    Identity,
}

/// Per-layer caches recorded by a forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn forward<T: Scalar, R: Rng + ?Sized>(
        &self,
        params: &mut NetParams<T>,
        mut x: Activations<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Activations<T>, Tape<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = forward_layer(layer, params, x, mode, rng)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Backpropagates `grad`; parameter gradients accumulate into `grads` when given.
    pub fn backward<T: Scalar>(
        &self,
        params: &NetParams<T>,
        tape: Tape<T>,
        mut grad: Activations<T>,
        mut grads: Option<&mut NetParams<T>>,
    ) -> Activations<T> {
        for (layer, cache) in self.layers.iter().zip(tape.caches).rev() {
            grad = backward_layer(layer, params, cache, grad, grads.as_deref_mut());
        }
        grad
    }
}

fn forward_layer<T: Scalar, R: Rng + ?Sized>(
    layer: &Layer,
    params: &mut NetParams<T>,
    x: Activations<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<(Activations<T>, Cache<T>)> {
    Ok(match *layer {
        Layer::Linear {
            weight,
            bias,
            inputs,
            outputs,
        } => {
            if x.sample_len() != inputs {
                return Err(Error::Shape(format!(
                    "dense layer expects {inputs} features, got {}",
                    x.sample_len()
                )));
            }
            let b = x.batch;
            let mut y = vec![T::zero(); b * outputs];
            let bias_v = params.data(bias);
            for row in y.chunks_exact_mut(outputs) {
                row.copy_from_slice(bias_v);
            }
            T::gemm(b, inputs, outputs, T::one(), &x.data, false, params.data(weight), true, T::one(), &mut y);
            (
                Activations::from_vec(b, outputs, [1, 1, 1], y)?,
                Cache::Input(x),
            )
        }
        Layer::Reshape { channels, spatial } => {
            let want = channels * spatial.iter().product::<usize>();
            if x.sample_len() != want {
                return Err(Error::Shape(format!(
                    "cannot reshape {} features into {channels}×{spatial:?}",
                    x.sample_len()
                )));
            }
            let cache = Cache::Shape {
                channels: x.channels,
                spatial: x.spatial,
            };
            (Activations::from_vec(x.batch, channels, spatial, x.data)?, cache)
        }
        Layer::Flatten => {
            let cache = Cache::Shape {
                channels: x.channels,
                spatial: x.spatial,
            };
            let f = x.sample_len();
            (Activations::from_vec(x.batch, f, [1, 1, 1], x.data)?, cache)
        }
        Layer::Conv {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
        } => {
            if x.channels != cin {
                return Err(Error::Shape(format!(
                    "convolution expects {cin} channels, got {}",
                    x.channels
                )));
            }
            let g = ConvGeometry::downsample(x.spatial, kernel, stride);
            let (p, kk) = (g.small_len(), cin * g.kernel_len());
            let mut y = Activations::zeros(x.batch, cout, g.small);
            let mut cols = vec![T::zero(); kk * p];
            let w = params.data(weight);
            let bv = params.data(bias);
            for (xs, ys) in x.data.chunks_exact(x.sample_len()).zip(y.data.chunks_exact_mut(cout * p)) {
                g.im2col(xs, cin, &mut cols);
                for (c, yc) in ys.chunks_exact_mut(p).enumerate() {
                    yc.fill(bv[c]);
                }
                T::gemm(cout, kk, p, T::one(), w, false, &cols, false, T::one(), ys);
            }
            (y, Cache::Input(x))
        }
        Layer::ConvTranspose {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
        } => {
            if x.channels != cin {
                return Err(Error::Shape(format!(
                    "transposed convolution expects {cin} channels, got {}",
                    x.channels
                )));
            }
            let g = ConvGeometry::upsample(x.spatial, kernel, stride);
            let (p, kk) = (g.small_len(), cout * g.kernel_len());
            let big = g.big_len();
            let mut y = Activations::zeros(x.batch, cout, g.big);
            let mut cols = vec![T::zero(); kk * p];
            let w = params.data(weight);
            let bv = params.data(bias);
            for (xs, ys) in x.data.chunks_exact(x.sample_len()).zip(y.data.chunks_exact_mut(cout * big)) {
                T::gemm(kk, cin, p, T::one(), w, true, xs, false, T::zero(), &mut cols);
                for (c, yc) in ys.chunks_exact_mut(big).enumerate() {
                    yc.fill(bv[c]);
                }
                g.col2im(&cols, cout, ys);
            }
            (y, Cache::Input(x))
        }
        Layer::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            momentum,
            eps,
        } => {
            let c_n = x.channels;
            let sp = x.spatial_len();
            let m = (x.batch * sp) as f64;
            let mut y = x;
            match mode {
                Mode::Train => {
                    let mut xhat = vec![T::zero(); y.data.len()];
                    let mut inv_std = vec![T::zero(); c_n];
                    for c in 0..c_n {
                        let mut sum = 0.0;
                        for b in 0..y.batch {
                            let off = (b * c_n + c) * sp;
                            sum += y.data[off..off + sp].iter().map(|v| v.to_f64_lossy()).sum::<f64>();
                        }
                        let mu = sum / m;
                        let mut sq = 0.0;
                        for b in 0..y.batch {
                            let off = (b * c_n + c) * sp;
                            sq += y.data[off..off + sp]
                                .iter()
                                .map(|v| {
                                    let d = v.to_f64_lossy() - mu;
                                    d * d
                                })
                                .sum::<f64>();
                        }
                        let var_b = sq / m;
                        let istd = 1.0 / (var_b + eps).sqrt();
                        inv_std[c] = T::lit(istd);
                        let (mu_t, istd_t) = (T::lit(mu), T::lit(istd));
                        let (gm, bt) = (params.data(gamma)[c], params.data(beta)[c]);
                        for b in 0..y.batch {
                            let off = (b * c_n + c) * sp;
                            for i in off..off + sp {
                                let h = (y.data[i] - mu_t) * istd_t;
                                xhat[i] = h;
                                y.data[i] = gm * h + bt;
                            }
                        }
                        let mom = T::lit(momentum);
                        let rm = &mut params.data_mut(mean)[c];
                        *rm = mom * *rm + (T::one() - mom) * mu_t;
                        let rv = &mut params.data_mut(var)[c];
                        *rv = mom * *rv + (T::one() - mom) * T::lit(var_b);
                    }
                    (y, Cache::BatchNorm { xhat, inv_std })
                }
                Mode::Infer => {
                    let mut scale = vec![T::zero(); c_n];
                    for c in 0..c_n {
                        let rv = params.data(var)[c];
                        let s = params.data(gamma)[c] / (rv + T::lit(eps)).sqrt();
                        let shift = params.data(beta)[c] - s * params.data(mean)[c];
                        scale[c] = s;
                        for b in 0..y.batch {
                            let off = (b * c_n + c) * sp;
                            for v in &mut y.data[off..off + sp] {
                                *v = s * *v + shift;
                            }
                        }
                    }
                    (y, Cache::BatchNormInfer { scale })
                }
            }
        }
        Layer::Relu => {
            let mut y = x;
            for v in &mut y.data {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
            let out = y.data.clone();
            (y, Cache::Output(out))
        }
        Layer::LeakyRelu(alpha) => {
            let a = T::lit(alpha);
            let mut y = x;
            let mask: Vec<T> = y
                .data
                .iter_mut()
                .map(|v| {
                    if *v < T::zero() {
                        *v *= a;
                        a
                    } else {
                        T::one()
                    }
                })
                .collect();
            (y, Cache::Mask(mask))
        }
        Layer::Tanh => {
            let mut y = x;
            for v in &mut y.data {
                *v = v.tanh();
            }
            let out = y.data.clone();
            (y, Cache::Output(out))
        }
        Layer::Sigmoid => {
            let mut y = x;
            for v in &mut y.data {
                *v = sigmoid(*v);
            }
            let out = y.data.clone();
            (y, Cache::Output(out))
        }
        Layer::Dropout(rate) => match mode {
            Mode::Train if rate > 0.0 => {
                let keep = T::lit(1.0 / (1.0 - rate));
                let mut y = x;
                let mask: Vec<T> = (0..y.data.len())
                    .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
                    .collect();
                for (v, &m) in y.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (y, Cache::Mask(mask))
            }
            _ => (x, Cache::Identity),
        },
    })
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn backward_layer<T: Scalar>(
    layer: &Layer,
    params: &NetParams<T>,
    cache: Cache<T>,
    dy: Activations<T>,
    grads: Option<&mut NetParams<T>>,
) -> Activations<T> {
    match (layer, cache) {
        (
            &Layer::Linear {
                weight,
                bias,
                inputs,
                outputs,
            },
            Cache::Input(x),
        ) => {
            let b = dy.batch;
            if let Some(g) = grads {
                T::gemm(outputs, b, inputs, T::one(), &dy.data, true, &x.data, false, T::one(), g.data_mut(weight));
                let gb = g.data_mut(bias);
                for row in dy.data.chunks_exact(outputs) {
                    add_into(gb, row);
                }
            }
            let mut dx = vec![T::zero(); b * inputs];
            T::gemm(b, outputs, inputs, T::one(), &dy.data, false, params.data(weight), false, T::zero(), &mut dx);
            Activations {
                batch: b,
                channels: x.channels,
                spatial: x.spatial,
                data: dx,
            }
        }
        (Layer::Reshape { .. } | Layer::Flatten, Cache::Shape { channels, spatial }) => Activations {
            batch: dy.batch,
            channels,
            spatial,
            data: dy.data,
        },
        (
            &Layer::Conv {
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
            },
            Cache::Input(x),
        ) => {
            let g = ConvGeometry::downsample(x.spatial, kernel, stride);
            let (p, kk) = (g.small_len(), cin * g.kernel_len());
            let mut dx = Activations::zeros(x.batch, cin, x.spatial);
            let mut cols = vec![T::zero(); kk * p];
            let mut dcols = vec![T::zero(); kk * p];
            let w = params.data(weight);
            let mut grads = grads;
            let in_len = x.sample_len();
            for ((xs, dys), dxs) in x
                .data
                .chunks_exact(in_len)
                .zip(dy.data.chunks_exact(cout * p))
                .zip(dx.data.chunks_exact_mut(in_len))
            {
                if let Some(gr) = grads.as_deref_mut() {
                    g.im2col(xs, cin, &mut cols);
                    T::gemm(cout, p, kk, T::one(), dys, false, &cols, true, T::one(), gr.data_mut(weight));
                    let gb = gr.data_mut(bias);
                    for (c, dyc) in dys.chunks_exact(p).enumerate() {
                        gb[c] += dyc.iter().copied().sum();
                    }
                }
                T::gemm(kk, cout, p, T::one(), w, true, dys, false, T::zero(), &mut dcols);
                g.col2im(&dcols, cin, dxs);
            }
            dx
        }
        (
            &Layer::ConvTranspose {
                weight,
                bias,
                cin,
                cout,
                kernel,
                stride,
            },
            Cache::Input(x),
        ) => {
            let g = ConvGeometry::upsample(x.spatial, kernel, stride);
            let (p, kk) = (g.small_len(), cout * g.kernel_len());
            let big = g.big_len();
            let mut dx = Activations::zeros(x.batch, cin, x.spatial);
            let mut dcols = vec![T::zero(); kk * p];
            let w = params.data(weight);
            let mut grads = grads;
            let in_len = x.sample_len();
            for ((xs, dys), dxs) in x
                .data
                .chunks_exact(in_len)
                .zip(dy.data.chunks_exact(cout * big))
                .zip(dx.data.chunks_exact_mut(in_len))
            {
                g.im2col(dys, cout, &mut dcols);
                if let Some(gr) = grads.as_deref_mut() {
                    T::gemm(cin, p, kk, T::one(), xs, false, &dcols, true, T::one(), gr.data_mut(weight));
                    let gb = gr.data_mut(bias);
                    for (c, dyc) in dys.chunks_exact(big).enumerate() {
                        gb[c] += dyc.iter().copied().sum();
                    }
                }
                T::gemm(cin, kk, p, T::one(), w, false, &dcols, false, T::zero(), dxs);
            }
            dx
        }
        (&Layer::BatchNorm { gamma, beta, .. }, Cache::BatchNorm { xhat, inv_std }) => {
            let c_n = dy.channels;
            let sp = dy.spatial_len();
            let m = T::lit((dy.batch * sp) as f64);
            let mut dx = dy.clone();
            let mut grads = grads;
            for c in 0..c_n {
                let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
                for b in 0..dy.batch {
                    let off = (b * c_n + c) * sp;
                    for i in off..off + sp {
                        sum_dy += dy.data[i];
                        sum_dy_xhat += dy.data[i] * xhat[i];
                    }
                }
                if let Some(gr) = grads.as_deref_mut() {
                    gr.data_mut(gamma)[c] += sum_dy_xhat;
                    gr.data_mut(beta)[c] += sum_dy;
                }
                let k = params.data(gamma)[c] * inv_std[c] / m;
                for b in 0..dy.batch {
                    let off = (b * c_n + c) * sp;
                    for i in off..off + sp {
                        dx.data[i] = k * (m * dy.data[i] - sum_dy - xhat[i] * sum_dy_xhat);
                    }
                }
            }
            dx
        }
        (&Layer::BatchNorm { .. }, Cache::BatchNormInfer { scale }) => {
            let c_n = dy.channels;
            let sp = dy.spatial_len();
            let mut dx = dy;
            for b in 0..dx.batch {
                for (c, &s) in scale.iter().enumerate() {
                    let off = (b * c_n + c) * sp;
                    for v in &mut dx.data[off..off + sp] {
                        *v *= s;
                    }
                }
            }
            dx
        }
        (Layer::Relu, Cache::Output(out)) => {
            let mut dx = dy;
            for (d, &o) in dx.data.iter_mut().zip(&out) {
                if o <= T::zero() {
                    *d = T::zero();
                }
            }
            dx
        }
        (Layer::Tanh, Cache::Output(out)) => {
            let mut dx = dy;
            for (d, &o) in dx.data.iter_mut().zip(&out) {
                *d *= T::one() - o * o;
            }
            dx
        }
        (Layer::Sigmoid, Cache::Output(out)) => {
            let mut dx = dy;
            for (d, &o) in dx.data.iter_mut().zip(&out) {
                *d *= o * (T::one() - o);
            }
            dx
        }
        (Layer::LeakyRelu(_) | Layer::Dropout(_), Cache::Mask(mask)) => {
            let mut dx = dy;
            for (d, &m) in dx.data.iter_mut().zip(&mask) {
                *d *= m;
            }
            dx
        }
        (Layer::Dropout(_), Cache::Identity) => dy,
        (layer, cache) => unreachable!("cache {cache:?} does not belong to layer {layer:?}"),
    }
}
