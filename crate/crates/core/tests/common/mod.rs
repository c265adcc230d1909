//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use texsyn::nets::{Discriminator, DiscriminatorSpec, Generator, GeneratorSpec};
use texsyn::nn::NetParams;
use texsyn::procedural::bernoulli_texture;
use texsyn::segmentation::{plan_layout, SegmentLayout};
use texsyn::training::loss_gradients;
use texsyn::Grid64;

/// Binary indicator on a `(depth, rows, cols)` box.
pub struct Cells {
    pub d3: [usize; 3],
    pub on: Vec<bool>,
}

impl Cells {
    pub fn of<T: texsyn::Scalar>(g: &texsyn::grids::TextureGrid<T>) -> Self {
        Cells { d3: g.dims3(), on: g.indicator() }
    }

    fn idx(&self, p: [usize; 3]) -> usize {
        (p[0] * self.d3[1] + p[1]) * self.d3[2] + p[2]
    }

    pub fn porosity(&self) -> f64 {
        self.on.iter().filter(|&&b| b).count() as f64 / self.on.len() as f64
    }
}

/// Directional S2 by direct pair counting; `axis` indexes `(depth, rows, cols)`.
pub fn s2_axis(c: &Cells, axis: usize, max_lag: usize, periodic: bool) -> Vec<f64> {
    let n = c.d3[axis];
    (0..=max_lag)
        .map(|r| {
            let (mut hits, mut pairs) = (0u64, 0u64);
            for z in 0..c.d3[0] {
                for y in 0..c.d3[1] {
                    for x in 0..c.d3[2] {
                        let mut q = [z, y, x];
                        let t = q[axis] + r;
                        if t >= n && !periodic {
                            continue;
                        }
                        q[axis] = t % n;
                        pairs += 1;
                        if c.on[c.idx([z, y, x])] && c.on[c.idx(q)] {
                            hits += 1;
                        }
                    }
                }
            }
            hits as f64 / pairs as f64
        })
        .collect()
}

/// Periodic radial S2: every lag vector with components in `(−n/2, n/2]`,
/// binned by `round(|r|)` and averaged over the vectors in each bin.
pub fn s2_radial_periodic(c: &Cells, max_lag: usize) -> Vec<f64> {
    let comps = |n: usize| -> Vec<i64> {
        let n = n as i64;
        (0..n).map(|i| if 2 * i > n { i - n } else { i }).collect()
    };
    let (cz, cy, cx) = (comps(c.d3[0]), comps(c.d3[1]), comps(c.d3[2]));
    let total = c.on.len() as f64;
    let mut sums = vec![0.0; max_lag + 1];
    let mut counts = vec![0usize; max_lag + 1];
    for &dz in &cz {
        for &dy in &cy {
            for &dx in &cx {
                let bin = ((dz * dz + dy * dy + dx * dx) as f64).sqrt().round() as usize;
                if bin > max_lag {
                    continue;
                }
                let mut hits = 0u64;
                for z in 0..c.d3[0] {
                    for y in 0..c.d3[1] {
                        for x in 0..c.d3[2] {
                            let q = [
                                (z as i64 + dz).rem_euclid(c.d3[0] as i64) as usize,
                                (y as i64 + dy).rem_euclid(c.d3[1] as i64) as usize,
                                (x as i64 + dx).rem_euclid(c.d3[2] as i64) as usize,
                            ];
                            if c.on[c.idx([z, y, x])] && c.on[c.idx(q)] {
                                hits += 1;
                            }
                        }
                    }
                }
                sums[bin] += hits as f64 / total;
                counts[bin] += 1;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &k)| s / k as f64).collect()
}

/// Breadth-first labelling in row-major seed order, non-periodic.
pub fn bfs_labels(c: &Cells, full: bool) -> (Vec<u32>, usize) {
    let mut offsets = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let l1 = dz.abs() + dy.abs() + dx.abs();
                if l1 == 0 || (!full && l1 > 1) {
                    continue;
                }
                if c.d3[0] == 1 && dz != 0 {
                    continue;
                }
                offsets.push([dz, dy, dx]);
            }
        }
    }
    let mut labels = vec![0u32; c.on.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..c.on.len() {
        if !c.on[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let p = [i / (c.d3[1] * c.d3[2]), (i / c.d3[2]) % c.d3[1], i % c.d3[2]];
            for o in &offsets {
                let q: Vec<i64> = (0..3).map(|a| p[a] as i64 + o[a]).collect();
                if (0..3).any(|a| q[a] < 0 || q[a] >= c.d3[a] as i64) {
                    continue;
                }
                let j = c.idx([q[0] as usize, q[1] as usize, q[2] as usize]);
                if c.on[j] && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Fraction of cells where two equally shaped indicators differ.
pub fn hamming_fraction(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub const FD_STEP: f64 = 1e-4;
/// Below this magnitude a gradient is compared absolutely.
const FD_FLOOR: f64 = 1e-6;
/// Spread of the test point. At the N(0, 0.02) initialization, generator
/// outputs are near zero and discriminator pre-activations sit within one
/// step of the LeakyReLU kink, where central differences are meaningless.
const TEST_POINT_STD: f64 = 0.3;
const FD_BATCH: usize = 4;
const FD_STREAM: u64 = 9;

fn scatter(params: &mut NetParams<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, TEST_POINT_STD).unwrap();
    for t in params.tensors_mut().iter_mut().filter(|t| t.trainable) {
        t.data.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    }
}

/// Lattice 2×2, one transposed layer, kernel 3: a 4×4 generator output.
pub struct GradCase {
    pub g: Generator<f64>,
    pub d: Discriminator<f64>,
    pub tis: Vec<Grid64>,
    pub layout: SegmentLayout,
}

pub fn grad_case(segment: [usize; 2], overlap: [usize; 2]) -> GradCase {
    let gs = GeneratorSpec::new(vec![2, 2], vec![3], 3);
    let ds = DiscriminatorSpec::new(segment.to_vec(), vec![2], 3);
    let mut g = Generator::build(&gs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let mut d = Discriminator::build(&ds, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    scatter(&mut g.params, 4);
    scatter(&mut d.params, 5);
    let layout = plan_layout(&[4, 4], &segment, &overlap).unwrap();
    let tis = vec![bernoulli_texture::<f64>(&[6, 6], 0.4, 3)];
    GradCase { g, d, tis, layout }
}

fn fd_losses(c: &mut GradCase) -> (f64, f64) {
    let s = loss_gradients(&mut c.g, &mut c.d, &c.tis, &c.layout, FD_BATCH, &mut ChaCha8Rng::seed_from_u64(FD_STREAM))
        .unwrap();
    (s.j_d, s.j_g)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

fn net(c: &mut GradCase, of_d: bool) -> &mut NetParams<f64> {
    if of_d {
        &mut c.d.params
    } else {
        &mut c.g.params
    }
}

/// Perturbs every trainable scalar of one network and returns the worst relative error.
fn worst_over(c: &mut GradCase, analytic: &NetParams<f64>, of_d: bool) -> (f64, usize) {
    let (mut worst, mut checked) = (0.0f64, 0);
    for ti in 0..net(c, of_d).len() {
        if !net(c, of_d).tensors()[ti].trainable {
            continue;
        }
        for k in 0..net(c, of_d).tensors()[ti].data.len() {
            let orig = net(c, of_d).tensors()[ti].data[k];
            net(c, of_d).tensors_mut()[ti].data[k] = orig + FD_STEP;
            let up = fd_losses(c);
            net(c, of_d).tensors_mut()[ti].data[k] = orig - FD_STEP;
            let down = fd_losses(c);
            net(c, of_d).tensors_mut()[ti].data[k] = orig;
            let (u, d) = if of_d { (up.0, down.0) } else { (up.1, down.1) };
            let numeric = (u - d) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic.tensors()[ti].data[k], numeric));
            checked += 1;
        }
    }
    (worst, checked)
}

/// Largest relative errors of `∂J_D/∂θ_D` and `∂J_G/∂θ_G`, and the number of scalars checked.
pub fn gradient_errors(c: &mut GradCase) -> (f64, f64, usize) {
    let grads = loss_gradients(&mut c.g, &mut c.d, &c.tis, &c.layout, FD_BATCH, &mut ChaCha8Rng::seed_from_u64(FD_STREAM))
        .unwrap();
    let (wd, nd) = worst_over(c, &grads.d_grads, true);
    let (wg, ng) = worst_over(c, &grads.g_grads, false);
    (wd, wg, nd + ng)
}
