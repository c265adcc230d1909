//! Drawing realizations from a trained generator, at the trained size or on an
//! enlarged latent lattice, and scanning them for seams along segment borders.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use npyz::WriterBuilder;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::grids::{binarize, save_texture, TextureGrid, ValueDomain};
use crate::nets::{Generator, GeneratorSpec};
use crate::scalar::Scalar;
use crate::segmentation::SegmentLayout;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisRequest {
    pub checkpoint: PathBuf,
    pub output_dims: Vec<usize>,
    pub count: usize,
    pub rng_seed: u64,
    pub binarize_threshold: f64,
    /// Keep model-range values instead of binarizing.
    pub raw: bool,
}

impl SynthesisRequest {
    pub fn new(checkpoint: impl Into<PathBuf>, output_dims: Vec<usize>, count: usize, rng_seed: u64) -> Self {
        SynthesisRequest {
            checkpoint: checkpoint.into(),
            output_dims,
            count,
            rng_seed,
            binarize_threshold: 0.0,
            raw: false,
        }
    }
}

/// Latent lattice producing `output_dims`, or an error naming the nearest
/// representable sizes.
pub fn lattice_for(spec: &GeneratorSpec, output_dims: &[usize]) -> Result<Vec<usize>> {
    let scale = spec.scale()?;
    if output_dims.len() != scale.len() {
        return Err(Error::Shape(format!(
            "requested {}D output from a {}D generator",
            output_dims.len(),
            scale.len()
        )));
    }
    let mut lattice = Vec::with_capacity(scale.len());
    let mut problems = Vec::new();
    for (axis, (&o, &s)) in output_dims.iter().zip(&scale).enumerate() {
        if o > 0 && o % s == 0 {
            lattice.push(o / s);
        } else {
            let lo = o / s * s;
            let hi = lo + s;
            let near = if lo == 0 {
                format!("{hi}")
            } else {
                format!("{lo} or {hi}")
            };
            problems.push(format!(
                "axis {axis}: {o} is not a multiple of {s}; nearest valid sizes: {near}"
            ));
        }
    }
    if problems.is_empty() {
        Ok(lattice)
    } else {
        Err(Error::Invalid(format!(
            "output dims {output_dims:?} cannot be generated: {}",
            problems.join("; ")
        )))
    }
}

/// Per-realization RNG, independent of how many realizations are drawn.
pub fn realization_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `count` realizations from an in-memory generator.
pub fn generate_with<T: Scalar>(
    generator: &mut Generator<T>,
    output_dims: &[usize],
    count: usize,
    rng_seed: u64,
    threshold: Option<f64>,
) -> Result<Vec<TextureGrid<T>>> {
    if count == 0 {
        return Err(Error::Invalid("count must be at least 1".into()));
    }
    let lattice = lattice_for(generator.spec(), output_dims)?;
    (0..count)
        .map(|i| {
            let mut rng = realization_rng(rng_seed, i);
            let g = generator
                .generate(1, &lattice, &mut rng)?
                .pop()
                .expect("one realization");
            match threshold {
                Some(t) => binarize(&g, t),
                None => Ok(g),
            }
        })
        .collect()
}

/// Loads the checkpoint and draws the requested realizations.
pub fn generate<T: Scalar>(request: &SynthesisRequest) -> Result<Vec<TextureGrid<T>>> {
    let ckpt = Checkpoint::<T>::load(&request.checkpoint)?;
    let mut g = Generator::from_params(&ckpt.meta.generator, ckpt.generator)?;
    let threshold = (!request.raw).then_some(request.binarize_threshold);
    generate_with(&mut g, &request.output_dims, request.count, request.rng_seed, threshold)
}

/// File name of realization `index`.
pub fn realization_name(index: usize, ndim: usize, raw: bool) -> String {
    match (raw, ndim) {
        (true, _) => format!("real_{index:04}.npy"),
        (false, 2) => format!("real_{index:04}.png"),
        (false, _) => format!("real_{index:04}.sgrd"),
    }
}

/// Writes binary realizations as PNG (2D) or SGRD (3D) and model-range ones
/// as float32 `.npy` arrays.
pub fn write_realizations<T: Scalar>(grids: &[TextureGrid<T>], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    grids
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let raw = g.domain() == ValueDomain::ModelRange;
            let path = dir.join(realization_name(i, g.ndim(), raw));
            if raw {
                write_npy(g, &path)?;
            } else {
                save_texture(g, &path)?;
            }
            Ok(path)
        })
        .collect()
}

fn write_npy<T: Scalar>(g: &TextureGrid<T>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let shape: Vec<u64> = g.dims().iter().map(|&d| d as u64).collect();
    let io = |e| Error::io(path, e);
    let mut w = npyz::WriteOptions::<f32>::new()
        .default_dtype()
        .shape(&shape)
        .writer(BufWriter::new(file))
        .begin_nd()
        .map_err(io)?;
    w.extend(g.data().iter().map(|v| v.to_f32_lossy())).map_err(io)?;
    w.finish().map_err(io)
}

/// Seam statistic at one segment-pair border.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeamBoundary {
    /// Axis index in the grid's own dims.
    pub axis: usize,
    /// Pairs with `x < position <= x + r` along `axis` straddle the border.
    pub position: usize,
    /// Half-open `[lo, hi)` window on every axis.
    pub extent: Vec<(usize, usize)>,
    /// Mean over lags of `|S2_cross(r) − S2_side(r)|`.
    pub discrepancy: f64,
    /// Mean over lags of `S2_side(r) − S2_cross(r)`;
    /// zero in expectation for a stationary texture, positive across a seam.
    pub deficit: f64,
    /// Standard error of `deficit` under stationarity.
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeamReport {
    pub max_lag: usize,
    pub boundaries: Vec<SeamBoundary>,
}

impl SeamReport {
    pub fn max_abs_z(&self) -> f64 {
        self.boundaries.iter().map(|b| b.z.abs()).fold(0.0, f64::max)
    }

    /// Fraction of borders with `|z| < limit`.
    pub fn fraction_below(&self, limit: f64) -> f64 {
        if self.boundaries.is_empty() {
            return 1.0;
        }
        self.boundaries.iter().filter(|b| b.z.abs() < limit).count() as f64 / self.boundaries.len() as f64
    }
}

pub const SEAM_MAX_LAG: usize = 8;

/// Side windows reach `2L` from the line on either side.
fn seam_band(max_lag: usize) -> usize {
    2 * max_lag
}

/// Largest transverse offset used for the covariance of line profiles.
const MAX_COV_LAG: usize = 16;

/// Per-lag cross and side pair fractions of every transverse cell for the
/// line at `pos`; cells are the grid with `axis` removed, in row-major order.
struct LineProfile {
    cross: Vec<Vec<f64>>,
    side: Vec<Vec<f64>>,
}

impl LineProfile {
    fn new(on: &[bool], d3: [usize; 3], axis: usize, pos: usize, max_lag: usize) -> Self {
        let strides = [d3[1] * d3[2], d3[2], 1];
        let step = strides[axis];
        let cells: Vec<usize> = transverse_cells(d3, axis)
            .map(|(u, v)| transverse_base(d3, axis, u, v))
            .collect();
        let frac = |base: usize, lo: usize, hi: usize, r: usize| {
            (lo..hi)
                .filter(|&x| on[base + x * step] && on[base + (x + r) * step])
                .count() as f64
                / (hi - lo) as f64
        };
        let mut cross = Vec::with_capacity(max_lag);
        let mut side = Vec::with_capacity(max_lag);
        for r in 1..=max_lag {
            cross.push(cells.iter().map(|&b| frac(b, pos - r, pos, r)).collect());
            side.push(
                cells
                    .iter()
                    .map(|&b| 0.5 * (frac(b, pos - 2 * r, pos - r, r) + frac(b, pos, pos + r, r)))
                    .collect(),
            );
        }
        LineProfile { cross, side }
    }

    /// Per-cell `side − cross` for every lag.
    fn deficits(&self) -> Vec<Vec<f64>> {
        self.cross
            .iter()
            .zip(&self.side)
            .map(|(cr, sd)| sd.iter().zip(cr).map(|(s, c)| s - c).collect())
            .collect()
    }
}

/// Transverse dims `(outer, inner)` of `d3` with `axis` removed.
fn transverse_dims(d3: [usize; 3], axis: usize) -> (usize, usize) {
    match axis {
        0 => (d3[1], d3[2]),
        1 => (d3[0], d3[2]),
        _ => (d3[0], d3[1]),
    }
}

fn transverse_cells(d3: [usize; 3], axis: usize) -> impl Iterator<Item = (usize, usize)> {
    let (t0, t1) = transverse_dims(d3, axis);
    (0..t0).flat_map(move |u| (0..t1).map(move |v| (u, v)))
}

/// Flat index of the cell at axis coordinate 0 for transverse `(u, v)`.
fn transverse_base(d3: [usize; 3], axis: usize, u: usize, v: usize) -> usize {
    let p = match axis {
        0 => [0, u, v],
        1 => [u, 0, v],
        _ => [u, v, 0],
    };
    (p[0] * d3[1] + p[1]) * d3[2] + p[2]
}

/// Autocovariance of zero-mean deficit profiles over transverse offsets
/// `(k0, k1)` with `|k| <= max`, pooled over lines.
fn profile_covariance(profiles: &[Vec<f64>], dims: (usize, usize), max: (usize, usize)) -> Vec<Vec<f64>> {
    let (t0, t1) = dims;
    let w1 = 2 * max.1 + 1;
    let mut cov = vec![vec![0.0; w1]; 2 * max.0 + 1];
    for (i0, row) in cov.iter_mut().enumerate() {
        let k0 = i0 as i64 - max.0 as i64;
        for (i1, slot) in row.iter_mut().enumerate() {
            let k1 = i1 as i64 - max.1 as i64;
            let (mut sum, mut n) = (0.0, 0u64);
            for prof in profiles {
                for u in 0..t0 as i64 {
                    let u2 = u + k0;
                    if !(0..t0 as i64).contains(&u2) {
                        continue;
                    }
                    for v in 0..t1 as i64 {
                        let v2 = v + k1;
                        if !(0..t1 as i64).contains(&v2) {
                            continue;
                        }
                        sum += prof[(u * t1 as i64 + v) as usize] * prof[(u2 * t1 as i64 + v2) as usize];
                        n += 1;
                    }
                }
            }
            *slot = if n > 0 { sum / n as f64 } else { 0.0 };
        }
    }
    cov
}

/// Variance of the window mean of zero-mean profiles over a `wdims` window.
fn window_variance(profiles: &[Vec<f64>], tdims: (usize, usize), wdims: [usize; 2]) -> f64 {
    let kmax = ((wdims[0] - 1).min(MAX_COV_LAG), (wdims[1] - 1).min(MAX_COV_LAG));
    let cov = profile_covariance(profiles, tdims, kmax);
    let cells = (wdims[0] * wdims[1]) as f64;
    let mut var = 0.0;
    for (i0, row) in cov.iter().enumerate() {
        let k0 = i0.abs_diff(kmax.0);
        for (i1, &c) in row.iter().enumerate() {
            let k1 = i1.abs_diff(kmax.1);
            var += ((wdims[0] - k0) * (wdims[1] - k1)) as f64 * c;
        }
    }
    (var / (cells * cells)).max(cov[kmax.0][kmax.1] / cells).max(0.0)
}

fn weighted(profiles: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    (0..profiles[0].len())
        .map(|c| profiles.iter().zip(weights).map(|(p, w)| w * p[c]).sum())
        .collect()
}

/// Scans every segment-pair border for a break in two-point statistics.
///
/// Around a line at `b`, the `r` cross pairs `(x, x + r)` per transverse cell
/// straddle it (`x < b <= x + r`). The side pairs are the `r` pairs just
/// before them (`b − 2r <= x < b − r`) and the `r` just after (`b <= x < b + r`),
/// so both sets have equal counts and sit equally close to the line. Lags run
/// over `r = 1..=L` with `L = max_lag`, restricted to the shared extent of the two
/// segments. For a stationary texture both estimate the same S2(r), so the
/// differences `side − cross` have mean zero at every lag; a seam
/// decorrelates the cross pairs and makes them positive. Each difference is
/// an average of per-cell contributions over the extent, and their
/// covariance across transverse offsets is estimated from every interior
/// line at least `L` from all borders and `2L` from the grid edges. The
/// `deficit` is the lag mean of the differences, and `z` is the
/// deficit over its standard error. `discrepancy` is the plain lag mean of
/// `|S2_cross(r) − S2_side(r)|`.
pub fn seam_scan<T: Scalar>(grid: &TextureGrid<T>, layout: &SegmentLayout, max_lag: usize) -> Result<SeamReport> {
    if grid.dims() != layout.output_dims() {
        return Err(Error::Shape(format!(
            "grid dims {:?} do not match layout output {:?}",
            grid.dims(),
            layout.output_dims()
        )));
    }
    if grid.domain() != ValueDomain::Binary01 {
        return Err(Error::Domain("seam scan needs a Binary01 grid".into()));
    }
    if max_lag == 0 {
        return Err(Error::Invalid("max_lag must be positive".into()));
    }
    let ndim = grid.ndim();
    let lead = 3 - ndim;
    let d3 = grid.dims3();
    let on = grid.indicator();
    let seg = layout.segment_dims();
    let counts = layout.counts();
    let strides = layout.strides();
    let overlap = layout.overlap();
    let band = seam_band(max_lag);
    for (a, &s) in seg.iter().enumerate() {
        if counts[a] > 1 && 2 * band > s {
            return Err(Error::Invalid(format!(
                "seam window 4×{max_lag} is larger than the segment ({s}) on axis {a}"
            )));
        }
    }
    let mut boundaries = Vec::new();
    for axis in 0..ndim {
        if counts[axis] < 2 {
            continue;
        }
        let a3 = axis + lead;
        let n = d3[a3];
        let lines: Vec<usize> = (1..counts[axis])
            .map(|k| k * strides[axis] + overlap[axis] / 2)
            .collect();
        let interior: Vec<usize> = (band..=n - band)
            .filter(|&p| lines.iter().all(|&b| p.abs_diff(b) >= max_lag))
            .collect();
        let tdims = transverse_dims(d3, a3);
        let others: Vec<usize> = (0..ndim).filter(|&a| a != axis).collect();
        // window size on the transverse axes, padded to (outer, inner)
        let mut wdims = [1usize, 1];
        for (k, &a) in others.iter().enumerate() {
            wdims[k + 2 - others.len()] = seg[a];
        }
        // per lag, then per interior line
        let mut per_lag: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(interior.len()); max_lag];
        for &p in &interior {
            for (r, d) in LineProfile::new(&on, d3, a3, p, max_lag).deficits().into_iter().enumerate() {
                per_lag[r].push(d);
            }
        }
        let weights = vec![1.0 / max_lag as f64; max_lag];
        let std_error = if interior.is_empty() {
            f64::NAN
        } else {
            let combined: Vec<Vec<f64>> = (0..interior.len())
                .map(|i| {
                    let lines: Vec<Vec<f64>> = per_lag.iter().map(|p| p[i].clone()).collect();
                    weighted(&lines, &weights)
                })
                .collect();
            window_variance(&combined, tdims, wdims).sqrt()
        };
        let cells = (wdims[0] * wdims[1]) as f64;

        let combos: usize = others.iter().map(|&a| counts[a]).product();
        for &pos in &lines {
            let profile = LineProfile::new(&on, d3, a3, pos, max_lag);
            for c in 0..combos {
                let mut lo = [0usize; 2];
                let mut rem = c;
                for (k, &a) in others.iter().enumerate().rev() {
                    let idx = rem % counts[a];
                    rem /= counts[a];
                    lo[k + 2 - others.len()] = idx * strides[a];
                }
                let window: Vec<usize> = (lo[0]..lo[0] + wdims[0])
                    .flat_map(|u| (lo[1]..lo[1] + wdims[1]).map(move |v| u * tdims.1 + v))
                    .collect();
                let mean_over = |v: &[f64]| window.iter().map(|&i| v[i]).sum::<f64>() / cells;
                let per_lag_window: Vec<(f64, f64)> = profile
                    .cross
                    .iter()
                    .zip(&profile.side)
                    .map(|(cr, sd)| (mean_over(cr), mean_over(sd)))
                    .collect();
                let lags = per_lag_window.len() as f64;
                let discrepancy = per_lag_window.iter().map(|(c, s)| (c - s).abs()).sum::<f64>() / lags;
                let deficit = per_lag_window.iter().zip(&weights).map(|((c, s), w)| w * (s - c)).sum::<f64>();
                let z = if interior.is_empty() {
                    f64::NAN
                } else if std_error > 0.0 {
                    deficit / std_error
                } else if deficit == 0.0 {
                    0.0
                } else {
                    f64::INFINITY.copysign(deficit)
                };
                let mut extent = Vec::with_capacity(ndim);
                let mut k = 2 - others.len();
                for a in 0..ndim {
                    if a == axis {
                        extent.push((pos - band, pos + band));
                    } else {
                        extent.push((lo[k], lo[k] + wdims[k]));
                        k += 1;
                    }
                }
                boundaries.push(SeamBoundary {
                    axis,
                    position: pos,
                    extent,
                    discrepancy,
                    deficit,
                    std_error,
                    z,
                });
            }
        }
    }
    Ok(SeamReport { max_lag, boundaries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::procedural::{bernoulli_texture, channel_texture, ChannelParams};
    use crate::segmentation::plan_layout;

    #[test]
    fn lattice_arithmetic() {
        let spec = GeneratorSpec::new(vec![32, 32], vec![64, 32, 16], 5);
        assert_eq!(lattice_for(&spec, &[512, 512]).unwrap(), vec![64, 64]);
        assert_eq!(lattice_for(&spec, &[256, 256]).unwrap(), vec![32, 32]);
        let msg = lattice_for(&spec, &[300, 300]).unwrap_err().to_string();
        assert!(msg.contains("296 or 304"), "{msg}");
        assert!(lattice_for(&spec, &[4, 8]).unwrap_err().to_string().contains("nearest valid sizes: 8"));
    }

    #[test]
    fn constant_grid_has_no_discrepancy() {
        let g = TextureGrid::<f32>::binary_from_fn(vec![64, 64], |_| true);
        let layout = plan_layout(&[64, 64], &[34, 34], &[4, 4]).unwrap();
        let rep = seam_scan(&g, &layout, SEAM_MAX_LAG).unwrap();
        assert_eq!(rep.boundaries.len(), 4);
        assert!(rep.boundaries.iter().all(|b| b.discrepancy == 0.0 && b.z == 0.0));
    }

    /// Two independent textures side by side, split between the halves only.
    fn hard_concatenation(seed: u64) -> (TextureGrid<f32>, TextureGrid<f32>, SegmentLayout) {
        let p = ChannelParams { channels: 16, ..ChannelParams::default() };
        let a = channel_texture::<f32>(256, 64, p, 2 * seed);
        let b = channel_texture::<f32>(256, 64, p, 2 * seed + 1);
        let joined = TextureGrid::binary_from_fn(vec![256, 128], |i| {
            let (y, x) = (i / 128, i % 128);
            if x < 64 {
                a.data()[y * 64 + x] > 0.5
            } else {
                b.data()[y * 64 + x - 64] > 0.5
            }
        });
        let stationary = channel_texture::<f32>(256, 128, p, 1000 + seed);
        let layout = plan_layout(&[256, 128], &[256, 66], &[0, 4]).unwrap();
        (joined, stationary, layout)
    }

    #[test]
    fn hard_concatenation_is_detected() {
        for seed in 0..4 {
            let (joined, stationary, layout) = hard_concatenation(seed);
            let rep = seam_scan(&joined, &layout, SEAM_MAX_LAG).unwrap();
            assert_eq!(rep.boundaries.len(), 1);
            assert_eq!(rep.boundaries[0].position, 64);
            assert!(rep.boundaries[0].z > 3.0, "{:?}", rep.boundaries[0]);
            let plain = seam_scan(&stationary, &layout, SEAM_MAX_LAG).unwrap();
            assert!(plain.max_abs_z() < 3.0, "{:?}", plain.boundaries[0]);
        }
    }

    #[test]
    fn window_larger_than_segment_is_rejected() {
        let g = bernoulli_texture::<f32>(&[40, 40], 0.5, 1);
        let layout = plan_layout(&[40, 40], &[22, 22], &[4, 4]).unwrap();
        assert!(seam_scan(&g, &layout, 8).is_err());
    }
}
