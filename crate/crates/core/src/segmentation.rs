//! Overlapping segment layouts: planning, extraction, training-image crop
//! sampling and reassembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{dims3, TextureGrid};
use crate::scalar::Scalar;

/// Geometry of `n` equal segments exactly tiling an output grid, adjacent
/// segments sharing `overlap` cells along each axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    output_dims: Vec<usize>,
    segment_dims: Vec<usize>,
    overlap: Vec<usize>,
    counts: Vec<usize>,
}

impl SegmentLayout {
    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn segment_dims(&self) -> &[usize] {
        &self.segment_dims
    }

    pub fn overlap(&self) -> &[usize] {
        &self.overlap
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Total segment count.
    pub fn n(&self) -> usize {
        self.counts.iter().product()
    }

    /// Distance between origins of neighbouring segments per axis.
    pub fn strides(&self) -> Vec<usize> {
        self.segment_dims
            .iter()
            .zip(&self.overlap)
            .map(|(s, o)| s - o)
            .collect()
    }

    /// Segment origins in row-major order over the segment lattice.
    pub fn origins(&self) -> Vec<Vec<usize>> {
        let strides = self.strides();
        let mut out = Vec::with_capacity(self.n());
        let mut idx = vec![0usize; self.counts.len()];
        loop {
            out.push(idx.iter().zip(&strides).map(|(i, s)| i * s).collect());
            let mut axis = idx.len();
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < self.counts[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// Whole-image layout with a single segment.
    pub fn whole(dims: &[usize]) -> Self {
        SegmentLayout {
            output_dims: dims.to_vec(),
            segment_dims: dims.to_vec(),
            overlap: vec![0; dims.len()],
            counts: vec![1; dims.len()],
        }
    }
}

/// Solves `count·segment − (count−1)·overlap = output` on every axis.
pub fn plan_layout(
    output_dims: &[usize],
    segment_dims: &[usize],
    overlap: &[usize],
) -> Result<SegmentLayout> {
    let nd = output_dims.len();
    if segment_dims.len() != nd || overlap.len() != nd {
        return Err(Error::Layout(format!(
            "output {output_dims:?}, segment {segment_dims:?} and overlap {overlap:?} must have the same rank"
        )));
    }
    if output_dims.iter().chain(segment_dims).any(|&d| d == 0) {
        return Err(Error::Layout("all dims must be positive".into()));
    }
    let mut counts = Vec::with_capacity(nd);
    for axis in 0..nd {
        let (out, seg, ov) = (output_dims[axis], segment_dims[axis], overlap[axis]);
        if ov >= seg {
            return Err(Error::Layout(format!(
                "axis {axis}: overlap {ov} must be smaller than segment {seg}"
            )));
        }
        let step = seg - ov;
        let feasible = |c: usize| c * seg - (c - 1) * ov;
        if out < seg || (out - ov) % step != 0 {
            let lower = if out >= seg { (out - ov) / step } else { 1 };
            let (lo, hi) = (feasible(lower.max(1)), feasible(lower.max(1) + 1));
            let nearest = if out < seg {
                format!("{seg}")
            } else {
                format!("{lo} or {hi}")
            };
            return Err(Error::Layout(format!(
                "axis {axis}: no count c satisfies c·{seg} − (c−1)·{ov} = {out} \
                 (exact tiling); nearest feasible output sizes: {nearest}"
            )));
        }
        counts.push((out - ov) / step);
    }
    Ok(SegmentLayout {
        output_dims: output_dims.to_vec(),
        segment_dims: segment_dims.to_vec(),
        overlap: overlap.to_vec(),
        counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentSource {
    FromGenerator,
    FromTrainingImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch<T: Scalar> {
    pub segments: Vec<TextureGrid<T>>,
    pub origins: Vec<Vec<usize>>,
    pub source: SegmentSource,
}

/// How training-image crops are positioned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiSampling {
    /// Uniform over every valid integer origin.
    #[default]
    Random,
    /// Uniform over origins on a fixed lattice with the layout's stride.
    Grid,
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    match *v {
        [a, b] => [fill, a, b],
        [a, b, c] => [a, b, c],
        _ => panic!("expected 2 or 3 entries, got {v:?}"),
    }
}

/// Copies the box `origin..origin+seg` out of a row-major `(d,h,w)` buffer.
pub(crate) fn crop_into<T: Copy>(
    src: &[T],
    src3: [usize; 3],
    origin3: [usize; 3],
    seg3: [usize; 3],
    dst: &mut Vec<T>,
) {
    for z in 0..seg3[0] {
        for y in 0..seg3[1] {
            let start = ((origin3[0] + z) * src3[1] + origin3[1] + y) * src3[2] + origin3[2];
            dst.extend_from_slice(&src[start..start + seg3[2]]);
        }
    }
}

/// Adds a segment back into a row-major `(d,h,w)` buffer (adjoint of [`crop_into`]).
pub(crate) fn add_box<T: Scalar>(
    dst: &mut [T],
    dst3: [usize; 3],
    origin3: [usize; 3],
    seg3: [usize; 3],
    seg: &[T],
) {
    let mut it = seg.chunks_exact(seg3[2]);
    for z in 0..seg3[0] {
        for y in 0..seg3[1] {
            let start = ((origin3[0] + z) * dst3[1] + origin3[1] + y) * dst3[2] + origin3[2];
            let row = it.next().expect("segment buffer matches seg dims");
            for (d, &s) in dst[start..start + seg3[2]].iter_mut().zip(row) {
                *d += s;
            }
        }
    }
}

fn crop<T: Scalar>(grid: &TextureGrid<T>, origin: &[usize], seg: &[usize]) -> TextureGrid<T> {
    let mut data = Vec::with_capacity(seg.iter().product());
    crop_into(
        grid.data(),
        grid.dims3(),
        pad3(origin, 0),
        pad3(seg, 1),
        &mut data,
    );
    TextureGrid::new(seg.to_vec(), data, grid.domain())
        .expect("crop of a valid grid is valid")
        .with_foreground(grid.foreground())
}

/// Splits a generated grid into the layout's segments (row-major origin order).
pub fn extract_segments<T: Scalar>(
    grid: &TextureGrid<T>,
    layout: &SegmentLayout,
) -> Result<SegmentBatch<T>> {
    if grid.dims() != layout.output_dims() {
        return Err(Error::Shape(format!(
            "grid dims {:?} do not match layout output {:?}",
            grid.dims(),
            layout.output_dims()
        )));
    }
    let origins = layout.origins();
    let segments = origins
        .iter()
        .map(|o| crop(grid, o, layout.segment_dims()))
        .collect();
    Ok(SegmentBatch {
        segments,
        origins,
        source: SegmentSource::FromGenerator,
    })
}

/// Picks `(ti index, origin)` pairs for `n` crops.
pub(crate) fn sample_origins<T: Scalar, R: Rng + ?Sized>(
    tis: &[TextureGrid<T>],
    segment_dims: &[usize],
    n: usize,
    sampling: TiSampling,
    grid_stride: Option<&[usize]>,
    rng: &mut R,
) -> Result<Vec<(usize, Vec<usize>)>> {
    if tis.is_empty() {
        return Err(Error::Invalid("at least one training image is required".into()));
    }
    if n == 0 {
        return Err(Error::Invalid("segment count must be at least 1".into()));
    }
    for (i, ti) in tis.iter().enumerate() {
        if ti.ndim() != segment_dims.len()
            || ti.dims().iter().zip(segment_dims).any(|(t, s)| s > t)
        {
            return Err(Error::Shape(format!(
                "segment {segment_dims:?} does not fit training image {i} with dims {:?}",
                ti.dims()
            )));
        }
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ti_idx = if tis.len() == 1 {
            0
        } else {
            rng.random_range(0..tis.len())
        };
        let dims = tis[ti_idx].dims();
        let origin = dims
            .iter()
            .zip(segment_dims)
            .enumerate()
            .map(|(axis, (&t, &s))| {
                let max = t - s;
                match (sampling, grid_stride) {
                    (TiSampling::Grid, Some(stride)) if stride[axis] > 0 => {
                        let slots = max / stride[axis] + 1;
                        rng.random_range(0..slots) * stride[axis]
                    }
                    _ => rng.random_range(0..=max),
                }
            })
            .collect();
        out.push((ti_idx, origin));
    }
    Ok(out)
}

/// Draws `n` crops of `segment_dims` from the training images, deterministic in `rng_seed`.
pub fn sample_ti_segments<T: Scalar>(
    tis: &[TextureGrid<T>],
    segment_dims: &[usize],
    n: usize,
    rng_seed: u64,
) -> Result<SegmentBatch<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    sample_ti_segments_with(tis, segment_dims, n, TiSampling::Random, None, &mut rng)
}

/// [`sample_ti_segments`] with a caller-owned RNG and sampling policy.
pub fn sample_ti_segments_with<T: Scalar, R: Rng + ?Sized>(
    tis: &[TextureGrid<T>],
    segment_dims: &[usize],
    n: usize,
    sampling: TiSampling,
    grid_stride: Option<&[usize]>,
    rng: &mut R,
) -> Result<SegmentBatch<T>> {
    let picks = sample_origins(tis, segment_dims, n, sampling, grid_stride, rng)?;
    let mut segments = Vec::with_capacity(n);
    let mut origins = Vec::with_capacity(n);
    for (ti, origin) in picks {
        segments.push(crop(&tis[ti], &origin, segment_dims));
        origins.push(origin);
    }
    Ok(SegmentBatch {
        segments,
        origins,
        source: SegmentSource::FromTrainingImage,
    })
}

/// Rebuilds the full grid from its segments, checking that overlaps agree.
pub fn assemble<T: Scalar>(batch: &SegmentBatch<T>, layout: &SegmentLayout) -> Result<TextureGrid<T>> {
    let origins = layout.origins();
    if batch.segments.len() != origins.len() {
        return Err(Error::Shape(format!(
            "layout has {} segments, batch has {}",
            origins.len(),
            batch.segments.len()
        )));
    }
    let first = &batch.segments[0];
    let out3 = dims3(layout.output_dims());
    let seg3 = dims3(layout.segment_dims());
    let total: usize = out3.iter().product();
    let mut data = vec![T::zero(); total];
    let mut written = vec![false; total];
    for (k, (seg, origin)) in batch.segments.iter().zip(&origins).enumerate() {
        if seg.dims() != layout.segment_dims() {
            return Err(Error::Shape(format!(
                "segment {k} has dims {:?}, layout expects {:?}",
                seg.dims(),
                layout.segment_dims()
            )));
        }
        let o3 = pad3(origin, 0);
        let mut src = seg.data().iter();
        for z in 0..seg3[0] {
            for y in 0..seg3[1] {
                for x in 0..seg3[2] {
                    let idx = ((o3[0] + z) * out3[1] + o3[1] + y) * out3[2] + o3[2] + x;
                    let v = *src.next().expect("segment length checked");
                    if written[idx] {
                        if data[idx] != v {
                            return Err(Error::Consistency(format!(
                                "segment {k} disagrees with an earlier segment at flat index {idx}"
                            )));
                        }
                    } else {
                        data[idx] = v;
                        written[idx] = true;
                    }
                }
            }
        }
    }
    Ok(TextureGrid::new(layout.output_dims().to_vec(), data, first.domain())?
        .with_foreground(first.foreground()))
}
