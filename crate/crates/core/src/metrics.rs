//! Two-point statistics of binary textures.
//!
//! All functions look at the grid's phase of interest (its `foreground`).
//! Axes are named from the innermost outwards: `X` is the column axis, `Y`
//! the row axis and `Z` the depth axis of 3D volumes.

use std::collections::HashMap;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{TextureGrid, ValueDomain};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    #[default]
    Truncated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    /// 4-neighbourhood in 2D, 6 in 3D.
    #[default]
    Face,
    /// 8-neighbourhood in 2D, 26 in 3D.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    S2,
    C2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    DirectionalX,
    DirectionalY,
    DirectionalZ,
    RadialIsotropic,
}

impl Averaging {
    pub fn name(self) -> &'static str {
        match self {
            Averaging::DirectionalX => "directional_x",
            Averaging::DirectionalY => "directional_y",
            Averaging::DirectionalZ => "directional_z",
            Averaging::RadialIsotropic => "radial_isotropic",
        }
    }

    /// Index into `(depth, row, col)` dims for directional modes.
    fn axis3(self) -> Option<usize> {
        match self {
            Averaging::DirectionalX => Some(2),
            Averaging::DirectionalY => Some(1),
            Averaging::DirectionalZ => Some(0),
            Averaging::RadialIsotropic => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub porosity: f64,
    pub kind: MetricKind,
    pub averaging: Averaging,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub dims: Vec<usize>,
    /// 0 for background, `1..=cluster_count` for clusters.
    pub labels: Vec<u32>,
    pub cluster_count: usize,
}

/// Indicator of the phase of interest on a `(depth, row, col)` box.
struct Mask {
    d3: [usize; 3],
    ndim: usize,
    on: Vec<bool>,
}

impl Mask {
    fn of<T: Scalar>(grid: &TextureGrid<T>) -> Result<Self> {
        if grid.domain() != ValueDomain::Binary01 {
            return Err(Error::Domain("statistics need a Binary01 grid".into()));
        }
        Ok(Mask {
            d3: grid.dims3(),
            ndim: grid.ndim(),
            on: grid.indicator(),
        })
    }

    fn porosity(&self) -> f64 {
        self.on.iter().filter(|&&b| b).count() as f64 / self.on.len() as f64
    }

    fn check_axis(&self, averaging: Averaging) -> Result<usize> {
        let axis = averaging.axis3().expect("directional");
        if self.ndim == 2 && axis == 0 {
            return Err(Error::Invalid("directional_z needs a 3D grid".into()));
        }
        Ok(axis)
    }
}

fn check_lag(n: usize, max_lag: usize, boundary: Boundary) -> Result<()> {
    if max_lag >= n {
        return Err(Error::Invalid(format!(
            "max_lag {max_lag} must be smaller than the axis length {n}"
        )));
    }
    if boundary == Boundary::Periodic && 2 * max_lag > n {
        return Err(Error::Invalid(format!(
            "periodic max_lag {max_lag} must be at most half the axis length {n}"
        )));
    }
    Ok(())
}

/// Volume fraction of the phase of interest.
pub fn porosity<T: Scalar>(grid: &TextureGrid<T>) -> Result<f64> {
    Ok(Mask::of(grid)?.porosity())
}

/// Counts pairs `(x, x + r·e_axis)` accepted by `hit`, returning `(hits, pairs)`.
fn directional_pairs(
    d3: [usize; 3],
    axis: usize,
    r: usize,
    boundary: Boundary,
    mut hit: impl FnMut(usize, usize) -> bool,
) -> (u64, u64) {
    let strides = [d3[1] * d3[2], d3[2], 1];
    let n = d3[axis];
    let (mut hits, mut pairs) = (0u64, 0u64);
    for z in 0..d3[0] {
        for y in 0..d3[1] {
            for x in 0..d3[2] {
                let pos = [z, y, x];
                let p = pos[axis];
                let q = match boundary {
                    Boundary::Truncated if p + r >= n => continue,
                    Boundary::Truncated => p + r,
                    Boundary::Periodic => (p + r) % n,
                };
                let a = z * strides[0] + y * strides[1] + x;
                let b = a - p * strides[axis] + q * strides[axis];
                pairs += 1;
                if hit(a, b) {
                    hits += 1;
                }
            }
        }
    }
    (hits, pairs)
}

/// S2 along one axis for `r = 0..=max_lag`.
pub fn s2_directional<T: Scalar>(
    grid: &TextureGrid<T>,
    averaging: Averaging,
    max_lag: usize,
    boundary: Boundary,
) -> Result<MetricCurve> {
    let m = Mask::of(grid)?;
    if averaging == Averaging::RadialIsotropic {
        return s2_radial(grid, max_lag, boundary, false);
    }
    let axis = m.check_axis(averaging)?;
    check_lag(m.d3[axis], max_lag, boundary)?;
    let values = (0..=max_lag)
        .map(|r| {
            let (h, p) = directional_pairs(m.d3, axis, r, boundary, |a, b| m.on[a] && m.on[b]);
            h as f64 / p as f64
        })
        .collect();
    Ok(MetricCurve {
        lags: (0..=max_lag).map(|r| r as f64).collect(),
        values,
        porosity: m.porosity(),
        kind: MetricKind::S2,
        averaging,
    })
}

fn fft_axis(data: &mut [Complex<f64>], d3: [usize; 3], axis: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let n = d3[axis];
    if n == 1 {
        return;
    }
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let strides = [d3[1] * d3[2], d3[2], 1];
    let stride = strides[axis];
    let mut line = vec![Complex::default(); n];
    let outer: Vec<usize> = (0..d3[0] * d3[1] * d3[2])
        .filter(|&i| (i / stride).is_multiple_of(n))
        .collect();
    for start in outer {
        for (k, v) in line.iter_mut().enumerate() {
            *v = data[start + k * stride];
        }
        fft.process(&mut line);
        for (k, v) in line.iter().enumerate() {
            data[start + k * stride] = *v;
        }
    }
}

/// `Σ_x f(x) f(x + r)` for every lag on a (possibly padded) periodic box.
fn autocorrelation(values: &[f64], d3: [usize; 3]) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for axis in 0..3 {
        fft_axis(&mut data, d3, axis, &mut planner, false);
    }
    for v in data.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }
    for axis in 0..3 {
        fft_axis(&mut data, d3, axis, &mut planner, true);
    }
    let scale = 1.0 / values.len() as f64;
    data.iter().map(|c| c.re * scale).collect()
}

/// Signed lag represented by index `i` on an axis of padded length `len`.
fn signed_lag(i: usize, len: usize) -> i64 {
    if 2 * i > len {
        i as i64 - len as i64
    } else {
        i as i64
    }
}

/// S2 over all lag vectors, averaged in unit-width bins of `round(|r|)`.
///
/// `normalized` maps values to `(S2 − φ²)/(φ − φ²)`.
pub fn s2_radial<T: Scalar>(
    grid: &TextureGrid<T>,
    max_lag: usize,
    boundary: Boundary,
    normalized: bool,
) -> Result<MetricCurve> {
    let m = Mask::of(grid)?;
    let spatial: Vec<usize> = m.d3.iter().copied().filter(|&n| n > 1).collect();
    let min_dim = spatial.iter().copied().min().unwrap_or(1);
    check_lag(min_dim, max_lag, boundary)?;
    let phi = m.porosity();
    let padded = match boundary {
        Boundary::Periodic => m.d3,
        Boundary::Truncated => m.d3.map(|n| if n > 1 { 2 * n } else { 1 }),
    };
    let mut field = vec![0.0; padded.iter().product()];
    for z in 0..m.d3[0] {
        for y in 0..m.d3[1] {
            for x in 0..m.d3[2] {
                if m.on[(z * m.d3[1] + y) * m.d3[2] + x] {
                    field[(z * padded[1] + y) * padded[2] + x] = 1.0;
                }
            }
        }
    }
    let corr = autocorrelation(&field, padded);
    let mut sums = vec![0.0; max_lag + 1];
    let mut counts = vec![0u64; max_lag + 1];
    for z in 0..padded[0] {
        for y in 0..padded[1] {
            for x in 0..padded[2] {
                let r = [signed_lag(z, padded[0]), signed_lag(y, padded[1]), signed_lag(x, padded[2])];
                let dist = r.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
                let bin = dist.round() as usize;
                if bin > max_lag {
                    continue;
                }
                let pairs: f64 = match boundary {
                    Boundary::Periodic => m.on.len() as f64,
                    Boundary::Truncated => {
                        let valid: Vec<i64> = (0..3).map(|a| m.d3[a] as i64 - r[a].abs()).collect();
                        if valid.iter().any(|&v| v <= 0) {
                            continue;
                        }
                        valid.iter().product::<i64>() as f64
                    }
                };
                let total = corr[(z * padded[1] + y) * padded[2] + x];
                sums[bin] += total / pairs;
                counts[bin] += 1;
            }
        }
    }
    let mut values: Vec<f64> = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    values[0] = phi;
    if normalized {
        let denom = phi - phi * phi;
        if denom <= 0.0 {
            return Err(Error::Invalid("normalized S2 is undefined for porosity 0 or 1".into()));
        }
        for v in values.iter_mut() {
            *v = (*v - phi * phi) / denom;
        }
    }
    Ok(MetricCurve {
        lags: (0..=max_lag).map(|r| r as f64).collect(),
        values,
        porosity: phi,
        kind: MetricKind::S2,
        averaging: Averaging::RadialIsotropic,
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn label_mask(m: &Mask, connectivity: Connectivity, periodic: bool) -> (Vec<u32>, usize) {
    let d3 = m.d3;
    let len = m.on.len();
    let mut parent: Vec<usize> = (0..len).collect();
    let mut offsets = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let o = [dz, dy, dx];
                let nonzero = o.iter().filter(|&&v| v != 0).count();
                if nonzero == 0 || (connectivity == Connectivity::Face && nonzero > 1) {
                    continue;
                }
                if o.iter().zip(&d3).any(|(&v, &n)| v != 0 && n == 1) {
                    continue;
                }
                offsets.push(o);
            }
        }
    }
    for z in 0..d3[0] {
        for y in 0..d3[1] {
            for x in 0..d3[2] {
                let a = (z * d3[1] + y) * d3[2] + x;
                if !m.on[a] {
                    continue;
                }
                let pos = [z as i64, y as i64, x as i64];
                'next: for o in &offsets {
                    let mut q = [0usize; 3];
                    for k in 0..3 {
                        let n = d3[k] as i64;
                        let mut v = pos[k] + o[k];
                        if v < 0 || v >= n {
                            if !periodic {
                                continue 'next;
                            }
                            v = v.rem_euclid(n);
                        }
                        q[k] = v as usize;
                    }
                    let b = (q[0] * d3[1] + q[1]) * d3[2] + q[2];
                    if m.on[b] {
                        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                        if ra != rb {
                            parent[ra.max(rb)] = ra.min(rb);
                        }
                    }
                }
            }
        }
    }
    let mut ids: HashMap<usize, u32> = HashMap::new();
    let mut labels = vec![0u32; len];
    for i in 0..len {
        if m.on[i] {
            let root = find(&mut parent, i);
            let next = ids.len() as u32 + 1;
            labels[i] = *ids.entry(root).or_insert(next);
        }
    }
    (labels, ids.len())
}

/// Connected components of the phase of interest, numbered in row-major
/// first-visit order.
pub fn label_clusters<T: Scalar>(
    grid: &TextureGrid<T>,
    connectivity: Connectivity,
    boundary: Boundary,
) -> Result<LabelGrid> {
    let m = Mask::of(grid)?;
    let (labels, cluster_count) = label_mask(&m, connectivity, boundary == Boundary::Periodic);
    Ok(LabelGrid {
        dims: grid.dims().to_vec(),
        labels,
        cluster_count,
    })
}

/// Two-point cluster function: both points in the phase and in one cluster.
///
/// With a periodic boundary the labelling wraps as well.
pub fn c2<T: Scalar>(
    grid: &TextureGrid<T>,
    connectivity: Connectivity,
    max_lag: usize,
    averaging: Averaging,
    boundary: Boundary,
) -> Result<MetricCurve> {
    let m = Mask::of(grid)?;
    let (labels, _) = label_mask(&m, connectivity, boundary == Boundary::Periodic);
    let same = |a: usize, b: usize| labels[a] != 0 && labels[a] == labels[b];
    let values = match averaging.axis3() {
        Some(_) => {
            let axis = m.check_axis(averaging)?;
            check_lag(m.d3[axis], max_lag, boundary)?;
            (0..=max_lag)
                .map(|r| {
                    let (h, p) = directional_pairs(m.d3, axis, r, boundary, same);
                    h as f64 / p as f64
                })
                .collect()
        }
        None => {
            let min_dim = m.d3.iter().copied().filter(|&n| n > 1).min().unwrap_or(1);
            check_lag(min_dim, max_lag, boundary)?;
            c2_radial(&m, &labels, max_lag, boundary)
        }
    };
    Ok(MetricCurve {
        lags: (0..=max_lag).map(|r| r as f64).collect(),
        values,
        porosity: m.porosity(),
        kind: MetricKind::C2,
        averaging,
    })
}

fn c2_radial(m: &Mask, labels: &[u32], max_lag: usize, boundary: Boundary) -> Vec<f64> {
    let d3 = m.d3;
    let reach = |n: usize| if n > 1 { max_lag as i64 } else { 0 };
    let mut sums = vec![0.0; max_lag + 1];
    let mut counts = vec![0u64; max_lag + 1];
    for rz in -reach(d3[0])..=reach(d3[0]) {
        for ry in -reach(d3[1])..=reach(d3[1]) {
            for rx in -reach(d3[2])..=reach(d3[2]) {
                let r = [rz, ry, rx];
                let bin = (r.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt().round() as usize;
                if bin > max_lag {
                    continue;
                }
                let (mut hits, mut pairs) = (0u64, 0u64);
                for z in 0..d3[0] {
                    for y in 0..d3[1] {
                        for x in 0..d3[2] {
                            let pos = [z as i64, y as i64, x as i64];
                            let mut q = [0usize; 3];
                            let mut inside = true;
                            for k in 0..3 {
                                let n = d3[k] as i64;
                                let v = pos[k] + r[k];
                                q[k] = match boundary {
                                    Boundary::Periodic => v.rem_euclid(n) as usize,
                                    Boundary::Truncated if (0..n).contains(&v) => v as usize,
                                    Boundary::Truncated => {
                                        inside = false;
                                        break;
                                    }
                                };
                            }
                            if !inside {
                                continue;
                            }
                            pairs += 1;
                            let a = (z * d3[1] + y) * d3[2] + x;
                            let b = (q[0] * d3[1] + q[1]) * d3[2] + q[2];
                            if labels[a] != 0 && labels[a] == labels[b] {
                                hits += 1;
                            }
                        }
                    }
                }
                sums[bin] += hits as f64 / pairs as f64;
                counts[bin] += 1;
            }
        }
    }
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// Dispatches to the S2 or C2 estimator.
pub fn curve<T: Scalar>(
    grid: &TextureGrid<T>,
    kind: MetricKind,
    averaging: Averaging,
    max_lag: usize,
    boundary: Boundary,
    connectivity: Connectivity,
) -> Result<MetricCurve> {
    match (kind, averaging) {
        (MetricKind::S2, Averaging::RadialIsotropic) => s2_radial(grid, max_lag, boundary, false),
        (MetricKind::S2, _) => s2_directional(grid, averaging, max_lag, boundary),
        (MetricKind::C2, _) => c2(grid, connectivity, max_lag, averaging, boundary),
    }
}

/// Pointwise summary of a set of curves.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleCurve {
    pub kind: MetricKind,
    pub averaging: Averaging,
    pub lags: Vec<f64>,
    pub mean: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub porosity_mean: f64,
    /// Population standard deviation (0 for a single curve).
    pub porosity_std: f64,
    pub members: usize,
}

pub fn ensemble_stats(curves: &[MetricCurve]) -> Result<EnsembleCurve> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Invalid("ensemble of zero curves".into()))?;
    for c in curves {
        if c.lags != first.lags || c.kind != first.kind || c.averaging != first.averaging {
            return Err(Error::Invalid("curves in an ensemble must share lags, kind and averaging".into()));
        }
    }
    let k = curves.len() as f64;
    let n = first.lags.len();
    // Means are shifted by the first member so identical members average exactly.
    let mut mean = vec![0.0; n];
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for c in curves {
        for i in 0..n {
            mean[i] += (c.values[i] - first.values[i]) / k;
            min[i] = min[i].min(c.values[i]);
            max[i] = max[i].max(c.values[i]);
        }
    }
    mean.iter_mut().zip(&first.values).for_each(|(m, f)| *m += f);
    let porosity_mean = first.porosity + curves.iter().map(|c| c.porosity - first.porosity).sum::<f64>() / k;
    let var = curves
        .iter()
        .map(|c| (c.porosity - porosity_mean).powi(2))
        .sum::<f64>()
        / k;
    Ok(EnsembleCurve {
        kind: first.kind,
        averaging: first.averaging,
        lags: first.lags.clone(),
        mean,
        min,
        max,
        porosity_mean,
        porosity_std: var.sqrt(),
        members: curves.len(),
    })
}

impl EnsembleCurve {
    pub fn to_csv(&self) -> String {
        let kind = match self.kind {
            MetricKind::S2 => "S2",
            MetricKind::C2 => "C2",
        };
        let mut s = String::new();
        let _ = writeln!(s, "# kind={kind}");
        let _ = writeln!(s, "# averaging={}", self.averaging.name());
        let _ = writeln!(s, "# porosity_mean={}", self.porosity_mean);
        let _ = writeln!(s, "# porosity_std={}", self.porosity_std);
        s.push_str("r,value_mean,value_min,value_max\n");
        for i in 0..self.lags.len() {
            let _ = writeln!(s, "{},{},{},{}", self.lags[i], self.mean[i], self.min[i], self.max[i]);
        }
        s
    }
}

/// Mean absolute difference of two equally sampled value lists.
pub fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().min(b.len()).max(1) as f64
}
