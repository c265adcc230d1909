//! Synthetic binary textures for tests, demos and calibration runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::TAU;

use crate::grids::TextureGrid;
use crate::scalar::Scalar;

/// Shape parameters of [`channel_texture`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub channels: usize,
    /// Channel width in pixels.
    pub width: f64,
    /// Meander amplitude in pixels.
    pub amplitude: f64,
    /// Meander wavelength in pixels.
    pub wavelength: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            channels: 4,
            width: 4.5,
            amplitude: 3.0,
            wavelength: 32.0,
        }
    }
}

/// Meandering horizontal channels (foreground 1) on a background (0).
///
/// Channel centre lines are `y = y_k + A sin(2πx/λ + ψ_k)`, with `y_k` evenly
/// spaced plus jitter and a random common shift, and random phases `ψ_k`. Rows wrap, so the texture is
/// statistically stationary along both axes.
pub fn channel_texture<T: Scalar>(rows: usize, cols: usize, params: ChannelParams, seed: u64) -> TextureGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = rows as f64 / params.channels.max(1) as f64;
    let shift = rng.random_range(0.0..rows as f64);
    let lines: Vec<(f64, f64, f64)> = (0..params.channels)
        .map(|k| {
            let y0 = shift + (k as f64 + 0.5) * spacing + rng.random_range(-0.25..0.25) * spacing;
            let phase = rng.random_range(0.0..TAU);
            let amp = params.amplitude * rng.random_range(0.7..1.3);
            (y0, phase, amp)
        })
        .collect();
    let half = params.width / 2.0;
    let rows_f = rows as f64;
    TextureGrid::binary_from_fn(vec![rows, cols], |i| {
        let (y, x) = ((i / cols) as f64 + 0.5, (i % cols) as f64 + 0.5);
        lines.iter().any(|&(y0, phase, amp)| {
            let c = y0 + amp * (TAU * x / params.wavelength + phase).sin();
            let d = (y - c).rem_euclid(rows_f);
            d.min(rows_f - d) < half
        })
    })
}

/// Independent Bernoulli(`p`) cells.
pub fn bernoulli_texture<T: Scalar>(dims: &[usize], p: f64, seed: u64) -> TextureGrid<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TextureGrid::binary_from_fn(dims.to_vec(), |_| rng.random_bool(p))
}
