//! Adversarial synthesis of binary 2D/3D earth textures.
//!
//! A generator is trained either against a whole-image discriminator (DCGAN)
//! or against a discriminator that scores overlapping segments of the
//! generated image, combining the per-segment log-probabilities into one
//! assembled loss (SAGAN). The segment-based discriminator decouples the
//! discriminator from the output size, so a trained generator can be run on a
//! larger latent lattice to produce arbitrarily large realizations.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool (`f32`) and by
//! reference computations such as gradient checks (`f64`).

pub mod cli;
pub mod config;
pub mod error;
pub mod grids;
pub mod nets;
pub mod nn;
pub mod metrics;
pub mod optim;
pub mod procedural;
pub mod synthesis;
pub mod checkpoint;
pub mod training;
pub mod scalar;
pub mod segmentation;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Grid = grids::TextureGrid<f32>;
pub type Grid64 = grids::TextureGrid<f64>;
pub type Generator32 = nets::Generator<f32>;
pub type Generator64 = nets::Generator<f64>;
pub type Discriminator32 = nets::Discriminator<f32>;
pub type Discriminator64 = nets::Discriminator<f64>;
