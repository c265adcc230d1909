//! Minimal convolutional network engine: geometry, parameters, layers.

pub mod geometry;
pub mod layers;
pub mod params;

pub use geometry::ConvGeometry;
pub use layers::{Activations, Mode, Tape};
pub use params::{NetParams, ParamTensor};
