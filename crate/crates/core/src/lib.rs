//! Explainable microseismic event detection.

pub mod bench;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod gate;
pub mod gradcam;
pub mod model;
pub mod plot;
pub mod shapley;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod weights;
pub mod window;

pub use error::{Error, Result};
