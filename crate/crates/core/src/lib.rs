//! Sparse Doppler spectrogram reconstruction from incomplete channel
//! impulse response sequences.

pub mod cli;
pub mod error;
pub mod eval;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod solvers;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
