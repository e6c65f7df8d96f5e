//! Conditional diffusion training, progressive distillation with SNR-based
//! loss weighting, and Fréchet-distance evaluation on a synthetic dataset.

pub mod data;
pub mod distill;
pub mod error;
pub mod frechet;
pub mod harness;
pub mod nnet;
pub mod sampler;
pub mod schedule;
pub mod trainer;
pub mod weighting;

pub use error::{Error, Result};
