//! Intervention GANs at desk scale.
//!
//! A small, dependency-light stack: a reverse-mode tape over dense `f64`
//! tensors, Gaussian-invariant latent interventions, exact and Monte-Carlo
//! multi-distribution Jensen–Shannon oracles, MLP encoder/generator/
//! discriminator/classifier networks, the adversarial, intervention and
//! reconstruction losses, the alternating trainer with Adam, and synthetic
//! mode-collapse benchmarks.

pub mod benchmarks;
pub mod checks;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod interventions;
pub mod losses;
pub mod networks;
pub mod stats;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
