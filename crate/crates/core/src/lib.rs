//! Benchmark engine for neural mutual information (MI) estimators.
//!
//! Datasets are built so that the true MI between the paired views is known in
//! closed form: correlated Gaussians, composed digit images that share only a
//! set of class bits, and synthetic class-conditional embeddings. Critic
//! networks are trained under six variational bounds and the estimates are
//! scored against the ground truth (bias, variance, MSE).
//!
//! Module map:
//!
//! - [`nn`]: dense matrices, ReLU MLPs with exact backprop, Adam.
//! - [`critics`]: inner, bilinear, separable and joint critics producing a
//!   `K x K` [`critics::ScoreMatrix`].
//! - [`estimators`]: DV, NWJ, InfoNCE, JS, MINE and SMILE losses/estimates.
//! - [`datagen`]: paired-sample generators, binary symmetric channel, IDX and
//!   embedding file formats.
//! - [`harness`]: stepwise training schedule, metric records, summaries.
//!
//! All information quantities are carried in nats internally and converted to
//! bits only when reported.

pub mod critics;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};

/// Converts nats to bits.
#[inline]
pub fn nats_to_bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Converts bits to nats.
#[inline]
pub fn bits_to_nats(bits: f64) -> f64 {
    bits * std::f64::consts::LN_2
}
