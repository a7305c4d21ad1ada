//! Mechanics-informed analysis of functional lumen imaging recordings.
//!
//! The pipeline runs in two halves. The mechanics half ([`ingest`],
//! [`calibrate`], [`inverse`], [`metrics`]) turns diameter and distal
//! pressure traces into the wall stiffness, the activation field θ(x, t) and
//! the junction work metrics. The learning half ([`neural`], [`vdl`]) embeds
//! those mechanics into a 30-dimensional landscape built from a small
//! variational autoencoder plus the discrete parameters, and runs the
//! downstream analytics on it. [`synth`] provides a forward simulator used to
//! build synthetic cohorts and round-trip oracles.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod error;
pub mod ingest;
pub mod inverse;
pub mod matrix;
pub mod metrics;
pub mod neural;
pub mod pipeline;
pub mod plot;
pub mod stats;
pub mod synth;
pub mod tridiag;
pub mod vdl;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Number of diameter sensors on the catheter.
pub const N_SENSORS: usize = 16;
/// Side length of the resampled space × time grids fed to the autoencoder.
pub const GRID: usize = 16;
/// Latent dimension of the autoencoder.
pub const LATENT_DIM: usize = 24;
/// Number of discrete mechanics parameters appended to the latent mean.
pub const N_DISCRETE: usize = 6;
/// Dimension of a landscape vector.
pub const VDL_DIM: usize = LATENT_DIM + N_DISCRETE;
