//! Parameter-subspace laboratory: train N models in parallel under a
//! cosine-distance regularizer, interpolate inside the resulting subspace,
//! and probe how the compressed geometry behaves under distribution shift.
//!
//! The crate is organized around the data flow of an experiment:
//!
//! - [`tensor`], [`model`], [`params`], [`nn`] — dense/conv forward passes,
//!   reverse-mode gradients, and flat parameter-vector geometry.
//! - [`task`], [`shift`] — datasets, seeded perturbation generators, and
//!   input-space interpolation.
//! - [`attack`], [`trainer`] — PGD and the four baseline training regimes.
//! - [`subspace`], [`inference`], [`landscape`], [`probes`] — compressed
//!   subspace training, the five inference modes, loss-landscape grids, and
//!   the co-direction / nearest-point probes.
//! - [`hypernet`] — the distance-regularized hypernetwork continual learner.
//! - [`checkpoint`], [`bench`] — on-disk formats and the seeded synthetic
//!   benchmark used by the comparative tests.

pub mod attack;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod hypernet;
pub mod inference;
pub mod landscape;
pub mod model;
pub mod nn;
pub mod params;
pub mod probes;
pub mod rng;
pub mod shift;
pub mod subspace;
pub mod task;
pub mod tensor;
pub mod trainer;

pub use error::CoreError;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
