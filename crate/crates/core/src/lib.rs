//! Parallel training of several classification tasks on one module-grid
//! network.
//!
//! Every task owns a path through the grid (a subset of the modules in each
//! layer) and a contiguous slice of the output layer. Tasks whose paths
//! overlap share, and jointly train, the overlapping modules. The crate also
//! provides the sequential-with-freezing and single-task baselines, and the
//! CKA tooling used to compare what different tasks learn in shared and
//! private modules.
//!
//! Module map:
//! - [`numerics`]: dense matrices, Adam, sliced softmax cross-entropy,
//!   finite-difference gradient checking.
//! - [`modular_net`]: the module grid, paths, per-task normalization,
//!   forward/backward restricted to a path, freezing, checkpoints.
//! - [`data`]: synthetic Gaussian tasks, CSV ingestion, oversampling, batching.
//! - [`training`]: the epoch scheduler and the parallel, sequential and
//!   single-task procedures.
//! - [`analysis`]: module-sharing profiles, HSIC/CKA, activation capture.
//! - [`experiment`]: config-driven runs, report comparison, checkpoint analysis.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod data;
pub mod error;
pub mod experiment;
pub mod modular_net;
pub mod numerics;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
