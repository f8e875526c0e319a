//! Byzantine-robust federated learning with learnable aggregation weights.
//!
//! The crate simulates a server and `n` clients on a single machine. The
//! server learns a weight per client jointly with the global model; weights
//! live on the sparse unit-capped simplex (entries in `[0, t]`, summing to
//! one, at most `s` nonzero), so misbehaving clients are driven to exactly
//! zero weight.
//!
//! Module map:
//!
//! - [`simplex`]: exact projections onto the capped and sparse capped simplex
//! - [`models`]: logistic regression and ReLU MLPs over a flat parameter vector
//! - [`data`]: IDX loading, synthetic blobs, splitting, non-IID partitioning
//! - [`adversary`]: honest local training and the attack families
//! - [`aggregators`]: baseline robust aggregation rules
//! - [`engine`]: the FedLAW, BSUM and baseline round drivers
//! - [`metrics`]: detection scoring and trace series
//! - [`experiment`]: configuration and end-to-end scenario assembly
//!
//! Client work inside a round runs on rayon when the `parallel` feature is
//! enabled (the default); results are reduced in client-id order, so the
//! output is bit-identical with or without the feature.

// Checks written as `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod aggregators;
pub mod data;
pub mod engine;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod models;
pub mod seed;
pub mod simplex;

pub use error::{Error, Result};
pub use exec::Execution;
