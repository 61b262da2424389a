//! Deterministic federated-learning simulator for network-level attacks on
//! Federated Averaging and the server-side defenses against them.
//!
//! The crate is organized bottom-up:
//!
//! - [`model`]: dense softmax classifier, local SGD, loss and accuracy.
//! - [`data`]: synthetic data, IDX loading, non-IID client partitioning.
//! - [`protocol`]: the Federated Averaging round loop and aggregation.
//! - [`adversary`]: observation models, loss-difference client
//!   identification and targeted update dropping.
//! - [`poisoning`]: boosted model-replacement updates.
//! - [`defense`]: up-sampling of high-contribution clients.
//! - [`analysis`]: closed-form identification cost and Monte-Carlo checks.
//! - [`harness`]: scenario configs, multi-trial runs, sweeps and metrics.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod analysis;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod model;
pub mod poisoning;
pub mod protocol;
pub mod seed;

pub use error::{Error, Result};
pub use model::{LabeledExample, LocalUpdate, ModelSpec, ParamVector};
