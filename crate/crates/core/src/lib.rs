//! Transfer-learning benchmark engine for first-year retention prediction
//! across institutions whose student records never leave their own silo.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: student records, schemas, CSV ingestion, cohort splits, group
//!   partitions and the synthetic universe generator.
//! - [`silo`]: the privacy boundary. Records are only reachable through
//!   silo-scoped operations that return parameters or aggregates.
//! - [`network`]: a small fully connected classifier (extractor, bottleneck
//!   with batch normalisation, two-logit head) with hand-written backprop.
//! - [`training`]: silo-local training, Fisher diagonals and EWC sequential
//!   training.
//! - [`adaptation`]: source-free adaptation (SHOT, TENT, pseudo-labelling).
//! - [`metrics`], [`thresholds`], [`similarity`]: evaluation, decision
//!   policies and contextual similarity/regression.
//! - [`experiment`]: experiment families, the results store and reports.

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![cfg_attr(test, allow(clippy::field_reassign_with_default))]

pub mod adaptation;
pub mod artifact;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod network;
pub mod silo;
pub mod similarity;
pub mod stats;
pub mod thresholds;
pub mod training;

pub use error::{Error, Result};
