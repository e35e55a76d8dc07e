//! Graph anomaly detection with a local-global graph Transformer encoder,
//! a prototype memory of normal nodes, and multi-scale reconstruction.
//!
//! The usual entry points are [`config::RunConfig`] to describe a run,
//! [`model::PreparedGraph`] to precompute graph-side inputs, and
//! [`train::train`] to fit a model and score every node.

pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sweep;
pub mod train;

pub use error::{Error, Result};
