//! Graph fuzzy system for graph classification.
//!
//! The model is a rule base over graphs: each rule pairs a *graph fuzzy set*
//! (membership by propagation-kernel similarity to a prototype graph) with a
//! *graph consequent processing unit* (a 3-layer GNN, sum readout and 3-layer
//! MLP). Rule antecedents come from kernel K-prototype clustering; consequent
//! parameters are trained end-to-end under the fuzzy weighted-fusion decision
//! function with Adam, learning-rate decay and early stopping.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are the double-precision defaults used by the CLI and
//! the file formats.

pub mod antecedent;
pub mod autodiff;
mod bytes;
pub mod cluster;
pub mod error;
pub mod gcpu;
pub mod graph;
pub mod kernel;
pub mod scalar;
pub mod sparse;
pub mod synth;
pub mod trainer;
pub mod tu;

pub use error::{GfsError, Result};
pub use scalar::Scalar;

/// Double-precision graph.
pub type Graph64 = graph::Graph<f64>;
/// Double-precision dataset.
pub type GraphDataset64 = graph::GraphDataset<f64>;
/// Double-precision block-diagonal batch.
pub type BatchedGraph64 = graph::BatchedGraph<f64>;
/// Double-precision rule base.
pub type RuleBase64 = antecedent::RuleBase<f64>;
/// Double-precision fused model.
pub type GfsModel64 = gcpu::GfsModel<f64>;
