//! Clinical event streams as points in a 4D (content, time, modality, case)
//! space, processed by low-rank relational attention through a hierarchical
//! interaction-and-sampling pipeline, trained with fine-grained
//! self-supervision, and evaluated with entropy-based branch selection.
//!
//! Everything runs on a deterministic f64 tape: identical inputs and seed
//! produce bit-identical outputs, including checkpoints and metric logs.

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod coupling;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod hierarchy;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod params;
pub mod reference;
pub mod relations;
pub mod sampling;
pub mod selfsup;
pub mod selftest;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
