//! Federated learning simulator built around client co-distillation.
//!
//! Clients train LeNet-style classifiers on class-imbalanced shards. Under
//! co-distillation each student pulls a randomly chosen teacher's averaged
//! logits for the teacher's majority class and adds an MSE term to its
//! cross-entropy loss; no parameters are exchanged. FedAvg, FedDistill and
//! FedProto are provided as baselines, together with a seeded skew
//! partitioner, minority-class metrics and a grid experiment runner.

pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
