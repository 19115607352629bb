//! Few-shot tabular learning from self-generated tasks.
//!
//! The pipeline has two stages. First, an MLP encoder is meta-trained as a
//! prototypical network on classification tasks generated from an unlabeled
//! table: a random subset of columns is clustered with k-means to obtain
//! pseudo-labels, and those columns are corrupted in the inputs so the labels
//! cannot be read off directly. Hyperparameters and the stopping point are
//! chosen with a pseudo-validation task built the same way from held-out
//! unlabeled rows. Second, the frozen encoder is adapted to a real few-shot
//! labeled set, either as a prototype classifier or as a kNN regressor.
//!
//! Modules, bottom-up:
//!
//! - [`tabular`]: CSV loading, one-hot encoding, scaling and dataset splits.
//! - [`kmeans`]: Lloyd's algorithm with k-means++ seeding.
//! - [`tasks`]: mask sampling, corruption, task and episode construction.
//! - [`protonet`]: the encoder, prototype classifier, loss gradients, Adam.
//! - [`trainer`]: the meta-training loop, pseudo-validation, grid search.
//! - [`eval`]: few-shot adaptation and the multi-seed evaluation protocol.

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod kmeans;
pub mod protonet;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod tabular;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
