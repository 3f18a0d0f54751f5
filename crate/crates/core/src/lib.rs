//! Visually-grounded concept selection and concept-bottleneck classification.
//!
//! The pipeline works entirely in a shared image/text embedding space:
//!
//! 1. [`embedding`], [`dataset`] and [`pool`] load image embeddings, labels and a per-class pool
//!    of candidate concept texts with their embeddings.
//! 2. [`scoring`] computes, for every candidate, how discriminative it is across classes and how
//!    much its similarity varies over an unlabeled target image set (its visual activation).
//! 3. [`selection`] greedily picks `k` concepts per class under a submodular objective that
//!    rewards discriminability, coverage of the class pool, and visual activation.
//! 4. [`bottleneck`] trains a linear map from concept scores to class logits and explains
//!    predictions by per-concept influence.

pub mod bottleneck;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod pool;
pub mod scoring;
pub mod selection;

pub use bottleneck::{BottleneckModel, TrainConfig};
pub use dataset::{few_shot_sample, LabelFile, LabeledImageSet, Shots};
pub use embedding::EmbeddingMatrix;
pub use error::{Error, ErrorKind, Result};
pub use pool::{union_subset, ConceptPool, ConceptSubset};
pub use scoring::{PoolScores, ScoreTable};
pub use selection::{greedy_select, select_all, SelectionConfig};
