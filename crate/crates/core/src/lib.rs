//! Noise-robust training by per-class coreset selection.
//!
//! Each epoch, every (predicted) class is summarised by a weighted set of
//! medoids chosen greedily under a facility-location objective over
//! last-layer gradient features. Training then runs on mixup combinations of
//! each medoid with members of its cluster.

pub mod coreset;
pub mod data;
pub mod error;
pub mod mixup;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod spectrum;
pub mod trainer;
pub mod verify;

pub use coreset::{greedy_select, lazy_greedy_select, stochastic_greedy_select, Coreset, DissimilarityMatrix};
pub use data::{generate_clusterable, NoisyDataset, SyntheticSpec};
pub use error::{CrustError, Result};
pub use mixup::{mix_all, MixedBatch, MixupParams};
pub use model::MlpModel;
pub use numerics::{Matrix, Rng};
pub use trainer::{train, train_with, EpochMetrics, GreedyVariant, Mode, Partition, TrainConfig, TrainOutcome};
