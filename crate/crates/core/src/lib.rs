//! Triplet-loss metric learning at desk scale.
//!
//! The crate covers the full pipeline: P×K batch sampling from a labeled
//! dataset, a small dense embedder with L2-normalized output, squared
//! Euclidean distance matrices, five batch mining strategies, triplet loss
//! with analytic gradients, Adagrad, online / offline / semi-online feature
//! pools, and pair-verification evaluation on synthetic identities.

pub mod error;
pub mod eval;
pub mod features;
pub mod mining;
pub mod model;
pub mod pool;
pub mod sampler;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
pub use features::{l2_normalize, pairwise_squared_distances, DistanceMatrix, FeatureMatrix};
pub use mining::{mine, MiningConfig, Strategy, Triplet};
pub use model::{Embed, EmbedderParams, SoftmaxHead};
pub use sampler::{LabeledDataset, PkConfig, PkSampler};
