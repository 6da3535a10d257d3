//! Crossmodal transfer of embedding structure.
//!
//! A target-modality encoder (here audio) is trained with a triplet loss on
//! the unit hypersphere, regularized by structure borrowed from a frozen
//! source-modality embedding (here visual): crossmodal triplets, relative
//! centroid distances, or K-Means clusters of identity centroids.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix `f64`.

pub mod clustering;
pub mod data;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mining;
pub mod model;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Dense identity label.
pub type Label = usize;

pub type Embedding = embedding::EmbeddingVector<f64>;
pub type Centroid = embedding::IdentityCentroid<f64>;
pub type Loss = embedding::LossConfig<f64>;
pub type Params = model::EncoderParams<f64>;
pub type Optimizer = model::OptimizerState<f64>;
pub type Config = model::TrainConfig<f64>;
pub type Source = model::TransferSource<f64>;
pub type Trace = clustering::MergeTrace<f64>;
pub type KMeans = clustering::KMeansResult<f64>;
pub type Scores = metrics::ScorePairs<f64>;
