//! Learning max-weight bipartite matching predictors by MAP estimation in an
//! exponential family over permutations.
//!
//! The partition function of the model is the permanent of the matrix of
//! exponentiated edge weights. Small graphs get exact inference (enumeration,
//! Ryser's formula and minor permanents); large graphs use an exact
//! accept–reject sampler. A learning-to-rank instantiation with NDCG
//! evaluation and a synthetic point-matching benchmark sit on top.

pub mod error;
pub mod inference;
pub mod matchbench;
pub mod model_file;
pub mod permanent;
pub mod ranking;
pub mod sampler;
pub mod training;
pub mod types;

pub use error::{Error, Result};
pub use inference::{expectation_exact, log_partition, predict_matching, ExpectationStrategy, InferenceLimits};
pub use model_file::{CFn, ModelFile};
pub use permanent::LogWeightMatrix;
pub use sampler::{BoundKind, SampleBatch};
pub use training::{InferenceMode, TrainConfig, TrainReport};
pub use types::{
    log_weights, sufficient_statistics, Document, EdgeFeatureTensor, Matching, ModelParams, QuerySet, TrainingSet,
};
