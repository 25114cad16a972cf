//! Pool-based active learning with hard-label, neighborhood-regularized
//! self-training.
//!
//! The crate works on fixed embedding vectors (read from JSONL or generated
//! as Gaussian blobs). Each active-learning round queries a batch, obtains
//! labels from an oracle, retrains a weighted softmax classifier from
//! scratch, optionally self-trains on pseudo-labels, and evaluates on the
//! test split.

pub mod classifier;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod pool;
pub mod query;
pub mod random;
pub mod self_training;
pub mod vector;

pub use classifier::{train_weighted, Prediction, ProbModel};
pub use config::{ClassifierConfig, ClassifierKind, ExperimentConfig, QueryModel, QueryStrategy, SelfTrainingMethod};
pub use data::{generate_blobs, load_dataset, Dataset, Instance, LoadOptions, Metric};
pub use engine::{
    aggregate_runs, run_active_learning, run_experiment, simulated_oracle, ActiveLearner, CurvePoint,
    LearningCurve, Oracle, OracleError, Phase, RunAggregate, SimulatedOracle,
};
pub use error::{Error, Result};
pub use pool::{init_pools, subsample_unlabeled, LabelRecord, PoolState, Provenance};
pub use query::QueryResult;
