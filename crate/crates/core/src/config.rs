//! Experiment configuration.
//!
//! Field names double as the JSON config schema; any field left out of a
//! config document takes its default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

macro_rules! string_enum {
    ($name:ident, $kind:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::UnknownVariant {
                        kind: $kind,
                        value: other.to_string(),
                        expected: [$($text),+].join(", "),
                    }),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryStrategy {
    Random,
    BreakingTies,
    ContrastivePredictions,
}

string_enum!(QueryStrategy, "query strategy", {
    Random => "random",
    BreakingTies => "breaking-ties",
    ContrastivePredictions => "contrastive-predictions",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelfTrainingMethod {
    None,
    Hast,
    Verips,
    Threshold,
}

string_enum!(SelfTrainingMethod, "self-training method", {
    None => "none",
    Hast => "hast",
    Verips => "verips",
    Threshold => "threshold",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    LogisticRegression,
    NearestCentroid,
}

string_enum!(ClassifierKind, "classifier", {
    LogisticRegression => "logistic-regression",
    NearestCentroid => "nearest-centroid",
});

/// Which model the query strategy consults after a self-training round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QueryModel {
    /// The self-trained model, which is also the one evaluated.
    SelfTrained,
    /// The model trained on human labels only.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Softmax sharpness of the nearest-centroid model.
    pub temperature: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::LogisticRegression,
            learning_rate: 0.5,
            epochs: 300,
            temperature: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed_size: usize,
    pub num_queries: usize,
    pub batch_size: usize,
    pub query_strategy: QueryStrategy,
    pub self_training: SelfTrainingMethod,
    /// Neighbors in the pseudo-label KNN vote.
    pub k: usize,
    /// Down-weighting factor applied to every pseudo-label.
    pub beta: f64,
    /// Replace the fixed `beta` by the labeled-to-unlabeled pool size ratio.
    pub dynamic_beta: bool,
    /// Set to false to fix every class-balance factor to 1.
    pub class_weighting: bool,
    /// Set to false to use `beta = 1`.
    pub pseudo_down_weighting: bool,
    pub self_train_iterations: usize,
    pub subsample_size: usize,
    pub label_noise: f64,
    /// Apply label noise to the seed set as well as to queried batches.
    pub noisy_seed: bool,
    pub stratified_seed: bool,
    pub rng_seed: u64,
    pub num_runs: usize,
    /// Labeled neighbors per candidate for contrastive predictions.
    pub contrastive_neighbors: usize,
    /// Margin threshold of the verified pseudo-label baseline.
    pub verips_threshold: f64,
    pub query_model: QueryModel,
    /// Include model predictions when serving a batch to an annotator.
    pub reveal_predictions: bool,
    pub classifier: ClassifierConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed_size: 30,
            num_queries: 10,
            batch_size: 10,
            query_strategy: QueryStrategy::BreakingTies,
            self_training: SelfTrainingMethod::Hast,
            k: 5,
            beta: 0.1,
            dynamic_beta: false,
            class_weighting: true,
            pseudo_down_weighting: true,
            self_train_iterations: 1,
            subsample_size: 16384,
            label_noise: 0.0,
            noisy_seed: false,
            stratified_seed: false,
            rng_seed: 0,
            num_runs: 5,
            contrastive_neighbors: 10,
            verips_threshold: 0.9,
            query_model: QueryModel::SelfTrained,
            reveal_predictions: false,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Total number of human labels a run consumes.
    pub fn budget(&self) -> usize {
        self.seed_size + self.num_queries * self.batch_size
    }

    pub fn validate(&self, train_size: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.budget() > train_size {
            return fail(format!(
                "labeling budget of {} (seed_size {} + {} queries x {}) exceeds the {} training instances",
                self.budget(),
                self.seed_size,
                self.num_queries,
                self.batch_size,
                train_size
            ));
        }
        if self.seed_size == 0 {
            return fail("seed_size must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return fail(format!("beta must lie in (0, 1], got {}", self.beta));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return fail(format!(
                "label_noise must lie in [0, 1), got {}",
                self.label_noise
            ));
        }
        if self.self_train_iterations == 0 {
            return fail("self_train_iterations must be at least 1".into());
        }
        if self.subsample_size == 0 {
            return fail("subsample_size must be at least 1".into());
        }
        if self.num_runs == 0 {
            return fail("num_runs must be at least 1".into());
        }
        if self.contrastive_neighbors == 0 {
            return fail("contrastive_neighbors must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.verips_threshold) {
            return fail("verips_threshold must lie in [0, 1]".into());
        }
        let c = &self.classifier;
        if !(c.learning_rate > 0.0 && c.learning_rate.is_finite()) {
            return fail("classifier.learning_rate must be positive".into());
        }
        if !(c.temperature > 0.0 && c.temperature.is_finite()) {
            return fail("classifier.temperature must be positive".into());
        }
        Ok(())
    }

    /// Hash of every setting except the RNG seed. Runs that differ only in
    /// their seed share a fingerprint.
    pub fn fingerprint(&self) -> String {
        let mut canonical = self.clone();
        canonical.rng_seed = 0;
        canonical.num_runs = 0;
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
