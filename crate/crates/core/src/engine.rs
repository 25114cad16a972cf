//! The active-learning loop.
//!
//! [`ActiveLearner`] is a step-wise state machine so the same code drives
//! both simulated runs and live annotation sessions:
//!
//! ```text
//! AwaitingLabels --accept_labels--> Training --step--> SelfTraining
//!       ^                                                   |
//!       |                                                 step
//!       +------ step (query next batch) ---- Evaluating <---+
//! ```
//!
//! The first pending batch is the seed set. Each completed batch yields one
//! curve point, so a run with `Q` queries produces `Q + 1` points.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbModel;
use crate::config::{ExperimentConfig, QueryModel, QueryStrategy};
use crate::data::{Dataset, Metric};
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate, normalized_auc, sample_std};
use crate::pool::{draw_seed_ids, subsample_ids, PoolState};
use crate::query::{query_breaking_ties, query_contrastive, query_random, QueryResult};
use crate::random::{self, Rng, Stream};
use crate::self_training::{self_train, train_supervised, SelfTrainRound};

/// Returns the true label with probability `1 - noise`, otherwise a label
/// drawn uniformly from the other `num_classes - 1` classes.
pub fn simulated_oracle(true_label: usize, num_classes: usize, noise: f64, rng: &mut Rng) -> usize {
    let flip = rng.random::<f64>() < noise;
    if !flip || num_classes < 2 {
        return true_label;
    }
    let other = rng.random_range(0..num_classes - 1);
    if other >= true_label {
        other + 1
    } else {
        other
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleError {
    Timeout,
    Aborted(String),
}

/// Source of human labels.
pub trait Oracle {
    /// Labels for `ids`, in order. `batch_index` is 0 for the seed batch.
    fn label(
        &mut self,
        dataset: &Dataset,
        ids: &[usize],
        batch_index: usize,
    ) -> std::result::Result<Vec<usize>, OracleError>;
}

/// Ground truth, optionally corrupted by uniform label noise.
pub struct SimulatedOracle {
    noise: f64,
    noisy_seed: bool,
    rng: Rng,
}

impl SimulatedOracle {
    pub fn new(noise: f64, noisy_seed: bool, seed: u64) -> Self {
        Self {
            noise,
            noisy_seed,
            rng: random::stream(seed, Stream::Oracle),
        }
    }

    pub fn for_config(config: &ExperimentConfig) -> Self {
        Self::new(config.label_noise, config.noisy_seed, config.rng_seed)
    }
}

impl Oracle for SimulatedOracle {
    fn label(
        &mut self,
        dataset: &Dataset,
        ids: &[usize],
        batch_index: usize,
    ) -> std::result::Result<Vec<usize>, OracleError> {
        let noise = if batch_index == 0 && !self.noisy_seed {
            0.0
        } else {
            self.noise
        };
        Ok(ids
            .iter()
            .map(|&id| {
                simulated_oracle(dataset.train(id).true_label, dataset.num_classes, noise, &mut self.rng)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub score: f64,
    pub pseudo_count: usize,
    pub query_ids: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub self_training: Vec<SelfTrainRound>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub metric: Metric,
    pub config_fingerprint: String,
    pub rng_seed: u64,
    pub points: Vec<CurvePoint>,
    /// Set when the oracle stopped answering before the budget was spent.
    #[serde(default)]
    pub truncated: bool,
}

impl LearningCurve {
    pub fn final_score(&self) -> Option<f64> {
        self.points.last().map(|p| p.score)
    }

    pub fn auc(&self) -> Result<f64> {
        let xy: Vec<(f64, f64)> = self
            .points
            .iter()
            .map(|p| (p.labeled_count as f64, p.score))
            .collect();
        normalized_auc(&xy)
    }

    pub fn pseudo_counts(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.pseudo_count).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("labeled_count,score,pseudo_count\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.labeled_count, p.score, p.pseudo_count));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub num_runs: usize,
    pub config_fingerprint: String,
    pub labeled_counts: Vec<usize>,
    pub mean_scores: Vec<f64>,
    pub final_mean: f64,
    pub final_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub mean_pseudo_counts: Vec<f64>,
    /// A single run has no spread; its standard deviations are reported as 0.
    pub single_run: bool,
    pub curves: Vec<LearningCurve>,
}

/// Means and sample standard deviations across runs of one configuration.
pub fn aggregate_runs(curves: Vec<LearningCurve>) -> Result<RunAggregate> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Metric("no curves to aggregate".into()))?;
    let fingerprint = first.config_fingerprint.clone();
    let labeled_counts: Vec<usize> = first.points.iter().map(|p| p.labeled_count).collect();
    for c in &curves {
        if c.config_fingerprint != fingerprint {
            return Err(Error::ConfigMismatch(fingerprint, c.config_fingerprint.clone()));
        }
        let counts: Vec<usize> = c.points.iter().map(|p| p.labeled_count).collect();
        if counts != labeled_counts {
            return Err(Error::Metric("curves have different labeled-count sequences".into()));
        }
    }
    let finals: Vec<f64> = curves.iter().map(|c| c.final_score().unwrap_or(0.0)).collect();
    let aucs: Vec<f64> = if labeled_counts.len() >= 2 {
        curves.iter().map(|c| c.auc()).collect::<Result<_>>()?
    } else {
        finals.clone()
    };
    let per_point = |f: &dyn Fn(&CurvePoint) -> f64| -> Vec<f64> {
        (0..labeled_counts.len())
            .map(|i| metrics::mean(&curves.iter().map(|c| f(&c.points[i])).collect::<Vec<_>>()))
            .collect()
    };
    let mean_scores = per_point(&|p| p.score);
    let mean_pseudo_counts = per_point(&|p| p.pseudo_count as f64);
    if curves.len() == 1 {
        tracing::warn!("aggregating a single run; standard deviations are 0 by convention");
    }
    Ok(RunAggregate {
        num_runs: curves.len(),
        config_fingerprint: fingerprint,
        labeled_counts,
        mean_scores,
        final_mean: metrics::mean(&finals),
        final_std: sample_std(&finals),
        auc_mean: metrics::mean(&aucs),
        auc_std: sample_std(&aucs),
        mean_pseudo_counts,
        single_run: curves.len() == 1,
        curves,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingLabels,
    Training,
    SelfTraining,
    Evaluating,
    Done,
}

/// One active-learning run over a dataset.
pub struct ActiveLearner {
    dataset: Arc<Dataset>,
    config: ExperimentConfig,
    pool: PoolState,
    phase: Phase,
    batch_index: usize,
    pending: QueryResult,
    supervised: Option<ProbModel>,
    current: Option<ProbModel>,
    last_rounds: Vec<SelfTrainRound>,
    last_pseudo: usize,
    curve: LearningCurve,
    query_rng: Rng,
    subsample_rng: Rng,
}

impl ActiveLearner {
    /// Validates the config and draws the seed batch, which becomes the
    /// first pending query.
    pub fn new(dataset: Arc<Dataset>, config: ExperimentConfig) -> Result<Self> {
        config.validate(dataset.train_len())?;
        if dataset.test_instances.is_empty() {
            return Err(Error::InvalidDataset("dataset has no test split".into()));
        }
        let seed = config.rng_seed;
        let mut seed_rng = random::stream(seed, Stream::Seed);
        let seed_ids = draw_seed_ids(&dataset, config.seed_size, config.stratified_seed, &mut seed_rng)?;
        let curve = LearningCurve {
            metric: dataset.metric,
            config_fingerprint: config.fingerprint(),
            rng_seed: seed,
            points: Vec::new(),
            truncated: false,
        };
        Ok(Self {
            pool: PoolState::all_unlabeled(0..dataset.train_len()),
            phase: Phase::AwaitingLabels,
            batch_index: 0,
            pending: QueryResult {
                scores: vec![0.0; seed_ids.len()],
                ids: seed_ids,
            },
            supervised: None,
            current: None,
            last_rounds: Vec::new(),
            last_pseudo: 0,
            curve,
            query_rng: random::stream(seed, Stream::Query),
            subsample_rng: random::stream(seed, Stream::Subsample),
            dataset,
            config,
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn pool(&self) -> &PoolState {
        &self.pool
    }

    /// 0 while the seed batch is pending, then 1, 2, ...
    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    pub fn pending(&self) -> Option<&QueryResult> {
        (self.phase == Phase::AwaitingLabels).then_some(&self.pending)
    }

    pub fn curve(&self) -> &LearningCurve {
        &self.curve
    }

    pub fn into_curve(self) -> LearningCurve {
        self.curve
    }

    /// The model that was evaluated last (self-trained when enabled).
    pub fn current_model(&self) -> Option<&ProbModel> {
        self.current.as_ref()
    }

    pub fn mark_truncated(&mut self) {
        self.curve.truncated = true;
    }

    /// Adds a complete set of labels for the pending batch to the labeled pool.
    pub fn accept_labels(&mut self, labels: &[(usize, usize)]) -> Result<()> {
        if self.phase != Phase::AwaitingLabels {
            return Err(Error::NotAwaitingLabels);
        }
        let mut by_id = BTreeMap::new();
        for &(id, label) in labels {
            if !self.pending.ids.contains(&id) {
                return Err(Error::NotUnlabeled(id));
            }
            if label >= self.dataset.num_classes {
                return Err(Error::LabelOutOfRange {
                    line: 0,
                    label,
                    num_classes: self.dataset.num_classes,
                });
            }
            if by_id.insert(id, label).is_some() {
                return Err(Error::AlreadyLabeled(id));
            }
        }
        if by_id.len() != self.pending.ids.len() {
            return Err(Error::InvalidConfig(format!(
                "batch needs {} labels, got {}",
                self.pending.ids.len(),
                by_id.len()
            )));
        }
        for &id in &self.pending.ids {
            self.pool.add_human(id, by_id[&id])?;
        }
        self.phase = Phase::Training;
        Ok(())
    }

    /// Runs the next stage after labels were accepted and returns the new phase.
    pub fn step(&mut self) -> Result<Phase> {
        match self.phase {
            Phase::Training => {
                let model = train_supervised(&self.dataset, self.pool.labeled(), &self.config.classifier)?;
                self.supervised = Some(model);
                self.phase = Phase::SelfTraining;
            }
            Phase::SelfTraining => {
                let supervised = self.supervised.as_ref().expect("trained before self-training");
                let outcome = self_train(
                    &self.dataset,
                    &self.pool,
                    supervised,
                    &self.config,
                    &mut self.subsample_rng,
                )?;
                self.last_pseudo = outcome.pseudo_count();
                self.last_rounds = outcome.rounds;
                self.current = Some(outcome.model);
                self.phase = Phase::Evaluating;
            }
            Phase::Evaluating => {
                let model = self.current.as_ref().expect("model before evaluation");
                let score = evaluate(model, &self.dataset.test_instances, self.dataset.metric)?;
                self.curve.points.push(CurvePoint {
                    labeled_count: self.pool.human_count(),
                    score,
                    pseudo_count: self.last_pseudo,
                    query_ids: std::mem::take(&mut self.pending.ids),
                    self_training: std::mem::take(&mut self.last_rounds),
                });
                if self.batch_index >= self.config.num_queries {
                    self.pending = QueryResult::default();
                    self.phase = Phase::Done;
                } else {
                    self.pending = self.query()?;
                    self.batch_index += 1;
                    self.phase = Phase::AwaitingLabels;
                }
            }
            Phase::AwaitingLabels | Phase::Done => {}
        }
        Ok(self.phase)
    }

    /// Steps until labels are needed again or the run is finished.
    pub fn advance(&mut self) -> Result<Phase> {
        while matches!(self.phase, Phase::Training | Phase::SelfTraining | Phase::Evaluating) {
            self.step()?;
        }
        Ok(self.phase)
    }

    fn query(&mut self) -> Result<QueryResult> {
        let mut candidates = self.pool.unlabeled_ids();
        if candidates.len() > self.config.subsample_size {
            tracing::info!(
                unlabeled = candidates.len(),
                subsample = self.config.subsample_size,
                "subsampling query candidates"
            );
            candidates = subsample_ids(&candidates, self.config.subsample_size, &mut self.subsample_rng);
        }
        let model = match self.config.query_model {
            QueryModel::SelfTrained => self.current.as_ref(),
            QueryModel::Supervised => self.supervised.as_ref(),
        }
        .expect("model trained before querying");
        let batch = self.config.batch_size;
        match self.config.query_strategy {
            QueryStrategy::Random => Ok(query_random(&candidates, batch, &mut self.query_rng)),
            QueryStrategy::BreakingTies => query_breaking_ties(model, &self.dataset, &candidates, batch),
            QueryStrategy::ContrastivePredictions => query_contrastive(
                model,
                &self.dataset,
                self.pool.labeled(),
                &candidates,
                batch,
                self.config.contrastive_neighbors,
            ),
        }
    }
}

/// Runs the whole loop against `oracle`, using `config.rng_seed` as the
/// run seed. An oracle that gives up yields a truncated curve.
pub fn run_active_learning(
    dataset: Arc<Dataset>,
    config: &ExperimentConfig,
    oracle: &mut dyn Oracle,
) -> Result<LearningCurve> {
    let mut learner = ActiveLearner::new(dataset, config.clone())?;
    while let Some(pending) = learner.pending() {
        let ids = pending.ids.clone();
        let labels = match oracle.label(learner.dataset(), &ids, learner.batch_index()) {
            Ok(labels) => labels,
            Err(e) => {
                tracing::warn!(?e, "oracle stopped; returning a truncated curve");
                learner.mark_truncated();
                break;
            }
        };
        let pairs: Vec<(usize, usize)> = ids.into_iter().zip(labels).collect();
        learner.accept_labels(&pairs)?;
        learner.advance()?;
    }
    Ok(learner.into_curve())
}

/// `config.num_runs` simulated runs with seeds `rng_seed, rng_seed + 1, ...`,
/// executed in parallel and aggregated in seed order.
pub fn run_experiment(dataset: Arc<Dataset>, config: &ExperimentConfig) -> Result<RunAggregate> {
    config.validate(dataset.train_len())?;
    let curves = (0..config.num_runs as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = ExperimentConfig {
                rng_seed: config.rng_seed.wrapping_add(r),
                ..config.clone()
            };
            let mut oracle = SimulatedOracle::for_config(&cfg);
            run_active_learning(dataset.clone(), &cfg, &mut oracle)
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_runs(curves)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ClassifierConfig, SelfTrainingMethod};
    use crate::data::generate_blobs;

    fn quick_config() -> ExperimentConfig {
        ExperimentConfig {
            seed_size: 10,
            num_queries: 3,
            batch_size: 5,
            classifier: ClassifierConfig {
                epochs: 60,
                ..ClassifierConfig::default()
            },
            rng_seed: 3,
            ..ExperimentConfig::default()
        }
    }

    fn blobs() -> Arc<Dataset> {
        Arc::new(generate_blobs(3, 60, 6, 5.0, 2).unwrap())
    }

    #[test]
    fn noise_free_oracle_is_ground_truth() {
        let mut rng = random::seeded(0);
        for t in 0..4 {
            for _ in 0..100 {
                assert_eq!(simulated_oracle(t, 4, 0.0, &mut rng), t);
            }
        }
    }

    #[test]
    fn binary_noise_flips_to_the_other_class() {
        let mut rng = random::seeded(1);
        for _ in 0..1000 {
            let y = simulated_oracle(0, 2, 0.5, &mut rng);
            assert!(y == 0 || y == 1);
        }
        let flips = (0..2000).filter(|_| simulated_oracle(1, 2, 0.5, &mut rng) == 0).count();
        assert!(flips > 800 && flips < 1200);
    }

    #[test]
    fn curve_shape_and_budget() {
        let ds = blobs();
        let cfg = quick_config();
        let curve = run_active_learning(ds, &cfg, &mut SimulatedOracle::for_config(&cfg)).unwrap();
        let counts: Vec<usize> = curve.points.iter().map(|p| p.labeled_count).collect();
        assert_eq!(counts, vec![10, 15, 20, 25]);
        assert_eq!(curve.points[0].query_ids.len(), 10);
        assert!(curve.points[1..].iter().all(|p| p.query_ids.len() == 5));
        assert!(!curve.truncated);
    }

    #[test]
    fn no_self_training_has_zero_pseudo_labels() {
        let cfg = ExperimentConfig {
            self_training: SelfTrainingMethod::None,
            ..quick_config()
        };
        let curve = run_active_learning(blobs(), &cfg, &mut SimulatedOracle::for_config(&cfg)).unwrap();
        assert!(curve.points.iter().all(|p| p.pseudo_count == 0));
    }

    #[test]
    fn zero_queries_gives_single_point() {
        let cfg = ExperimentConfig {
            num_queries: 0,
            ..quick_config()
        };
        let curve = run_active_learning(blobs(), &cfg, &mut SimulatedOracle::for_config(&cfg)).unwrap();
        assert_eq!(curve.points.len(), 1);
        assert_eq!(curve.points[0].labeled_count, 10);
    }

    #[test]
    fn query_ids_are_fresh_and_unique() {
        for strategy in QueryStrategy::ALL {
            let cfg = ExperimentConfig {
                query_strategy: *strategy,
                ..quick_config()
            };
            let curve = run_active_learning(blobs(), &cfg, &mut SimulatedOracle::for_config(&cfg)).unwrap();
            let mut all: Vec<usize> = curve.points.iter().flat_map(|p| p.query_ids.clone()).collect();
            let n = all.len();
            all.sort();
            all.dedup();
            assert_eq!(all.len(), n, "{strategy}");
        }
    }

    struct GivesUp(usize);

    impl Oracle for GivesUp {
        fn label(
            &mut self,
            dataset: &Dataset,
            ids: &[usize],
            batch_index: usize,
        ) -> std::result::Result<Vec<usize>, OracleError> {
            if batch_index >= self.0 {
                return Err(OracleError::Timeout);
            }
            Ok(ids.iter().map(|&i| dataset.train(i).true_label).collect())
        }
    }

    #[test]
    fn oracle_timeout_truncates() {
        let cfg = quick_config();
        let curve = run_active_learning(blobs(), &cfg, &mut GivesUp(2)).unwrap();
        assert!(curve.truncated);
        assert_eq!(curve.points.len(), 2);
    }

    #[test]
    fn accept_labels_validation() {
        let mut learner = ActiveLearner::new(blobs(), quick_config()).unwrap();
        let ids = learner.pending().unwrap().ids.clone();
        let partial: Vec<(usize, usize)> = ids[..3].iter().map(|&i| (i, 0)).collect();
        assert!(learner.accept_labels(&partial).is_err());
        let bad: Vec<(usize, usize)> = ids.iter().map(|&i| (i, 3)).collect();
        assert!(matches!(learner.accept_labels(&bad), Err(Error::LabelOutOfRange { .. })));
        let good: Vec<(usize, usize)> = ids.iter().map(|&i| (i, 0)).collect();
        learner.accept_labels(&good).unwrap();
        assert_eq!(learner.phase(), Phase::Training);
        assert!(matches!(learner.accept_labels(&good), Err(Error::NotAwaitingLabels)));
        assert_eq!(learner.step().unwrap(), Phase::SelfTraining);
        assert_eq!(learner.step().unwrap(), Phase::Evaluating);
        assert_eq!(learner.step().unwrap(), Phase::AwaitingLabels);
        assert_eq!(learner.batch_index(), 1);
    }

    #[test]
    fn aggregate_of_identical_curves() {
        let cfg = quick_config();
        let curve = run_active_learning(blobs(), &cfg, &mut SimulatedOracle::for_config(&cfg)).unwrap();
        let agg = aggregate_runs(vec![curve.clone(); 5]).unwrap();
        assert_eq!(agg.final_std, 0.0);
        assert_eq!(agg.auc_std, 0.0);
        assert!(!agg.single_run);
        let one = aggregate_runs(vec![curve.clone()]).unwrap();
        assert!(one.single_run);
        assert_eq!(one.final_std, 0.0);
        let mut other = curve;
        other.config_fingerprint = "different".into();
        assert!(matches!(
            aggregate_runs(vec![one.curves[0].clone(), other]),
            Err(Error::ConfigMismatch(..))
        ));
    }

    #[test]
    fn aggregate_two_finals() {
        let mk = |score: f64| LearningCurve {
            metric: Metric::Accuracy,
            config_fingerprint: "x".into(),
            rng_seed: 0,
            points: vec![
                CurvePoint {
                    labeled_count: 30,
                    score: 0.5,
                    pseudo_count: 0,
                    query_ids: vec![],
                    self_training: vec![],
                },
                CurvePoint {
                    labeled_count: 40,
                    score,
                    pseudo_count: 4,
                    query_ids: vec![],
                    self_training: vec![],
                },
            ],
            truncated: false,
        };
        let agg = aggregate_runs(vec![mk(0.8), mk(0.9)]).unwrap();
        assert!((agg.final_mean - 0.85).abs() < 1e-15);
        assert!((agg.final_std - 0.07071067811865474).abs() < 1e-12);
        assert_eq!(agg.mean_pseudo_counts, vec![0.0, 4.0]);
    }
}
