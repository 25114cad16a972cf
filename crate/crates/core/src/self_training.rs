//! Self-training on top of an active-learning round.
//!
//! Three methods share the same round structure: predict over a subsample of
//! the unlabeled pool, select pseudo-labels, move them from `U_p` to `L_p`,
//! weight `L_p`, and retrain from scratch.
//!
//! * HAST selects an instance when its most confident class has probability
//!   strictly above 0.5 *and* agrees with the majority label of its `k`
//!   nearest labeled neighbors. Pseudo-labels are weighted by a per-class
//!   balance factor `alpha_c` times a global down-weighting factor `beta`;
//!   human labels keep weight 1; all weights are then L1-normalized.
//! * VERIPS keeps high-margin predictions that a model trained on human
//!   labels alone agrees with, and trains with uniform weights.
//! * Threshold is HAST's confidence gate without the KNN vote or weighting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_weighted, Example, ProbModel};
use crate::config::{ClassifierConfig, ExperimentConfig, SelfTrainingMethod};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pool::{subsample_ids, LabelRecord, PoolState, Provenance};
use crate::query::{margin, nearest_labeled};
use crate::random::Rng;

/// Confidence an instance must strictly exceed to be pseudo-labeled.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;

/// Upper end of the class-balance factor range `(0, ALPHA_MAX)`.
pub const ALPHA_MAX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub instance_id: usize,
    pub label: usize,
    pub confidence: f64,
    /// Neighbor vote, when the method consulted one.
    pub knn_label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelBatch {
    pub records: Vec<PseudoLabel>,
    pub histogram: Vec<usize>,
    pub total: usize,
}

impl PseudoLabelBatch {
    pub fn from_records(records: Vec<PseudoLabel>, num_classes: usize) -> Self {
        let mut histogram = vec![0; num_classes];
        for r in &records {
            histogram[r.label] += 1;
        }
        Self {
            total: records.len(),
            records,
            histogram,
        }
    }

    pub fn ids(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.instance_id).collect()
    }
}

/// Raw and L1-normalized loss weights, aligned with the records of `L_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// One self-training round, as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTrainRound {
    pub round: usize,
    pub candidates: usize,
    pub pseudo_count: usize,
    pub histogram: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub human_weight: f64,
    pub pseudo_weight: f64,
}

#[derive(Debug, Clone)]
pub struct SelfTrainOutcome {
    pub model: ProbModel,
    /// `L_p` and `U_p` after the last round.
    pub pool: PoolState,
    pub rounds: Vec<SelfTrainRound>,
    pub batches: Vec<PseudoLabelBatch>,
}

impl SelfTrainOutcome {
    /// Pseudo-labels in the final training set.
    pub fn pseudo_count(&self) -> usize {
        self.pool.pseudo_count()
    }
}

/// Majority label among `(distance, label)` neighbors. Ties go to the tied
/// class with the smallest mean distance, then to the lowest class index.
pub fn majority_vote(neighbors: &[(f64, usize)], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    let mut dist_sum = vec![0.0; num_classes];
    for &(d, label) in neighbors {
        counts[label] += 1;
        dist_sum[label] += d;
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let mut best: Option<(usize, f64)> = None;
    for (c, &n) in counts.iter().enumerate() {
        if n != top || n == 0 {
            continue;
        }
        let mean = dist_sum[c] / n as f64;
        if best.is_none_or(|(_, m)| mean < m) {
            best = Some((c, mean));
        }
    }
    best.map(|(c, _)| c).unwrap_or(0)
}

/// Majority label of the `k` nearest (cosine) records of `reference`.
pub fn knn_vote(
    dataset: &Dataset,
    query: &[f64],
    reference: &[LabelRecord],
    k: usize,
) -> Result<usize> {
    if reference.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    let near: Vec<(f64, usize)> = nearest_labeled(dataset, query, reference, k.max(1))
        .into_iter()
        .map(|(d, r)| (d, r.label))
        .collect();
    Ok(majority_vote(&near, dataset.num_classes))
}

/// Applies the pseudo-label indicator to every candidate.
///
/// With `knn_k = Some(k)` a candidate needs confidence above 0.5 and a
/// matching `k`-NN vote over `reference`; with `None` confidence alone decides.
pub fn select_pseudo_labels(
    model: &ProbModel,
    dataset: &Dataset,
    candidates: &[usize],
    reference: &[LabelRecord],
    knn_k: Option<usize>,
) -> Result<PseudoLabelBatch> {
    if knn_k.is_some() && reference.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    let picked: Vec<Option<PseudoLabel>> = candidates
        .par_iter()
        .map(|&id| {
            let x = dataset.embedding(id);
            let pred = model.predict(x)?;
            if pred.confidence <= CONFIDENCE_THRESHOLD {
                return Ok(None);
            }
            let knn_label = match knn_k {
                Some(k) => {
                    let vote = knn_vote(dataset, x, reference, k)?;
                    if vote != pred.label {
                        return Ok(None);
                    }
                    Some(vote)
                }
                None => None,
            };
            Ok(Some(PseudoLabel {
                instance_id: id,
                label: pred.label,
                confidence: pred.confidence,
                knn_label,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(PseudoLabelBatch::from_records(
        picked.into_iter().flatten().collect(),
        dataset.num_classes,
    ))
}

/// Per-class balance factors from a pseudo-label histogram:
/// `z_c = (N/C - h_c) / max(1, h_c)` squashed by `10 / (1 + e^{-z_c})`.
///
/// Results are clamped to the largest double below 10 so that the open
/// upper bound survives rounding for very large `z`.
pub fn class_balance_alpha(histogram: &[usize]) -> Vec<f64> {
    let num_classes = histogram.len() as f64;
    let total: usize = histogram.iter().sum();
    let expected = total as f64 / num_classes;
    let below_max = f64::from_bits(ALPHA_MAX.to_bits() - 1);
    histogram
        .iter()
        .map(|&h| {
            let z = (expected - h as f64) / (h.max(1) as f64);
            (ALPHA_MAX / (1.0 + (-z).exp())).min(below_max)
        })
        .collect()
}

/// Human records weigh 1, pseudo records `alpha[label] * beta`; the result
/// is divided by its sum.
pub fn compute_weights(records: &[LabelRecord], alpha: &[f64], beta: f64) -> Result<WeightVector> {
    if records.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    let raw: Vec<f64> = records
        .iter()
        .map(|r| match r.provenance {
            Provenance::Human => 1.0,
            Provenance::Pseudo => alpha[r.label] * beta,
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let normalized = raw.iter().map(|w| w / total).collect();
    Ok(WeightVector { raw, normalized })
}

/// Trains a fresh model on labeled records with the given normalized weights.
pub fn train_on_records(
    dataset: &Dataset,
    records: &[LabelRecord],
    weights: &[f64],
    config: &ClassifierConfig,
) -> Result<ProbModel> {
    let examples: Vec<Example> = records
        .iter()
        .map(|r| (dataset.embedding(r.instance_id), r.label))
        .collect();
    train_weighted(&examples, weights, dataset.num_classes, config)
}

/// Trains on the human records only, each with equal weight.
pub fn train_supervised(
    dataset: &Dataset,
    records: &[LabelRecord],
    config: &ClassifierConfig,
) -> Result<ProbModel> {
    let human: Vec<LabelRecord> = records.iter().filter(|r| r.is_human()).cloned().collect();
    let weights = compute_weights(&human, &[], 1.0)?;
    train_on_records(dataset, &human, &weights.normalized, config)
}

/// `beta` as configured: fixed, disabled, or the labeled-to-unlabeled ratio.
pub fn effective_beta(config: &ExperimentConfig, labeled: usize, unlabeled: usize) -> f64 {
    if !config.pseudo_down_weighting {
        return 1.0;
    }
    if config.dynamic_beta {
        if unlabeled == 0 {
            return 1.0;
        }
        return (labeled as f64 / unlabeled as f64).clamp(f64::MIN_POSITIVE, 1.0);
    }
    config.beta
}

fn weight_split(records: &[LabelRecord], weights: &WeightVector) -> (f64, f64) {
    let mut human = 0.0;
    let mut pseudo = 0.0;
    for (r, w) in records.iter().zip(&weights.normalized) {
        if r.is_human() {
            human += w;
        } else {
            pseudo += w;
        }
    }
    (human, pseudo)
}

fn move_to_labeled(pool: &mut PoolState, batch: &PseudoLabelBatch) -> Result<()> {
    for r in &batch.records {
        pool.label(LabelRecord::pseudo(r.instance_id, r.label))?;
    }
    Ok(())
}

fn store_raw_weights(pool: &mut PoolState, weights: &WeightVector) {
    for (r, w) in pool.labeled_mut().iter_mut().zip(&weights.raw) {
        r.raw_weight = *w;
    }
}

/// HAST self-training.
///
/// Every round predicts with `model`, the model handed in, while the KNN
/// reference and the unlabeled pool shrink and grow as pseudo-labels are
/// accepted. A round that accepts nothing retrains on `L_p` unchanged.
pub fn hast_self_train(
    dataset: &Dataset,
    pool: &PoolState,
    model: &ProbModel,
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<SelfTrainOutcome> {
    let mut work = pool.clone();
    let beta = effective_beta(config, pool.human_count(), pool.unlabeled().len());
    let mut current = model.clone();
    let mut rounds = Vec::new();
    let mut batches = Vec::new();
    for t in 1..=config.self_train_iterations.max(1) {
        let candidates = subsample_ids(&work.unlabeled_ids(), config.subsample_size, rng);
        let batch = select_pseudo_labels(model, dataset, &candidates, work.labeled(), Some(config.k))?;
        move_to_labeled(&mut work, &batch)?;

        let alpha = if config.class_weighting {
            class_balance_alpha(&batch.histogram)
        } else {
            vec![1.0; dataset.num_classes]
        };
        let weights = compute_weights(work.labeled(), &alpha, beta)?;
        store_raw_weights(&mut work, &weights);
        current = train_on_records(dataset, work.labeled(), &weights.normalized, &config.classifier)?;

        let (human_weight, pseudo_weight) = weight_split(work.labeled(), &weights);
        tracing::debug!(round = t, selected = batch.total, "hast round");
        rounds.push(SelfTrainRound {
            round: t,
            candidates: candidates.len(),
            pseudo_count: batch.total,
            histogram: batch.histogram.clone(),
            alpha: Some(alpha),
            beta: Some(beta),
            human_weight,
            pseudo_weight,
        });
        batches.push(batch);
    }
    Ok(SelfTrainOutcome {
        model: current,
        pool: work,
        rounds,
        batches,
    })
}

/// Verified pseudo-label selection (margin variant).
///
/// Candidates whose margin under the current model exceeds
/// `config.verips_threshold` are kept when a model trained on the human
/// labels alone predicts the same class.
pub fn verips_self_train(
    dataset: &Dataset,
    pool: &PoolState,
    model: &ProbModel,
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<SelfTrainOutcome> {
    let mut work = pool.clone();
    let verifier = train_supervised(dataset, pool.labeled(), &config.classifier)?;
    let mut current = model.clone();
    let mut rounds = Vec::new();
    let mut batches = Vec::new();
    for t in 1..=config.self_train_iterations.max(1) {
        let candidates = subsample_ids(&work.unlabeled_ids(), config.subsample_size, rng);
        let batch = verified_candidates(&current, &verifier, dataset, &candidates, config.verips_threshold)?;
        move_to_labeled(&mut work, &batch)?;
        let weights = compute_weights(work.labeled(), &vec![1.0; dataset.num_classes], 1.0)?;
        store_raw_weights(&mut work, &weights);
        current = train_on_records(dataset, work.labeled(), &weights.normalized, &config.classifier)?;
        let (human_weight, pseudo_weight) = weight_split(work.labeled(), &weights);
        rounds.push(SelfTrainRound {
            round: t,
            candidates: candidates.len(),
            pseudo_count: batch.total,
            histogram: batch.histogram.clone(),
            alpha: None,
            beta: None,
            human_weight,
            pseudo_weight,
        });
        batches.push(batch);
    }
    Ok(SelfTrainOutcome {
        model: current,
        pool: work,
        rounds,
        batches,
    })
}

/// Candidates with margin above `threshold` whose label `verifier` confirms.
pub fn verified_candidates(
    model: &ProbModel,
    verifier: &ProbModel,
    dataset: &Dataset,
    candidates: &[usize],
    threshold: f64,
) -> Result<PseudoLabelBatch> {
    let picked: Vec<Option<PseudoLabel>> = candidates
        .par_iter()
        .map(|&id| {
            let x = dataset.embedding(id);
            let proba = model.predict_proba(x)?;
            if margin(&proba) <= threshold {
                return Ok(None);
            }
            let pred = crate::classifier::Prediction::from_proba(&proba);
            if verifier.predict(x)?.label != pred.label {
                return Ok(None);
            }
            Ok(Some(PseudoLabel {
                instance_id: id,
                label: pred.label,
                confidence: pred.confidence,
                knn_label: None,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(PseudoLabelBatch::from_records(
        picked.into_iter().flatten().collect(),
        dataset.num_classes,
    ))
}

/// Confidence-only baseline: one round, uniform weights.
pub fn threshold_self_train(
    dataset: &Dataset,
    pool: &PoolState,
    model: &ProbModel,
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<SelfTrainOutcome> {
    let mut work = pool.clone();
    let candidates = subsample_ids(&work.unlabeled_ids(), config.subsample_size, rng);
    let batch = select_pseudo_labels(model, dataset, &candidates, work.labeled(), None)?;
    move_to_labeled(&mut work, &batch)?;
    let weights = compute_weights(work.labeled(), &vec![1.0; dataset.num_classes], 1.0)?;
    store_raw_weights(&mut work, &weights);
    let trained = train_on_records(dataset, work.labeled(), &weights.normalized, &config.classifier)?;
    let (human_weight, pseudo_weight) = weight_split(work.labeled(), &weights);
    Ok(SelfTrainOutcome {
        model: trained,
        pool: work,
        rounds: vec![SelfTrainRound {
            round: 1,
            candidates: candidates.len(),
            pseudo_count: batch.total,
            histogram: batch.histogram.clone(),
            alpha: None,
            beta: None,
            human_weight,
            pseudo_weight,
        }],
        batches: vec![batch],
    })
}

/// Dispatches on `config.self_training`. `None` returns the model unchanged.
pub fn self_train(
    dataset: &Dataset,
    pool: &PoolState,
    model: &ProbModel,
    config: &ExperimentConfig,
    rng: &mut Rng,
) -> Result<SelfTrainOutcome> {
    match config.self_training {
        SelfTrainingMethod::None => Ok(SelfTrainOutcome {
            model: model.clone(),
            pool: pool.clone(),
            rounds: Vec::new(),
            batches: Vec::new(),
        }),
        SelfTrainingMethod::Hast => hast_self_train(dataset, pool, model, config, rng),
        SelfTrainingMethod::Verips => verips_self_train(dataset, pool, model, config, rng),
        SelfTrainingMethod::Threshold => threshold_self_train(dataset, pool, model, config, rng),
    }
}
