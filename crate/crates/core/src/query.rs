//! Query strategies: which unlabeled instances to send to the oracle next.
//!
//! All strategies rank an explicit candidate list (the unlabeled pool, or a
//! subsample of it) and break score ties by the lower instance id, so the
//! selection is a deterministic function of model and candidates.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::ProbModel;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pool::LabelRecord;
use crate::random::Rng;
use crate::vector::cosine_distance;

/// Probability floor used inside the KL divergence.
pub const KL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub ids: Vec<usize>,
    /// Strategy-specific score for each selected id, kept for auditing.
    pub scores: Vec<f64>,
}

impl QueryResult {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Uniform draw of `min(batch, |candidates|)` ids. Scores are all zero.
pub fn query_random(candidates: &[usize], batch: usize, rng: &mut Rng) -> QueryResult {
    let take = batch.min(candidates.len());
    let ids: Vec<usize> = index::sample(rng, candidates.len(), take)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    QueryResult {
        scores: vec![0.0; ids.len()],
        ids,
    }
}

/// Difference between the two largest entries of a distribution.
pub fn margin(proba: &[f64]) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &p in proba {
        if p > first {
            second = first;
            first = p;
        } else if p > second {
            second = p;
        }
    }
    if second == f64::NEG_INFINITY {
        // A single class has nothing to be uncertain about.
        return 1.0;
    }
    first - second
}

/// `KL(p || q)` in nats, with both distributions floored at [`KL_EPSILON`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            let pi = pi.max(KL_EPSILON);
            let qi = qi.max(KL_EPSILON);
            pi * (pi / qi).ln()
        })
        .sum()
}

fn take_ranked(mut scored: Vec<(usize, f64)>, batch: usize, ascending: bool) -> QueryResult {
    scored.sort_by(|a, b| {
        let by_score = if ascending {
            a.1.total_cmp(&b.1)
        } else {
            b.1.total_cmp(&a.1)
        };
        by_score.then(a.0.cmp(&b.0))
    });
    scored.truncate(batch);
    let (ids, scores) = scored.into_iter().unzip();
    QueryResult { ids, scores }
}

fn predict_all(model: &ProbModel, dataset: &Dataset, ids: &[usize]) -> Result<Vec<Vec<f64>>> {
    ids.par_iter()
        .map(|&id| model.predict_proba(dataset.embedding(id)))
        .collect()
}

/// Smallest-margin (breaking ties) uncertainty sampling.
pub fn query_breaking_ties(
    model: &ProbModel,
    dataset: &Dataset,
    candidates: &[usize],
    batch: usize,
) -> Result<QueryResult> {
    let probas = predict_all(model, dataset, candidates)?;
    let scored = candidates
        .iter()
        .zip(&probas)
        .map(|(&id, p)| (id, margin(p)))
        .collect();
    Ok(take_ranked(scored, batch, true))
}

/// Exact nearest labeled neighbors of `query` by cosine distance; distance
/// ties resolve to the lower instance id.
pub(crate) fn nearest_labeled<'a>(
    dataset: &Dataset,
    query: &[f64],
    reference: &'a [LabelRecord],
    m: usize,
) -> Vec<(f64, &'a LabelRecord)> {
    let mut dists: Vec<(f64, &LabelRecord)> = reference
        .iter()
        .map(|r| (cosine_distance(query, dataset.embedding(r.instance_id)), r))
        .collect();
    dists.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.instance_id.cmp(&b.1.instance_id))
    });
    dists.truncate(m);
    dists
}

/// Contrastive predictions: mean `KL(p(neighbor) || p(candidate))` over the
/// candidate's `neighbors` nearest labeled instances; largest scores win.
pub fn query_contrastive(
    model: &ProbModel,
    dataset: &Dataset,
    labeled: &[LabelRecord],
    candidates: &[usize],
    batch: usize,
    neighbors: usize,
) -> Result<QueryResult> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledPool);
    }
    let labeled_proba: std::collections::HashMap<usize, Vec<f64>> = labeled
        .par_iter()
        .map(|r| Ok((r.instance_id, model.predict_proba(dataset.embedding(r.instance_id))?)))
        .collect::<Result<_>>()?;
    let scored: Vec<(usize, f64)> = candidates
        .par_iter()
        .map(|&id| {
            let x = dataset.embedding(id);
            let p_x = model.predict_proba(x)?;
            let near = nearest_labeled(dataset, x, labeled, neighbors);
            let total: f64 = near
                .iter()
                .map(|(_, r)| kl_divergence(&labeled_proba[&r.instance_id], &p_x))
                .sum();
            Ok((id, total / near.len() as f64))
        })
        .collect::<Result<_>>()?;
    Ok(take_ranked(scored, batch, false))
}
