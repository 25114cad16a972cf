//! The labeled/unlabeled partition of the training pool.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::random::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance_id: usize,
    pub label: usize,
    pub provenance: Provenance,
    /// Weight before L1 normalization. Always 1.0 for human labels.
    pub raw_weight: f64,
}

impl LabelRecord {
    pub fn human(instance_id: usize, label: usize) -> Self {
        Self {
            instance_id,
            label,
            provenance: Provenance::Human,
            raw_weight: 1.0,
        }
    }

    pub fn pseudo(instance_id: usize, label: usize) -> Self {
        Self {
            instance_id,
            label,
            provenance: Provenance::Pseudo,
            raw_weight: 1.0,
        }
    }

    pub fn is_human(&self) -> bool {
        self.provenance == Provenance::Human
    }
}

/// Disjoint labeled and unlabeled pools. Only the methods below move ids
/// between the two, so `labeled ∩ unlabeled = ∅` holds by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolState {
    labeled: Vec<LabelRecord>,
    unlabeled: BTreeSet<usize>,
}

impl PoolState {
    /// Every id in `ids` starts out unlabeled.
    pub fn all_unlabeled(ids: impl IntoIterator<Item = usize>) -> Self {
        Self {
            labeled: Vec::new(),
            unlabeled: ids.into_iter().collect(),
        }
    }

    pub fn labeled(&self) -> &[LabelRecord] {
        &self.labeled
    }

    pub fn labeled_mut(&mut self) -> &mut [LabelRecord] {
        &mut self.labeled
    }

    pub fn unlabeled(&self) -> &BTreeSet<usize> {
        &self.unlabeled
    }

    pub fn unlabeled_ids(&self) -> Vec<usize> {
        self.unlabeled.iter().copied().collect()
    }

    pub fn is_unlabeled(&self, id: usize) -> bool {
        self.unlabeled.contains(&id)
    }

    pub fn human_count(&self) -> usize {
        self.labeled.iter().filter(|r| r.is_human()).count()
    }

    pub fn pseudo_count(&self) -> usize {
        self.labeled.len() - self.human_count()
    }

    pub fn human_records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.labeled.iter().filter(|r| r.is_human())
    }

    /// Moves `record.instance_id` from the unlabeled pool into the labeled one.
    pub fn label(&mut self, record: LabelRecord) -> Result<()> {
        if !self.unlabeled.remove(&record.instance_id) {
            if self.labeled.iter().any(|r| r.instance_id == record.instance_id) {
                return Err(Error::AlreadyLabeled(record.instance_id));
            }
            return Err(Error::NotUnlabeled(record.instance_id));
        }
        self.labeled.push(record);
        Ok(())
    }

    pub fn add_human(&mut self, id: usize, label: usize) -> Result<()> {
        self.label(LabelRecord::human(id, label))
    }

    /// Checks the partition against the dataset's train ids.
    pub fn check_invariants(&self, train_len: usize) -> Result<()> {
        let mut seen = BTreeMap::new();
        for r in &self.labeled {
            if seen.insert(r.instance_id, ()).is_some() {
                return Err(Error::AlreadyLabeled(r.instance_id));
            }
            if self.unlabeled.contains(&r.instance_id) {
                return Err(Error::InvalidDataset(format!(
                    "instance {} is both labeled and unlabeled",
                    r.instance_id
                )));
            }
            if r.is_human() && r.raw_weight != 1.0 {
                return Err(Error::InvalidDataset(format!(
                    "human label for {} has raw weight {}",
                    r.instance_id, r.raw_weight
                )));
            }
        }
        if let Some(&bad) = seen
            .keys()
            .chain(self.unlabeled.iter())
            .find(|&&id| id >= train_len)
        {
            return Err(Error::InvalidDataset(format!(
                "instance {bad} is not a training id"
            )));
        }
        Ok(())
    }
}

/// Draws the ids of the initial labeled set.
///
/// Uniform without replacement by default. With `stratified`, classes are
/// visited round-robin (in a shuffled order) so the seed set is as balanced
/// as the class sizes allow.
pub fn draw_seed_ids(
    dataset: &Dataset,
    seed_size: usize,
    stratified: bool,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let n = dataset.train_len();
    if seed_size > n {
        return Err(Error::SeedTooLarge {
            seed_size,
            pool_size: n,
        });
    }
    if !stratified {
        return Ok(index::sample(rng, n, seed_size).into_vec());
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes];
    for inst in &dataset.instances {
        by_class[inst.true_label].push(inst.id);
    }
    for ids in &mut by_class {
        ids.shuffle(rng);
    }
    let mut order: Vec<usize> = (0..dataset.num_classes).collect();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(seed_size);
    let mut depth = 0;
    while out.len() < seed_size {
        for &c in &order {
            if let Some(&id) = by_class[c].get(depth) {
                out.push(id);
                if out.len() == seed_size {
                    break;
                }
            }
        }
        depth += 1;
    }
    Ok(out)
}

/// Initial partition with seed labels taken from the ground truth.
pub fn init_pools(
    dataset: &Dataset,
    seed_size: usize,
    stratified: bool,
    rng: &mut Rng,
) -> Result<PoolState> {
    let seed = draw_seed_ids(dataset, seed_size, stratified, rng)?;
    let mut pool = PoolState::all_unlabeled(0..dataset.train_len());
    for id in seed {
        pool.add_human(id, dataset.train(id).true_label)?;
    }
    Ok(pool)
}

/// Draws `min(n, |U|)` unlabeled ids uniformly without replacement,
/// returned in ascending order.
pub fn subsample_unlabeled(pool: &PoolState, n: usize, rng: &mut Rng) -> Vec<usize> {
    subsample_ids(&pool.unlabeled_ids(), n, rng)
}

/// Same as [`subsample_unlabeled`] over an explicit id list.
pub fn subsample_ids(ids: &[usize], n: usize, rng: &mut Rng) -> Vec<usize> {
    let take = n.min(ids.len());
    let mut picked: Vec<usize> = index::sample(rng, ids.len(), take)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;
    use crate::random::seeded;

    #[test]
    fn exhaustive_seed_draw() {
        let ds = generate_blobs(2, 5, 2, 4.0, 1).unwrap();
        let pool = init_pools(&ds, 10, false, &mut seeded(3)).unwrap();
        assert_eq!(pool.labeled().len(), 10);
        assert!(pool.unlabeled().is_empty());
    }

    #[test]
    fn default_seed_size_partition() {
        let ds = generate_blobs(2, 500, 4, 4.0, 1).unwrap();
        let pool = init_pools(&ds, 30, false, &mut seeded(3)).unwrap();
        assert_eq!(pool.labeled().len(), 30);
        assert_eq!(pool.unlabeled().len(), 970);
        pool.check_invariants(ds.train_len()).unwrap();
        assert!(pool.labeled().iter().all(|r| r.is_human() && r.raw_weight == 1.0));
        for r in pool.labeled() {
            assert_eq!(r.label, ds.train(r.instance_id).true_label);
        }
    }

    #[test]
    fn seed_draw_is_deterministic() {
        let ds = generate_blobs(3, 100, 4, 4.0, 1).unwrap();
        let a = init_pools(&ds, 30, false, &mut seeded(9)).unwrap();
        let b = init_pools(&ds, 30, false, &mut seeded(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_size_exceeding_pool_is_an_error() {
        let ds = generate_blobs(2, 5, 2, 4.0, 1).unwrap();
        assert!(matches!(
            init_pools(&ds, 11, false, &mut seeded(0)),
            Err(Error::SeedTooLarge { seed_size: 11, pool_size: 10 })
        ));
    }

    #[test]
    fn stratified_seed_is_balanced() {
        let ds = generate_blobs(3, 100, 4, 4.0, 1).unwrap();
        let ids = draw_seed_ids(&ds, 30, true, &mut seeded(5)).unwrap();
        let mut counts = [0; 3];
        for id in &ids {
            counts[ds.train(*id).true_label] += 1;
        }
        assert_eq!(counts, [10, 10, 10]);
    }

    #[test]
    fn subsample_sizes() {
        let mut rng = seeded(1);
        let small = PoolState::all_unlabeled(0..100);
        assert_eq!(subsample_unlabeled(&small, 16384, &mut rng), (0..100).collect::<Vec<_>>());

        let big = PoolState::all_unlabeled(0..20000);
        let s = subsample_unlabeled(&big, 16384, &mut rng);
        assert_eq!(s.len(), 16384);
        let distinct: BTreeSet<_> = s.iter().collect();
        assert_eq!(distinct.len(), 16384);
        assert!(s.iter().all(|id| big.is_unlabeled(*id)));

        let one = subsample_unlabeled(&big, 1, &mut rng);
        assert_eq!(one.len(), 1);
        assert!(big.is_unlabeled(one[0]));
    }

    #[test]
    fn subsample_is_deterministic() {
        let pool = PoolState::all_unlabeled(0..500);
        let a = subsample_unlabeled(&pool, 50, &mut seeded(4));
        let b = subsample_unlabeled(&pool, 50, &mut seeded(4));
        assert_eq!(a, b);
    }

    #[test]
    fn relabeling_is_rejected() {
        let mut pool = PoolState::all_unlabeled(0..3);
        pool.add_human(1, 0).unwrap();
        assert!(matches!(pool.add_human(1, 1), Err(Error::AlreadyLabeled(1))));
        assert!(matches!(pool.add_human(7, 1), Err(Error::NotUnlabeled(7))));
    }
}
