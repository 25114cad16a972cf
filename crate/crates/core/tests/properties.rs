use std::sync::Arc;

use hast_core::classifier::{softmax_in_place, LogisticRegression};
use hast_core::config::ClassifierConfig;
use hast_core::engine::run_active_learning;
use hast_core::metrics::normalized_auc;
use hast_core::pool::{init_pools, LabelRecord};
use hast_core::query::{margin, query_breaking_ties, query_contrastive, query_random};
use hast_core::random::seeded;
use hast_core::self_training::{
    class_balance_alpha, compute_weights, hast_self_train, knn_vote, threshold_self_train, ALPHA_MAX,
};
use hast_core::{
    Dataset, ExperimentConfig, Instance, Metric, ProbModel, QueryStrategy, SelfTrainingMethod, SimulatedOracle,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(n: usize, num_classes: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |i: usize, rng: &mut ChaCha8Rng| {
        let label = if i < num_classes { i } else { rng.random_range(0..num_classes) };
        let embedding = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Instance {
            id: 0,
            source_id: None,
            text: None,
            embedding,
            true_label: label,
        }
    };
    let train = (0..n).map(|i| make(i, &mut rng)).collect();
    let test = (0..num_classes.max(4)).map(|i| make(i, &mut rng)).collect();
    Dataset::new("random", train, test, num_classes, Metric::Accuracy).unwrap()
}

fn random_model(num_classes: usize, dim: usize, scale: f64, seed: u64) -> ProbModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProbModel::LogisticRegression(LogisticRegression {
        num_classes,
        dim,
        weights: (0..num_classes * dim).map(|_| rng.random_range(-scale..scale)).collect(),
        bias: (0..num_classes).map(|_| rng.random_range(-0.5..0.5)).collect(),
    })
}

fn records_from(ds: &Dataset, ids: &[usize], pseudo_every: usize) -> Vec<LabelRecord> {
    ids.iter()
        .enumerate()
        .map(|(i, &id)| {
            let label = ds.train(id).true_label;
            if pseudo_every > 0 && i % pseudo_every == 0 {
                LabelRecord::pseudo(id, label)
            } else {
                LabelRecord::human(id, label)
            }
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_in_open_interval(hist in prop::collection::vec(0usize..5000, 1..12)) {
        for a in class_balance_alpha(&hist) {
            prop_assert!(a > 0.0 && a < ALPHA_MAX, "{a}");
        }
    }

    #[test]
    fn alpha_is_antitone(total in 0usize..10000, classes in 2usize..20, h in 0usize..10000) {
        // Compare class 0 at count h and h + 1 with the remaining mass fixed in class 1.
        let h = h.min(total);
        let mut lo = vec![0; classes];
        lo[0] = h;
        lo[1] = total - h;
        let mut hi = lo.clone();
        hi[0] = h + 1;
        hi[1] = (total - h).saturating_sub(1);
        if hi.iter().sum::<usize>() == total {
            prop_assert!(class_balance_alpha(&hi)[0] <= class_balance_alpha(&lo)[0]);
        }
    }

    #[test]
    fn alpha_is_five_at_the_balanced_count(per_class in 0usize..2000, classes in 1usize..16) {
        let hist = vec![per_class; classes];
        for a in class_balance_alpha(&hist) {
            prop_assert_eq!(a, 5.0);
        }
    }

    #[test]
    fn weights_are_normalized(
        labels in prop::collection::vec((0usize..6, any::<bool>()), 1..300),
        beta in 0.001f64..=1.0,
        hist in prop::collection::vec(0usize..500, 6),
    ) {
        let records: Vec<LabelRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, &(l, human))| if human { LabelRecord::human(i, l) } else { LabelRecord::pseudo(i, l) })
            .collect();
        let alpha = class_balance_alpha(&hist);
        let w = compute_weights(&records, &alpha, beta).unwrap();
        let sum: f64 = w.normalized.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12, "{sum}");
        prop_assert!(w.normalized.iter().all(|&x| x > 0.0));
        for (r, &raw) in records.iter().zip(&w.raw) {
            if r.is_human() {
                prop_assert_eq!(raw, 1.0);
            }
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-700.0f64..700.0, 1..10)) {
        let mut p = logits.clone();
        softmax_in_place(&mut p);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn model_probabilities_are_distributions(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let ds = random_dataset(40, 4, 6, seed);
        let model = random_model(4, 6, scale, seed ^ 1);
        for inst in &ds.instances {
            let p = model.predict_proba(&inst.embedding).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn knn_vote_ignores_reference_order(seed in any::<u64>(), k in 1usize..9, dup in any::<bool>()) {
        let mut ds = random_dataset(60, 3, 4, seed);
        if dup {
            // Exact duplicates force distance ties between different records.
            for i in 30..40 {
                ds.instances[i].embedding = ds.instances[i - 30].embedding.clone();
            }
        }
        let ids: Vec<usize> = (0..40).collect();
        let reference = records_from(&ds, &ids, 0);
        let mut shuffled = reference.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 7));
        for q in 40..60 {
            let x = ds.embedding(q);
            prop_assert_eq!(knn_vote(&ds, x, &reference, k).unwrap(), knn_vote(&ds, x, &shuffled, k).unwrap());
        }
    }

    #[test]
    fn breaking_ties_depends_only_on_margin_order(seed in any::<u64>(), batch in 1usize..30) {
        let ds = random_dataset(80, 4, 5, seed);
        let model = random_model(4, 5, 3.0, seed ^ 3);
        let candidates: Vec<usize> = (0..80).collect();
        let got = query_breaking_ties(&model, &ds, &candidates, batch).unwrap();
        // Re-rank under strictly increasing transforms of the margin.
        let transforms: [fn(f64) -> f64; 3] = [|m| m.powi(3) + 2.0 * m, |m| m.exp(), |m| (m + 1e-3).ln()];
        for f in transforms {
            let mut scored: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&id| (id, f(margin(&model.predict_proba(ds.embedding(id)).unwrap()))))
                .collect();
            scored.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expected: Vec<usize> = scored.iter().take(batch).map(|s| s.0).collect();
            prop_assert_eq!(&got.ids, &expected);
        }
    }

    #[test]
    fn strategies_draw_distinct_unlabeled_ids(seed in any::<u64>(), batch in 1usize..70) {
        let ds = random_dataset(60, 3, 4, seed);
        let mut rng = seeded(seed);
        let pool = init_pools(&ds, 10, false, &mut rng).unwrap();
        let model = random_model(3, 4, 2.0, seed);
        let candidates = pool.unlabeled_ids();
        let results = [
            query_random(&candidates, batch, &mut rng),
            query_breaking_ties(&model, &ds, &candidates, batch).unwrap(),
            query_contrastive(&model, &ds, pool.labeled(), &candidates, batch, 5).unwrap(),
        ];
        for r in results {
            prop_assert_eq!(r.len(), batch.min(candidates.len()));
            let mut ids = r.ids.clone();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), r.len());
            prop_assert!(r.ids.iter().all(|id| pool.is_unlabeled(*id)));
            if batch >= candidates.len() {
                prop_assert_eq!(ids, candidates.clone());
            }
        }
    }

    #[test]
    fn self_training_preserves_the_pool(seed in any::<u64>(), iterations in 1usize..4) {
        let ds = random_dataset(120, 3, 4, seed);
        let mut rng = seeded(seed);
        let pool = init_pools(&ds, 15, false, &mut rng).unwrap();
        let model = random_model(3, 4, 4.0, seed ^ 5);
        let config = ExperimentConfig {
            self_train_iterations: iterations,
            classifier: ClassifierConfig { epochs: 5, ..ClassifierConfig::default() },
            ..ExperimentConfig::default()
        };
        let out = hast_self_train(&ds, &pool, &model, &config, &mut rng).unwrap();
        prop_assert_eq!(out.pool.labeled().len() + out.pool.unlabeled().len(), ds.train_len());
        prop_assert!(out.pool.check_invariants(ds.train_len()).is_ok());
        prop_assert_eq!(out.pool.human_count(), 15);
        prop_assert_eq!(out.pseudo_count(), out.rounds.iter().map(|r| r.pseudo_count).sum::<usize>());
        for r in out.pool.labeled() {
            if r.is_human() {
                prop_assert_eq!(r.raw_weight, 1.0);
            }
        }
    }

    #[test]
    fn auc_lies_between_extremes(scores in prop::collection::vec(0.0f64..=1.0, 2..15), step in 1usize..20) {
        let pts: Vec<(f64, f64)> = scores.iter().enumerate().map(|(i, &s)| ((30 + i * step) as f64, s)).collect();
        let auc = normalized_auc(&pts).unwrap();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(auc >= lo - 1e-12 && auc <= hi + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn full_runs_respect_the_budget(seed in any::<u64>(), strategy in 0usize..3, method in 0usize..4) {
        let ds = Arc::new(random_dataset(150, 3, 5, seed));
        let config = ExperimentConfig {
            seed_size: 6,
            num_queries: 4,
            batch_size: 3,
            query_strategy: QueryStrategy::ALL[strategy],
            self_training: SelfTrainingMethod::ALL[method],
            rng_seed: seed,
            label_noise: 0.3,
            classifier: ClassifierConfig { epochs: 10, ..ClassifierConfig::default() },
            ..ExperimentConfig::default()
        };
        let mut oracle = SimulatedOracle::for_config(&config);
        let curve = run_active_learning(ds.clone(), &config, &mut oracle).unwrap();
        let counts: Vec<usize> = curve.points.iter().map(|p| p.labeled_count).collect();
        prop_assert_eq!(counts, vec![6, 9, 12, 15, 18]);
        let mut queried: Vec<usize> = curve.points.iter().flat_map(|p| p.query_ids.iter().copied()).collect();
        let total = queried.len();
        queried.sort_unstable();
        queried.dedup();
        prop_assert_eq!(queried.len(), total);
        prop_assert!(total <= config.budget());
        if config.self_training == SelfTrainingMethod::None {
            prop_assert!(curve.pseudo_counts().iter().all(|&c| c == 0));
        }
    }
}

#[test]
fn separable_data_makes_the_knn_conjunct_redundant() {
    // Tight, far-apart clusters: a confident model and the KNN vote always agree.
    let ds = hast_core::generate_blobs(3, 60, 6, 40.0, 3).unwrap();
    let mut rng = seeded(1);
    let pool = init_pools(&ds, 12, true, &mut rng).unwrap();
    let config = ExperimentConfig::default();
    let model = hast_core::self_training::train_supervised(&ds, pool.labeled(), &config.classifier).unwrap();
    let hast = hast_self_train(&ds, &pool, &model, &config, &mut seeded(2)).unwrap();
    let thr = threshold_self_train(&ds, &pool, &model, &config, &mut seeded(2)).unwrap();
    assert!(hast.pseudo_count() > 0);
    assert_eq!(hast.batches[0].ids(), thr.batches[0].ids());
}
