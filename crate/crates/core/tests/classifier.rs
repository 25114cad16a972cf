use hast_core::classifier::{Example, LogisticRegression};
use hast_core::config::ClassifierConfig;
use hast_core::train_weighted;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Problem {
    xs: Vec<Vec<f64>>,
    ys: Vec<usize>,
    weights: Vec<f64>,
    model: LogisticRegression,
}

fn problem(seed: u64) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..=8);
    let num_classes = rng.random_range(2..=5);
    let n = rng.random_range(1..=20);
    let xs = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..num_classes)).collect();
    let weights = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
    let model = LogisticRegression {
        num_classes,
        dim,
        weights: (0..num_classes * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        bias: (0..num_classes).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    Problem { xs, ys, weights, model }
}

fn examples(p: &Problem) -> Vec<Example<'_>> {
    p.xs.iter().map(Vec::as_slice).zip(p.ys.iter().copied()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>()) {
        let p = problem(seed);
        let ex = examples(&p);
        let (_, gw, gb) = p.model.loss_and_gradient(&ex, &p.weights);
        let analytic: Vec<f64> = gw.iter().chain(&gb).copied().collect();
        let h = 1e-6;
        let nw = p.model.weights.len();
        let numeric: Vec<f64> = (0..analytic.len())
            .map(|i| {
                let shifted = |delta: f64| {
                    let mut m = p.model.clone();
                    if i < nw { m.weights[i] += delta } else { m.bias[i - nw] += delta }
                    m.loss(&ex, &p.weights)
                };
                (shifted(h) - shifted(-h)) / (2.0 * h)
            })
            .collect();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(diff <= 1e-4 * scale.max(1e-8), "relative error {}", diff / scale);
    }

    #[test]
    fn duplicating_with_half_weight_keeps_the_loss(seed in any::<u64>(), pick in any::<prop::sample::Index>()) {
        let p = problem(seed);
        let i = pick.index(p.xs.len());
        let ex = examples(&p);
        let base = p.model.loss(&ex, &p.weights);
        let mut ex2 = ex.clone();
        let mut w2 = p.weights.clone();
        w2[i] /= 2.0;
        ex2.push(ex[i]);
        w2.push(w2[i]);
        let split = p.model.loss(&ex2, &w2);
        prop_assert!((base - split).abs() <= 1e-12 * base.abs().max(1.0));
    }

    #[test]
    fn training_is_bit_reproducible(seed in any::<u64>()) {
        let p = problem(seed);
        let ex = examples(&p);
        let cfg = ClassifierConfig { epochs: 25, ..ClassifierConfig::default() };
        let a = train_weighted(&ex, &p.weights, p.model.num_classes, &cfg).unwrap();
        let b = train_weighted(&ex, &p.weights, p.model.num_classes, &cfg).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
