//! Evaluation scores and learning-curve summaries.

use crate::classifier::ProbModel;
use crate::data::{Instance, Metric};
use crate::error::{Error, Result};

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let correct = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    correct as f64 / truth.len() as f64
}

/// Unweighted mean of per-class F1. A class with `precision + recall = 0`
/// contributes 0, including classes that never occur and are never predicted.
pub fn macro_f1(predicted: &[usize], truth: &[usize], num_classes: usize) -> f64 {
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let f1_sum: f64 = (0..num_classes)
        .map(|c| {
            let precision = ratio(tp[c], tp[c] + fp[c]);
            let recall = ratio(tp[c], tp[c] + fn_[c]);
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        })
        .sum();
    f1_sum / num_classes as f64
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn score(metric: Metric, predicted: &[usize], truth: &[usize], num_classes: usize) -> f64 {
    match metric {
        Metric::Accuracy => accuracy(predicted, truth),
        Metric::MacroF1 => macro_f1(predicted, truth, num_classes),
    }
}

/// Scores `model` on a test split.
pub fn evaluate(model: &ProbModel, test: &[Instance], metric: Metric) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Metric("cannot evaluate on an empty test set".into()));
    }
    let predicted = test
        .iter()
        .map(|inst| model.predict(&inst.embedding).map(|p| p.label))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<usize> = test.iter().map(|i| i.true_label).collect();
    Ok(score(metric, &predicted, &truth, model.num_classes()))
}

/// Trapezoidal area under `(x, y)` points divided by the x range.
pub fn normalized_auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::Metric(format!(
            "area under curve needs at least 2 points, got {}",
            points.len()
        )));
    }
    let span = points[points.len() - 1].0 - points[0].0;
    if span <= 0.0 {
        return Err(Error::Metric("curve x values must increase".into()));
    }
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / span)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor `n - 1`); 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 1];
        assert_eq!(accuracy(&y, &y), 1.0);
        assert_eq!(macro_f1(&y, &y, 3), 1.0);
    }

    #[test]
    fn all_zero_prediction_on_two_classes() {
        // truth {0, 1}, predicted {0, 0}: class 0 has P=1/2, R=1 -> F1=2/3; class 1 F1=0.
        let f1 = macro_f1(&[0, 0], &[0, 1], 2);
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_classifier_is_at_chance() {
        let truth: Vec<usize> = (0..100).map(|i| i % 4).collect();
        assert_eq!(accuracy(&[2; 100], &truth), 0.25);
    }

    #[test]
    fn auc_cases() {
        let flat: Vec<(f64, f64)> = (0..11).map(|i| (30.0 + 10.0 * i as f64, 0.8)).collect();
        assert!((normalized_auc(&flat).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(normalized_auc(&[(30.0, 0.0), (130.0, 1.0)]).unwrap(), 0.5);
        let v = normalized_auc(&[(0.0, 0.0), (1.0, 1.0), (3.0, 1.0)]).unwrap();
        assert!((v - 5.0 / 6.0).abs() < 1e-15);
        assert!(normalized_auc(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn std_cases() {
        assert_eq!(sample_std(&[0.7; 5]), 0.0);
        assert_eq!(sample_std(&[0.7]), 0.0);
        let s = sample_std(&[0.8, 0.9]);
        assert!((s - 0.005f64.sqrt()).abs() < 1e-15);
        assert!((mean(&[0.8, 0.9]) - 0.85).abs() < 1e-15);
    }
}
