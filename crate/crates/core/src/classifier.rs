//! Probabilistic classifiers over fixed embeddings.
//!
//! [`LogisticRegression`] is multinomial (softmax) regression trained by
//! full-batch gradient descent on the per-instance weighted cross-entropy
//! `sum_i w_i * CE(softmax(A x_i + b), y_i)`. Parameters start at zero on
//! every call, so training is a pure function of its inputs.
//!
//! [`NearestCentroid`] places each class at the weighted mean of its
//! examples and turns negative squared distances into a softmax.

use serde::{Deserialize, Serialize};

use crate::config::{ClassifierConfig, ClassifierKind};
use crate::error::{Error, Result};
use crate::vector::squared_euclidean;

/// A training example: embedding and label.
pub type Example<'a> = (&'a [f64], usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `num_classes x dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestCentroid {
    pub num_classes: usize,
    pub dim: usize,
    /// Row-major `num_classes x dim`.
    pub centroids: Vec<f64>,
    pub temperature: f64,
}

/// A trained model. Serializes to a flat JSON snapshot tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProbModel {
    LogisticRegression(LogisticRegression),
    NearestCentroid(NearestCentroid),
}

/// Argmax of a predicted distribution and its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f64,
}

impl Prediction {
    /// Ties go to the lowest class index.
    pub fn from_proba(proba: &[f64]) -> Self {
        let mut label = 0;
        for (c, &p) in proba.iter().enumerate().skip(1) {
            if p > proba[label] {
                label = c;
            }
        }
        Self {
            label,
            confidence: proba[label],
        }
    }
}

/// Numerically stable softmax, in place.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl LogisticRegression {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weights: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let row = &self.weights[c * self.dim..(c + 1) * self.dim];
            *o = self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes];
        self.logits_into(x, &mut out);
        softmax_in_place(&mut out);
        out
    }

    /// Weighted cross-entropy and its gradient with respect to the weight
    /// matrix (row-major, like `weights`) and the bias.
    pub fn loss_and_gradient(
        &self,
        examples: &[Example<'_>],
        sample_weights: &[f64],
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let c_count = self.num_classes;
        let mut grad_w = vec![0.0; c_count * self.dim];
        let mut grad_b = vec![0.0; c_count];
        let mut logits = vec![0.0; c_count];
        let mut loss = 0.0;
        for (&(x, y), &w) in examples.iter().zip(sample_weights) {
            self.logits_into(x, &mut logits);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            loss += w * (log_z - logits[y]);
            for c in 0..c_count {
                let p = (logits[c] - log_z).exp();
                let residual = w * (p - if c == y { 1.0 } else { 0.0 });
                grad_b[c] += residual;
                let row = &mut grad_w[c * self.dim..(c + 1) * self.dim];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += residual * v;
                }
            }
        }
        (loss, grad_w, grad_b)
    }

    pub fn loss(&self, examples: &[Example<'_>], sample_weights: &[f64]) -> f64 {
        self.loss_and_gradient(examples, sample_weights).0
    }

    /// Full-batch gradient descent from all-zero parameters.
    pub fn fit(
        examples: &[Example<'_>],
        sample_weights: &[f64],
        num_classes: usize,
        dim: usize,
        learning_rate: f64,
        epochs: usize,
    ) -> Self {
        let mut model = Self::zeros(num_classes, dim);
        for _ in 0..epochs {
            let (_, gw, gb) = model.loss_and_gradient(examples, sample_weights);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= learning_rate * g;
            }
        }
        model
    }
}

impl NearestCentroid {
    pub fn fit(
        examples: &[Example<'_>],
        sample_weights: &[f64],
        num_classes: usize,
        dim: usize,
        temperature: f64,
    ) -> Result<Self> {
        let mut centroids = vec![0.0; num_classes * dim];
        let mut mass = vec![0.0; num_classes];
        for (&(x, y), &w) in examples.iter().zip(sample_weights) {
            mass[y] += w;
            for (c, v) in centroids[y * dim..(y + 1) * dim].iter_mut().zip(x) {
                *c += w * v;
            }
        }
        for (class, &m) in mass.iter().enumerate() {
            if m <= 0.0 {
                return Err(Error::EmptyClass(class));
            }
            centroids[class * dim..(class + 1) * dim]
                .iter_mut()
                .for_each(|c| *c /= m);
        }
        Ok(Self {
            num_classes,
            dim,
            centroids,
            temperature,
        })
    }

    pub fn centroid(&self, class: usize) -> &[f64] {
        &self.centroids[class * self.dim..(class + 1) * self.dim]
    }

    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.num_classes)
            .map(|c| -self.temperature * squared_euclidean(x, self.centroid(c)))
            .collect();
        softmax_in_place(&mut out);
        out
    }
}

impl ProbModel {
    pub fn num_classes(&self) -> usize {
        match self {
            ProbModel::LogisticRegression(m) => m.num_classes,
            ProbModel::NearestCentroid(m) => m.num_classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ProbModel::LogisticRegression(m) => m.dim,
            ProbModel::NearestCentroid(m) => m.dim,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(match self {
            ProbModel::LogisticRegression(m) => m.predict_proba(x),
            ProbModel::NearestCentroid(m) => m.predict_proba(x),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_proba(&self.predict_proba(x)?))
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ProbModel::LogisticRegression(m) => {
                m.weights.iter().chain(&m.bias).all(|v| v.is_finite())
            }
            ProbModel::NearestCentroid(m) => {
                m.centroids.iter().all(|v| v.is_finite()) && m.temperature.is_finite()
            }
        }
    }
}

/// Trains a fresh model on `examples` with per-instance loss weights.
///
/// The caller is expected to pass L1-normalized weights.
pub fn train_weighted(
    examples: &[Example<'_>],
    sample_weights: &[f64],
    num_classes: usize,
    config: &ClassifierConfig,
) -> Result<ProbModel> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if examples.len() != sample_weights.len() {
        return Err(Error::InvalidConfig(format!(
            "{} examples but {} weights",
            examples.len(),
            sample_weights.len()
        )));
    }
    let dim = examples[0].0.len();
    for &(x, y) in examples {
        if x.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: x.len(),
            });
        }
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                line: 0,
                label: y,
                num_classes,
            });
        }
    }
    match config.kind {
        ClassifierKind::LogisticRegression => {
            let first = examples[0].1;
            if examples.iter().all(|&(_, y)| y == first) {
                tracing::warn!(class = first, "training on a single-class labeled pool");
            }
            Ok(ProbModel::LogisticRegression(LogisticRegression::fit(
                examples,
                sample_weights,
                num_classes,
                dim,
                config.learning_rate,
                config.epochs,
            )))
        }
        ClassifierKind::NearestCentroid => Ok(ProbModel::NearestCentroid(NearestCentroid::fit(
            examples,
            sample_weights,
            num_classes,
            dim,
            config.temperature,
        )?)),
    }
}
