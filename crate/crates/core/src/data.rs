//! Instances, datasets, JSONL ingestion and synthetic Gaussian blobs.
//!
//! Embeddings are consumed as fixed feature vectors. Every dataset built
//! through [`Dataset::new`] has its embeddings L2-normalized, so cosine
//! similarity between two instances is a plain dot product.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random;
use crate::vector::l2_normalize;

/// One pool element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    /// Dense id, assigned in file order. Test ids follow the train ids.
    pub id: usize,
    /// Id as it appeared in the source file, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub embedding: Vec<f64>,
    /// Ground truth. Only the oracle and the evaluator look at it.
    pub true_label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Accuracy,
    MacroF1,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::MacroF1 => "macro-f1",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "macro-f1" => Ok(Metric::MacroF1),
            other => Err(Error::UnknownVariant {
                kind: "metric",
                value: other.to_string(),
                expected: "accuracy, macro-f1".to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub dim: usize,
    pub metric: Metric,
    pub instances: Vec<Instance>,
    pub test_instances: Vec<Instance>,
}

impl Dataset {
    /// Validates and assembles a dataset. Ids are reassigned densely: train
    /// instances get `0..n` in the given order, test instances `n..n+m`.
    pub fn new(
        name: impl Into<String>,
        mut instances: Vec<Instance>,
        mut test_instances: Vec<Instance>,
        num_classes: usize,
        metric: Metric,
    ) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_classes == 0 {
            return Err(Error::InvalidDataset("num_classes must be positive".into()));
        }
        let dim = instances[0].embedding.len();
        if dim == 0 {
            return Err(Error::InvalidDataset("embeddings must be non-empty".into()));
        }
        let n = instances.len();
        let mut present = vec![false; num_classes];
        for (pos, inst) in instances.iter_mut().chain(test_instances.iter_mut()).enumerate() {
            if inst.embedding.len() != dim {
                return Err(Error::Dimension {
                    line: line_of(pos, n),
                    expected: dim,
                    found: inst.embedding.len(),
                });
            }
            if inst.embedding.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parse {
                    line: line_of(pos, n),
                    message: "embedding contains a non-finite value".into(),
                });
            }
            if inst.true_label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    line: line_of(pos, n),
                    label: inst.true_label,
                    num_classes,
                });
            }
            if pos < n {
                present[inst.true_label] = true;
            }
            inst.id = pos;
            l2_normalize(&mut inst.embedding);
        }
        if let Some(missing) = present.iter().position(|p| !p) {
            return Err(Error::InvalidDataset(format!(
                "class {missing} does not occur in the training data"
            )));
        }
        Ok(Self {
            name: name.into(),
            num_classes,
            dim,
            metric,
            instances,
            test_instances,
        })
    }

    pub fn train_len(&self) -> usize {
        self.instances.len()
    }

    /// Looks up a training instance by id.
    pub fn train(&self, id: usize) -> &Instance {
        &self.instances[id]
    }

    pub fn embedding(&self, id: usize) -> &[f64] {
        &self.instances[id].embedding
    }

    pub fn is_train_id(&self, id: usize) -> bool {
        id < self.instances.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for inst in &self.instances {
            counts[inst.true_label] += 1;
        }
        counts
    }
}

// Validation errors report 1-based positions within the file the instance came from.
fn line_of(pos: usize, train_len: usize) -> usize {
    if pos < train_len {
        pos + 1
    } else {
        pos - train_len + 1
    }
}

#[derive(Debug, Deserialize)]
struct JsonlRecord {
    id: i64,
    #[serde(default)]
    text: Option<String>,
    embedding: Vec<f64>,
    label: usize,
}

/// Reads a JSONL file of `{"id", "text"?, "embedding", "label"}` objects.
/// Blank lines are skipped; everything else must parse.
pub fn read_jsonl(path: &Path) -> Result<Vec<Instance>> {
    let content = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_jsonl(&content)
}

pub fn parse_jsonl(content: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    let mut dim = None;
    for (idx, line) in content.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = *dim.get_or_insert(rec.embedding.len());
        if rec.embedding.len() != expected {
            return Err(Error::Dimension {
                line: line_no,
                expected,
                found: rec.embedding.len(),
            });
        }
        if rec.embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: "embedding contains a non-finite value".into(),
            });
        }
        out.push(Instance {
            id: out.len(),
            source_id: Some(rec.id),
            text: rec.text,
            embedding: rec.embedding,
            true_label: rec.label,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub name: String,
    /// Inferred as `max(train label) + 1` when absent.
    pub num_classes: Option<usize>,
    pub metric: Metric,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            name: "dataset".into(),
            num_classes: None,
            metric: Metric::Accuracy,
        }
    }
}

/// Loads a train file and an optional test file into a validated [`Dataset`].
pub fn load_dataset(train: &Path, test: Option<&Path>, opts: &LoadOptions) -> Result<Dataset> {
    let train_instances = read_jsonl(train)?;
    let test_instances = match test {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let num_classes = match opts.num_classes {
        Some(c) => c,
        None => train_instances.iter().map(|i| i.true_label).max().unwrap_or(0) + 1,
    };
    let train_dim = train_instances[0].embedding.len();
    if let Some(first) = test_instances.first() {
        if first.embedding.len() != train_dim {
            return Err(Error::Dimension {
                line: 1,
                expected: train_dim,
                found: first.embedding.len(),
            });
        }
    }
    let mut seen = std::collections::HashSet::new();
    for inst in train_instances.iter().chain(&test_instances) {
        if let Some(sid) = inst.source_id {
            if !seen.insert(sid) {
                return Err(Error::InvalidDataset(format!("duplicate id {sid}")));
            }
        }
    }
    Dataset::new(
        opts.name.clone(),
        train_instances,
        test_instances,
        num_classes,
        opts.metric,
    )
}

/// Centroids for [`generate_blobs`]: class `c` sits on axis `c mod dim`
/// (negated for the second pass over the axes) at radius `separation / sqrt(2)`,
/// so any two centroids are at least `separation` apart.
pub fn blob_centroids(num_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let radius = separation / std::f64::consts::SQRT_2;
    (0..num_classes)
        .map(|c| {
            let mut v = vec![0.0; dim];
            let sign = if c < dim { 1.0 } else { -1.0 };
            v[c % dim] = sign * radius;
            v
        })
        .collect()
}

/// Isotropic unit-variance Gaussian clusters around [`blob_centroids`].
///
/// `per_class` is the number of training points per class; another
/// `per_class / 2` per class go to the test split.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 || separation.is_nan() || separation <= 0.0 {
        return Err(Error::InvalidConfig(
            "blob parameters must all be positive".into(),
        ));
    }
    if num_classes > 2 * dim {
        return Err(Error::InvalidConfig(format!(
            "at most {} classes fit in {dim} dimensions",
            2 * dim
        )));
    }
    let mut rng = random::seeded(seed);
    let centroids = blob_centroids(num_classes, dim, separation);
    let test_per_class = per_class / 2;
    let mut train = Vec::with_capacity(num_classes * per_class);
    let mut test = Vec::with_capacity(num_classes * test_per_class);
    for (label, centroid) in centroids.iter().enumerate() {
        for i in 0..per_class + test_per_class {
            let embedding: Vec<f64> = centroid
                .iter()
                .map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            let inst = Instance {
                id: 0,
                source_id: None,
                text: None,
                embedding,
                true_label: label,
            };
            if i < per_class {
                train.push(inst);
            } else {
                test.push(inst);
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let name = format!("blobs-c{num_classes}-n{per_class}-d{dim}-s{separation}-r{seed}");
    Dataset::new(name, train, test, num_classes, Metric::Accuracy)
}
