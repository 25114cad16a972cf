//! Resolves dataset names to loaded datasets.
//!
//! Built-in synthetic datasets are generated on first use. Anything else is
//! looked up under `<data_dir>/datasets/<name>/` as `train.jsonl`,
//! `test.jsonl` and an optional `meta.json` (`{"num_classes": .., "metric": ..}`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use hast_core::data::{generate_blobs, load_dataset, LoadOptions};
use hast_core::{Dataset, Error, Metric, Result};
use serde::Deserialize;

/// Blob separation used by the built-in benchmarks. At this distance a
/// nearest-true-centroid classifier is ~99.6% accurate on 16 dimensions.
pub const BLOB_SEPARATION: f64 = 6.0;
pub const BLOB_SEED: u64 = 7;

/// `(name, classes, train per class, dim)`
const BUILTINS: &[(&str, usize, usize, usize)] = &[("blobs4", 4, 500, 16), ("blobs2", 2, 150, 8)];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|b| b.0).collect()
}

pub fn builtin(name: &str) -> Option<Result<Dataset>> {
    BUILTINS.iter().find(|b| b.0 == name).map(|&(name, classes, per_class, dim)| {
        generate_blobs(classes, per_class, dim, BLOB_SEPARATION, BLOB_SEED).map(|mut ds| {
            ds.name = name.to_string();
            ds
        })
    })
}

#[derive(Debug, Default, Deserialize)]
struct Meta {
    num_classes: Option<usize>,
    metric: Option<Metric>,
}

pub fn load_from_dir(dir: &Path, name: &str) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let meta: Meta = if meta_path.exists() {
        let raw = std::fs::read_to_string(&meta_path).map_err(|source| Error::Io {
            path: meta_path.clone(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?
    } else {
        Meta::default()
    };
    let test = dir.join("test.jsonl");
    let opts = LoadOptions {
        name: name.to_string(),
        num_classes: meta.num_classes,
        metric: meta.metric.unwrap_or(Metric::Accuracy),
    };
    load_dataset(&dir.join("train.jsonl"), test.exists().then_some(test.as_path()), &opts)
}

/// Caches loaded datasets by name.
#[derive(Default)]
pub struct DatasetRegistry {
    data_dir: Option<PathBuf>,
    loaded: Mutex<HashMap<String, Arc<Dataset>>>,
}

impl DatasetRegistry {
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Self {
            data_dir,
            loaded: Mutex::default(),
        }
    }

    /// Registers an already loaded dataset under its name.
    pub fn insert(&self, dataset: Dataset) -> Arc<Dataset> {
        let ds = Arc::new(dataset);
        self.loaded
            .lock()
            .unwrap()
            .insert(ds.name.clone(), ds.clone());
        ds
    }

    /// `Ok(None)` when no dataset of that name exists.
    pub fn get(&self, name: &str) -> Result<Option<Arc<Dataset>>> {
        if let Some(ds) = self.loaded.lock().unwrap().get(name) {
            return Ok(Some(ds.clone()));
        }
        let dataset = if let Some(ds) = builtin(name) {
            ds?
        } else {
            let valid = !name.is_empty()
                && name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
            let dir = match &self.data_dir {
                Some(d) if valid => d.join("datasets").join(name),
                _ => return Ok(None),
            };
            if !dir.join("train.jsonl").exists() {
                return Ok(None);
            }
            load_from_dir(&dir, name)?
        };
        Ok(Some(self.insert(dataset)))
    }
}
