use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io, SkeletonSequence, SyntheticSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub label: usize,
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub class_names: Vec<String>,
    pub entries: Vec<DatasetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
}

/// A labelled collection of sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub samples: Vec<SkeletonSequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Applies `f` to every sample, keeping the class names.
    pub fn map<F>(&self, f: F) -> Result<Dataset>
    where
        F: Fn(&SkeletonSequence) -> Result<SkeletonSequence>,
    {
        Ok(Dataset {
            class_names: self.class_names.clone(),
            samples: self.samples.iter().map(f).collect::<Result<_>>()?,
        })
    }

    /// Stratified split: within each class a seeded shuffle puts
    /// `round(count · val_fraction)` samples into the second dataset.
    /// Relative sample order is preserved in both halves.
    pub fn split(&self, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::invalid(format!(
                "validation fraction must lie in [0, 1), got {val_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut is_val = vec![false; self.len()];
        for class in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.len())
                .filter(|&i| self.samples[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_val = (idx.len() as f64 * val_fraction).round() as usize;
            for &i in &idx[..n_val] {
                is_val[i] = true;
            }
        }
        let pick = |want: bool| Dataset {
            class_names: self.class_names.clone(),
            samples: self
                .samples
                .iter()
                .zip(&is_val)
                .filter(|(_, &v)| v == want)
                .map(|(s, _)| s.clone())
                .collect(),
        };
        Ok((pick(false), pick(true)))
    }

    /// Writes one canonical sequence file per sample plus `manifest.json`.
    pub fn save_dir(
        &self,
        dir: impl AsRef<Path>,
        synthetic: Option<&SyntheticSpec>,
    ) -> Result<DatasetManifest> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, seq) in self.samples.iter().enumerate() {
            let file = format!("seq_{i:05}.json");
            io::save(seq, dir.join(&file))?;
            entries.push(DatasetEntry {
                file,
                label: seq.label,
            });
        }
        let manifest = DatasetManifest {
            version: 1,
            class_names: self.class_names.clone(),
            entries,
            synthetic: synthetic.cloned(),
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        let mut samples = Vec::with_capacity(manifest.entries.len());
        for entry in &manifest.entries {
            let file = dir.join(&entry.file);
            let seq = io::load(&file)?;
            if seq.label != entry.label || seq.label >= manifest.class_names.len() {
                return Err(Error::Format {
                    path: file,
                    reason: format!(
                        "label {} disagrees with manifest label {} ({} classes)",
                        seq.label,
                        entry.label,
                        manifest.class_names.len()
                    ),
                });
            }
            samples.push(seq);
        }
        Ok(Dataset {
            class_names: manifest.class_names,
            samples,
        })
    }
}
