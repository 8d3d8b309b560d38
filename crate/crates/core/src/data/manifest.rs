use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bag::{bag_header, bag_read, BagRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub label: usize,
    pub split: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Sidecar {
    num_classes: usize,
    feature_dim: usize,
}

/// Dataset index: a `path,label,split` CSV plus a JSON sidecar with the class
/// count and feature width.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Directory relative entry paths resolve against.
    pub root: PathBuf,
}

/// `foo/manifest.csv` → `foo/manifest.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.path)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn split(&self, tag: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == tag).collect()
    }

    pub fn split_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = Vec::new();
        for e in &self.entries {
            if !tags.contains(&e.split) {
                tags.push(e.split.clone());
            }
        }
        tags
    }

    /// Reads every bag of a split, in manifest order.
    pub fn load_split(&self, tag: &str) -> Result<Vec<BagRecord>> {
        let entries = self.split(tag);
        if entries.is_empty() {
            return Err(Error::Data(format!("split `{tag}` is empty")));
        }
        entries
            .into_iter()
            .map(|e| {
                let bag = bag_read(self.resolve(e))?;
                if bag.label != e.label || bag.dim() != self.feature_dim {
                    return Err(Error::Data(format!(
                        "{}: file has label {} and d={}, manifest says label {} and d={}",
                        e.path.display(),
                        bag.label,
                        bag.dim(),
                        e.label,
                        self.feature_dim
                    )));
                }
                Ok(bag)
            })
            .collect()
    }

    /// Checks labels against the class count and that every file exists with
    /// the declared feature width.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.feature_dim == 0 {
            return Err(Error::Data("num_classes and feature_dim must be positive".into()));
        }
        for e in &self.entries {
            if e.label >= self.num_classes {
                return Err(Error::Data(format!(
                    "{}: label {} >= num_classes {}",
                    e.path.display(),
                    e.label,
                    self.num_classes
                )));
            }
            let (_, d, _) = bag_header(self.resolve(e))?;
            if d != self.feature_dim {
                return Err(Error::Data(format!(
                    "{}: feature dim {d}, manifest says {}",
                    e.path.display(),
                    self.feature_dim
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, csv_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(csv_path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let sidecar = Sidecar {
            num_classes: self.num_classes,
            feature_dim: self.feature_dim,
        };
        let json_path = sidecar_path(csv_path);
        let mut text = serde_json::to_string_pretty(&sidecar)?;
        text.push('\n');
        std::fs::write(&json_path, text).map_err(|e| Error::io(json_path, e))
    }

    pub fn read(csv_path: impl AsRef<Path>) -> Result<Self> {
        let csv_path = csv_path.as_ref();
        let json_path = sidecar_path(csv_path);
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        let mut r = csv::Reader::from_path(csv_path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let root = csv_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Self {
            entries,
            num_classes: sidecar.num_classes,
            feature_dim: sidecar.feature_dim,
            root,
        })
    }
}
