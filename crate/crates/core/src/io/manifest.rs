//! Dataset manifests: volume paths with split tags and the class universe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Volume path, relative to the manifest file's directory.
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub n_clas: u16,
    #[serde(default)]
    pub class_names: Vec<String>,
    /// Class ids excluded from macro metrics.
    #[serde(default)]
    pub background_classes: Vec<u16>,
    pub volumes: Vec<ManifestEntry>,
    /// Directory the entry paths resolve against (set on load).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        if self.n_clas == 0 {
            return Err(Error::BadConfig("manifest needs at least one class".into()));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.n_clas as usize {
            return Err(Error::BadConfig(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.n_clas
            )));
        }
        if self.background_classes.iter().any(|&c| c == 0 || c > self.n_clas) {
            return Err(Error::BadConfig("background class id outside universe".into()));
        }
        if self.volumes.is_empty() {
            return Err(Error::BadConfig("manifest lists no volumes".into()));
        }
        Ok(())
    }

    pub fn class_name(&self, c: u16) -> String {
        self.class_names
            .get((c - 1) as usize)
            .cloned()
            .unwrap_or_else(|| format!("class{c}"))
    }

    /// Classes that count toward macro metrics.
    pub fn foreground_classes(&self) -> Vec<u16> {
        (1..=self.n_clas).filter(|c| !self.background_classes.contains(c)).collect()
    }

    pub fn entries(&self, split: Split) -> Vec<(PathBuf, &ManifestEntry)> {
        self.volumes
            .iter()
            .filter(|e| e.split == split)
            .map(|e| (self.base_dir.join(&e.path), e))
            .collect()
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let bytes = std::fs::read(path)?;
    let mut manifest: Manifest = serde_json::from_slice(&bytes)?;
    manifest.base_dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    manifest.validate()?;
    for (resolved, _) in manifest
        .entries(Split::Train)
        .into_iter()
        .chain(manifest.entries(Split::Val))
        .chain(manifest.entries(Split::Test))
    {
        if !resolved.exists() {
            return Err(Error::BadConfig(format!("volume {} not found", resolved.display())));
        }
    }
    Ok(manifest)
}

pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(manifest)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}
