use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_bag, FeatureBag, Label};
use crate::error::{Error, Result};

pub const FRAMES_PER_SNIPPET: usize = 16;

/// Dataset index. Entry paths are resolved relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dim: usize,
    pub frames_per_snippet: usize,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub path: String,
    pub video_id: String,
    pub label: Label,
}

impl Manifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if manifest.frames_per_snippet != FRAMES_PER_SNIPPET {
            return Err(Error::Data(format!(
                "{}: frames_per_snippet must be {FRAMES_PER_SNIPPET}, got {}",
                path.display(),
                manifest.frames_per_snippet
            )));
        }
        Ok(manifest)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

/// Loads every bag of a manifest, rejecting dimension mismatches.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<(Manifest, Vec<FeatureBag>)> {
    let manifest_path = manifest_path.as_ref();
    let manifest = Manifest::read(manifest_path)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(PathBuf::new);
    let mut bags = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let bag = read_bag(base.join(&entry.path), &entry.video_id, entry.label)?;
        if bag.dim() != manifest.dim {
            return Err(Error::Data(format!(
                "{}: feature dimension {} does not match manifest dim {}",
                entry.path,
                bag.dim(),
                manifest.dim
            )));
        }
        bags.push(bag);
    }
    Ok((manifest, bags))
}
