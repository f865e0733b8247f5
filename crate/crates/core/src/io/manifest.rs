//! Ordered dataset manifests. Entry order defines the latent index of each
//! image, so checkpoints record a hash of the manifest.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::load_image;
use crate::data::Dataset;
use crate::error::{LcmError, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    /// Path relative to the manifest root.
    pub path: PathBuf,
    /// Target `[C, H, W]`.
    pub shape: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    /// Image root; relative roots are resolved against the manifest's directory.
    pub root: PathBuf,
    /// Images are resized to the entry shape, each axis independently.
    pub resize: String,
    pub entries: Vec<ManifestEntry>,
}

pub const RESIZE_POLICY: &str = "anisotropic-bilinear";

impl DatasetManifest {
    pub fn new(root: impl Into<PathBuf>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = DatasetManifest {
            root: root.into(),
            resize: RESIZE_POLICY.to_string(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize != RESIZE_POLICY {
            return Err(LcmError::Manifest(format!("unknown resize policy `{}`", self.resize)));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(LcmError::Manifest(format!("duplicate id `{}`", e.id)));
            }
            if e.shape.iter().any(|&d| d == 0) || !matches!(e.shape[0], 1 | 3) {
                return Err(LcmError::Manifest(format!("entry `{}` has invalid shape {:?}", e.id, e.shape)));
            }
        }
        if let Some(first) = self.entries.first() {
            if let Some(e) = self.entries.iter().find(|e| e.shape != first.shape) {
                return Err(LcmError::Manifest(format!(
                    "entry `{}` has shape {:?} but `{}` has {:?}",
                    e.id, e.shape, first.id, first.shape
                )));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.id.clone()).collect()
    }

    /// SHA-256 over the ordered `(id, path, shape)` entries, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            h.update(e.id.as_bytes());
            h.update([0]);
            h.update(e.path.to_string_lossy().as_bytes());
            h.update([0]);
            for d in e.shape {
                h.update((d as u64).to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| LcmError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LcmError::io(path, e))?;
        let m: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| LcmError::Manifest(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    /// Image root for a manifest stored at `manifest_path`.
    pub fn resolved_root(&self, manifest_path: &Path) -> PathBuf {
        if self.root.is_absolute() {
            self.root.clone()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(&self.root)
        }
    }

    /// Loads every entry in order.
    pub fn load_dataset<T: Real>(&self, root: &Path) -> Result<Dataset<T>> {
        let images = self
            .entries
            .iter()
            .map(|e| load_image(&root.join(&e.path), e.shape[0], e.shape[1], e.shape[2]))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.ids(), images)
    }
}
