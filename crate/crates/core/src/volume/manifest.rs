use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CohortLabel {
    Healthy,
    Anomalous,
}

impl CohortLabel {
    /// 1 for anomalous, 0 for healthy.
    pub fn as_binary(self) -> u8 {
        match self {
            CohortLabel::Healthy => 0,
            CohortLabel::Anomalous => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume: PathBuf,
    pub label: CohortLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
}

/// Subject list driving training and evaluation. On disk it is a bare JSON
/// array of entries; relative paths resolve against the manifest's folder.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
}

impl CohortManifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::Format(format!("duplicate subject id '{}'", e.id)));
            }
        }
        Ok(Self { entries, seed })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut entries {
            e.volume = resolve(base, &e.volume);
            e.mask = e.mask.as_ref().map(|m| resolve(base, m));
            for p in std::iter::once(&e.volume).chain(e.mask.as_ref()) {
                let sidecar = p.with_extension("json");
                if !p.exists() && !sidecar.exists() {
                    return Err(Error::Format(format!("subject '{}': {} not found", e.id, p.display())));
                }
            }
        }
        Self::new(entries, 0)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.entries)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn with_label(&self, label: CohortLabel) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.label == label)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
