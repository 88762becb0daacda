//! Dataset manifest: a JSON index pairing target structures with their
//! synthesized priors, plus the noise settings that produced them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structure::{NoiseSpec, Selection};

/// One target/prior pair. Paths are stored as written; relative paths are
/// interpreted against the manifest file's directory (see [`resolve_path`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub target: String,
    pub prior: String,
    /// Refined spans in `chain:start-end` form, e.g. `"H:95-102"`.
    pub selections: Vec<String>,
}

impl ManifestPair {
    pub fn parsed_selections(&self) -> Result<Vec<Selection>> {
        if self.selections.is_empty() {
            return Err(Error::Manifest(format!(
                "pair {} has no selections",
                self.target
            )));
        }
        self.selections.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub pairs: Vec<ManifestPair>,
    pub noise: NoiseSpec,
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Manifest> {
        let manifest: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn to_json(&self) -> String {
        // Serialization of these plain structs cannot fail.
        serde_json::to_string_pretty(self).expect("manifest serialization")
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        Manifest::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    /// Structural checks: at least one pair, every selection parses, noise
    /// settings are sane.
    pub fn validate(&self) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::Manifest("manifest has no pairs".into()));
        }
        for pair in &self.pairs {
            pair.parsed_selections()?;
        }
        self.noise.validate()
    }
}

/// Interprets a manifest path entry relative to the manifest's directory;
/// absolute entries pass through unchanged.
pub fn resolve_path(manifest_path: &Path, entry: &str) -> PathBuf {
    let p = Path::new(entry);
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match manifest_path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir.join(p),
        _ => p.to_path_buf(),
    }
}
