//! JSON-lines dataset manifests. Paths are stored relative to the manifest's
//! directory so a dataset can be moved as a unit.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ForgeError;
use crate::light::{Camera, LightParams};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Track1,
    Track2,
    Track3,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Track1 => "track1",
            Split::Track2 => "track2",
            Split::Track3 => "track3",
        }
    }

    pub fn track(id: u8) -> Option<Split> {
        match id {
            1 => Some(Split::Track1),
            2 => Some(Split::Track2),
            3 => Some(Split::Track3),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Split::Train, Split::Track1, Split::Track2, Split::Track3]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub version: u32,
    pub id: String,
    pub split: Split,
    pub mesh: String,
    pub params: LightParams,
    /// Shadow-sampling seed.
    pub seed: u64,
    /// Z-rotation applied to the mesh before rendering, degrees.
    pub rotation: f64,
    pub camera: Camera,
    pub preview: PathBuf,
    pub mask: PathBuf,
    pub shadow: PathBuf,
    pub meta: PathBuf,
}

impl ManifestEntry {
    pub fn files(&self) -> [&Path; 4] {
        [&self.preview, &self.mask, &self.shadow, &self.meta]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), ForgeError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| ForgeError::io(dir, e))?;
        }
        fs::write(path, self.to_jsonl()).map_err(|e| ForgeError::io(path, e))
    }

    /// Parses a manifest and checks that every referenced file exists.
    pub fn read(path: &Path) -> Result<Self, ForgeError> {
        let text = fs::read_to_string(path).map_err(|e| ForgeError::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry =
                serde_json::from_str(line).map_err(|e| ForgeError::Manifest {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if entry.version != MANIFEST_VERSION {
                return Err(ForgeError::Manifest {
                    line: i + 1,
                    message: format!("unsupported version {}", entry.version),
                });
            }
            for f in entry.files() {
                let full = root.join(f);
                if !full.is_file() {
                    return Err(ForgeError::MissingFile(full));
                }
            }
            entries.push(entry);
        }
        Ok(DatasetManifest { root, entries })
    }
}
