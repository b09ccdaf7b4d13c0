//! Line-delimited JSON manifests describing recorded tensors.
//!
//! Each non-empty line is one record, for example
//!
//! ```text
//! {"frame":0,"step":3,"layer":"up1.attn","head":0,"kind":"cross_q","path":"f0000/s003_up1.attn_h0_q.eyit","h":16,"w":16}
//! ```
//!
//! Lines starting with `#` are comments. Paths are relative to the
//! manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::IoError;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    SpatialFeatures,
    CrossQ,
    CrossK,
    Latent,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecordKind::SpatialFeatures => "spatial_features",
            RecordKind::CrossQ => "cross_q",
            RecordKind::CrossK => "cross_k",
            RecordKind::Latent => "latent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub frame: usize,
    pub step: usize,
    pub layer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    pub kind: RecordKind,
    pub path: String,
    pub h: usize,
    pub w: usize,
}

impl ManifestRecord {
    pub fn key(&self) -> (usize, usize, &str, Option<usize>, RecordKind) {
        (self.frame, self.step, &self.layer, self.head, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl RecordManifest {
    pub fn resolve(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.path)
    }
}

/// Parses `dir/manifest.jsonl` and checks that every referenced file exists.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<RecordManifest, IoError> {
    let root = dir.as_ref().to_path_buf();
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| IoError::io(&path, e))?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| IoError::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.h == 0 || rec.w == 0 {
            return Err(IoError::Manifest {
                line: line_no,
                message: "spatial shape must be positive".into(),
            });
        }
        let key = (rec.frame, rec.step, rec.layer.clone(), rec.head, rec.kind);
        if !seen.insert(key) {
            return Err(IoError::Manifest {
                line: line_no,
                message: format!(
                    "duplicate record (frame {}, step {}, layer {}, head {:?}, {})",
                    rec.frame, rec.step, rec.layer, rec.head, rec.kind
                ),
            });
        }
        let file = root.join(&rec.path);
        if !file.is_file() {
            return Err(IoError::MissingFile(file));
        }
        records.push(rec);
    }
    Ok(RecordManifest { root, records })
}

/// Writes `dir/manifest.jsonl` atomically (temporary file, then rename).
pub fn write_manifest(dir: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<PathBuf, IoError> {
    let dir = dir.as_ref();
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("manifest records serialize"));
        text.push('\n');
    }
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    let path = dir.join(MANIFEST_FILE);
    fs::write(&tmp, text).map_err(|e| IoError::io(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| IoError::io(&path, e))?;
    Ok(path)
}
