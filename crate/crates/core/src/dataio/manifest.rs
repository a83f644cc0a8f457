//! JSON-lines dataset manifests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataio::tensor_file::write_atomic;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub audio_path: PathBuf,
    pub caption: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

pub fn to_jsonl(records: &[ClipRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl(text: &str) -> Result<Vec<ClipRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: Some(i + 1),
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    write_atomic(path, to_jsonl(records)?.as_bytes())
}

/// Reads a manifest and resolves audio paths relative to its directory.
/// Every referenced file must exist; durations, when recorded, must lie in
/// `bounds`.
pub fn load_manifest(path: &Path, bounds: Option<(f64, f64)>) -> Result<Vec<ClipRecord>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = from_jsonl(&std::fs::read_to_string(path)?)?;
    for r in &mut records {
        if r.audio_path.is_relative() {
            r.audio_path = base.join(&r.audio_path);
        }
        if !r.audio_path.exists() {
            return Err(Error::NotFound(r.audio_path.clone()));
        }
        if let (Some(d), Some((lo, hi))) = (r.duration_s, bounds) {
            if d < lo || d > hi {
                return Err(Error::InvalidInput(format!(
                    "{}: duration {d} s outside [{lo}, {hi}]",
                    r.audio_path.display()
                )));
            }
        }
    }
    Ok(records)
}
