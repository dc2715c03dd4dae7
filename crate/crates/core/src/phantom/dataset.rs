use std::fs;
use std::path::{Path, PathBuf};

use super::{read_volume, write_volume, MultiPhaseSample};
use crate::error::{Error, Result};

/// Name of the index file inside a dataset directory.
pub const MANIFEST: &str = "manifest.txt";

/// One `id label path` line of the manifest; `path` is relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub label: u8,
    pub path: PathBuf,
}

/// Write every sample as `sample_<id>.mpv` plus the manifest.
pub fn write_dataset(dir: &Path, samples: &[MultiPhaseSample]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let rel = PathBuf::from(format!("sample_{}.mpv", s.id));
        write_volume(s, &dir.join(&rel))?;
        manifest.push_str(&format!("{} {} {}\n", s.id, s.label, rel.display()));
        entries.push(ManifestEntry {
            id: s.id.clone(),
            label: s.label,
            path: rel,
        });
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(entries)
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)?;
    let malformed = |detail: String| Error::Malformed {
        path: path.clone(),
        detail,
    };
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [id, label, rel] = parts[..] else {
            return Err(malformed(format!("line {}: expected `id label path`", no + 1)));
        };
        let label = match label {
            "0" => 0,
            "1" => 1,
            _ => return Err(malformed(format!("line {}: label `{label}`", no + 1))),
        };
        if entries.iter().any(|e| e.id == id) {
            return Err(malformed(format!("duplicate id `{id}`")));
        }
        entries.push(ManifestEntry {
            id: id.to_string(),
            label,
            path: PathBuf::from(rel),
        });
    }
    Ok(entries)
}

/// Manifest plus every sample it lists, in manifest order. Labels must agree.
pub fn load_dataset(dir: &Path) -> Result<(Vec<ManifestEntry>, Vec<MultiPhaseSample>)> {
    let entries = read_manifest(dir)?;
    let mut samples = Vec::with_capacity(entries.len());
    for e in &entries {
        let path = dir.join(&e.path);
        let s = read_volume(&path)?;
        if s.label != e.label || s.id != e.id {
            return Err(Error::Malformed {
                path,
                detail: format!("file says id {} label {}, manifest says id {} label {}", s.id, s.label, e.id, e.label),
            });
        }
        samples.push(s);
    }
    Ok((entries, samples))
}
