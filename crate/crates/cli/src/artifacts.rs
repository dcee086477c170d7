//! Atomic output files and run manifests.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Settings;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a Settings,
    config_sha256: String,
    scorer_id: Option<&'a str>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

/// Collects the digests of a run's inputs and outputs and writes the
/// manifest next to the primary output.
pub struct Run<'a> {
    command: &'a str,
    settings: &'a Settings,
    scorer_id: Option<String>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'a str, settings: &'a Settings) -> Self {
        Self {
            command,
            settings,
            scorer_id: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn scorer_id(&mut self, id: &str) {
        self.scorer_id = Some(id.to_string());
    }

    /// Reads an input file and records its digest.
    pub fn input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_input(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn manifest_path(primary: &Path) -> PathBuf {
        if primary.is_dir() {
            return primary.join("manifest.json");
        }
        let mut name = primary.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        primary.with_file_name(name)
    }

    pub fn finish(self, primary: &Path) -> Result<()> {
        let config_json = serde_json::to_vec(self.settings)?;
        let manifest = Manifest {
            tool: "xfaith",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config: self.settings,
            config_sha256: sha256_hex(&config_json),
            scorer_id: self.scorer_id.as_deref(),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        write_atomic(&Self::manifest_path(primary), &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn manifest_sits_next_to_output() {
        assert_eq!(Run::manifest_path(Path::new("a/b.jsonl")), Path::new("a/b.jsonl.manifest.json"));
    }
}
