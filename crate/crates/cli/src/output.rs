//! Atomic file writes and run manifests.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to a temporary sibling of `path`, syncs it, then renames it
/// into place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Path of the manifest that accompanies an output file.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize, serde::Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub versions: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
    pub config_file: Option<String>,
    pub config_from_file: BTreeMap<String, String>,
    pub config_from_flags: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    /// Output path to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub notes: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(config: &RunConfig) -> Manifest {
        let mut versions = BTreeMap::new();
        versions.insert("flr-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        versions.insert("manifest-format".to_string(), "1".to_string());
        Manifest {
            command: config.kind.name().to_string(),
            versions,
            config: config.sources.effective(),
            config_file: config.sources.config_file.as_ref().map(|p| p.display().to_string()),
            config_from_file: config.sources.file.clone(),
            config_from_flags: config.sources.flags.clone(),
            seeds: Vec::new(),
            outputs: BTreeMap::new(),
            notes: BTreeMap::new(),
        }
    }

    /// Atomically writes an output and records its hash.
    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        write_atomic(path, bytes)?;
        self.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> io::Result<Manifest> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("out.csv");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"second");
        let leftovers: Vec<_> = fs::read_dir(p.parent().unwrap()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(manifest_path(Path::new("a/b.csv")), PathBuf::from("a/b.csv.manifest.json"));
    }
}
