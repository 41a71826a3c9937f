//! Per-run output directories and their manifests.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    created: String,
    /// Hash of command, version, settings and input hashes. Runs sharing it
    /// produce byte-identical outputs.
    run_hash: String,
    settings: &'a serde_json::Value,
    inputs: &'a [FileHash],
    outputs: Vec<FileHash>,
}

/// A fresh directory `<root>/<command>-<timestamp>`.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    inputs: Vec<FileHash>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str) -> Result<Self> {
        let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
        let mut path = root.join(format!("{command}-{stamp}"));
        let mut k = 1;
        while path.exists() {
            k += 1;
            path = root.join(format!("{command}-{stamp}-{k}"));
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating run directory {}", path.display()))?;
        Ok(Self { path, command: command.into(), inputs: Vec::new() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileHash { path: path.display().to_string(), sha256: sha256_file(path)? });
        Ok(())
    }

    /// Writes `config.json` and `manifest.json`; every other file in the
    /// directory is listed as an output.
    pub fn finish<S: Serialize>(self, settings: &S) -> Result<PathBuf> {
        let settings = serde_json::to_value(settings)?;
        std::fs::write(self.file("config.json"), serde_json::to_vec_pretty(&settings)?)?;
        let version = env!("CARGO_PKG_VERSION");
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update(version.as_bytes());
        h.update(serde_json::to_vec(&settings)?);
        for i in &self.inputs {
            h.update(i.sha256.as_bytes());
        }
        let mut names: Vec<String> = std::fs::read_dir(&self.path)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.json")
            .collect();
        names.sort();
        let outputs =
            names.iter().map(|n| Ok(FileHash { path: n.clone(), sha256: sha256_file(&self.file(n))? })).collect::<Result<_>>()?;
        let m = Manifest {
            command: &self.command,
            version,
            created: chrono::Local::now().to_rfc3339(),
            run_hash: hex::encode(h.finalize()),
            settings: &settings,
            inputs: &self.inputs,
            outputs,
        };
        std::fs::write(self.file("manifest.json"), serde_json::to_vec_pretty(&m)?)?;
        Ok(self.path)
    }
}
