//! Run manifests: what a command read, how it was configured and what it
//! wrote.

use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: PathBuf,
    /// For a directory, the digest of its sorted `name\0digest\n` listing.
    pub sha256: String,
    /// Number of files hashed (1 for a plain file).
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub tool_version: String,
    pub created: String,
    pub seed: Option<u64>,
    /// Fully resolved configuration, after presets, files and flags.
    pub config: serde_json::Value,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(hash_path(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: impl Into<PathBuf>) {
        self.outputs.push(path.into());
    }

    /// Writes `run_manifest.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).with_context(|| format!("reading {}", path.display()))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(&hasher.finalize()))
}

/// Hashes a file, or the regular files directly inside a directory.
pub fn hash_path(path: &Path) -> Result<InputHash> {
    if !path.is_dir() {
        return Ok(InputHash {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
            files: 1,
        });
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            names.push(entry.file_name());
        }
    }
    names.sort();
    let mut hasher = Sha256::new();
    for name in &names {
        hasher.update(name.to_string_lossy().as_bytes());
        hasher.update([0]);
        hasher.update(sha256_file(&path.join(name))?.as_bytes());
        hasher.update([b'\n']);
    }
    Ok(InputHash {
        path: path.to_path_buf(),
        sha256: hex(&hasher.finalize()),
        files: names.len(),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
