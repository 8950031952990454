//! Output-directory plumbing: every command writes its files through an
//! `ArtifactWriter`, which records a manifest (path + SHA-256 per file).

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    files: Vec<ManifestFile>,
}

pub struct ArtifactWriter {
    dir: PathBuf,
    command: String,
    files: Vec<ManifestFile>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path, command: &str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("creating '{}': {e}", dir.display())))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("writing '{}': {e}", path.display())))?;
        self.files.push(ManifestFile {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_string(&mut self, rel: &str, text: &str) -> Result<(), CliError> {
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Runtime(format!("serializing '{rel}': {e}")))?;
        text.push('\n');
        self.write_string(rel, &text)
    }

    /// Registers a file some other writer produced (e.g. a checkpoint).
    pub fn add_existing(&mut self, rel: &str) -> Result<(), CliError> {
        let path = self.dir.join(rel);
        let bytes = std::fs::read(&path)
            .map_err(|e| CliError::Runtime(format!("reading '{}': {e}", path.display())))?;
        self.files.push(ManifestFile {
            path: rel.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `manifest.json` listing everything produced in this run.
    pub fn finish(self) -> Result<(), CliError> {
        let manifest = Manifest {
            command: self.command.clone(),
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Runtime(format!("serializing manifest: {e}")))?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("writing '{}': {e}", path.display())))
    }
}
