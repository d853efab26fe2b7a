//! Per-run output directory and manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::criteria::Status;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionStatus {
    pub id: u32,
    pub status: Status,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub wall_time_seconds: f64,
    pub threads: usize,
    pub exit_code: i32,
    pub criteria: Vec<CriterionStatus>,
    pub artifacts: Vec<Artifact>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Files written by one run, all under one directory.
pub struct OutputDir {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.artifacts.retain(|a| a.file != name);
        self.artifacts.push(Artifact { file: name.into(), sha256: hex(&Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        self.write(name, text.as_bytes())
    }

    pub fn finish(&self, mut manifest: RunManifest) -> io::Result<()> {
        manifest.artifacts = self.artifacts.clone();
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(self.dir.join(MANIFEST_FILE), text)
    }
}
