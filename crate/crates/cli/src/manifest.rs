use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

/// Provenance record written next to every command's outputs, before them.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub rng_seed: u64,
    pub started_at: String,
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, rng_seed: u64, outputs: &[&str]) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            rng_seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.manifest.json", self.command)
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join(self.file_name());
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().context("output path has no file name")?.to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
