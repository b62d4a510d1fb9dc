use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::Serialize;

/// Result of one command run.
pub struct Outcome {
    pub pass: bool,
    pub summary: String,
}

/// A fresh output directory. Primary files hold no timestamps; the manifest
/// carries the only one.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path) -> Result<Self> {
        if path.exists() {
            bail!("output directory {} already exists", path.display());
        }
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
        }
        fs::create_dir(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { root: path.to_path_buf(), files: Vec::new() })
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.root.join(name);
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish<C: Serialize>(mut self, command: &str, config: &C, outcome: &Outcome) -> Result<()> {
        let created_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0);
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config,
            outputs: self.files.clone(),
            pass: outcome.pass,
            summary: &outcome.summary,
            created_unix_ms,
        };
        self.write_json("manifest.json", &manifest)
    }
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: &'a C,
    outputs: Vec<String>,
    pass: bool,
    summary: &'a str,
    created_unix_ms: u64,
}
