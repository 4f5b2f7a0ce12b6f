//! Run manifests: enough to reproduce every artifact of a command.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes =
        std::fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub seed_override: Option<u64>,
    /// Hash of the fully resolved configuration below, in TOML form.
    pub config_sha256: Vec<String>,
    pub config: Vec<serde_json::Value>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    /// Inputs under this directory are recorded by relative path, so runs in
    /// different directories produce identical manifests.
    #[serde(skip)]
    base: PathBuf,
}

impl Manifest {
    pub fn new(command: &str, seed_override: Option<u64>, base: &Path) -> Self {
        Self {
            command: command.to_owned(),
            tool_version: env!("CARGO_PKG_VERSION"),
            seed_override,
            config_sha256: Vec::new(),
            config: Vec::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            base: base.to_path_buf(),
        }
    }

    pub fn add_config(&mut self, toml_text: &str, value: serde_json::Value) {
        self.config_sha256.push(sha256_hex(toml_text.as_bytes()));
        self.config.push(value);
    }

    pub fn add_input(&mut self, path: &Path) -> CliResult<()> {
        let key = path.strip_prefix(&self.base).unwrap_or(path);
        self.inputs
            .insert(key.display().to_string(), file_sha256(path)?);
        Ok(())
    }

    /// Records an output by file name; outputs live next to the manifest.
    pub fn add_output(&mut self, path: &Path) -> CliResult<()> {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.outputs.insert(name, file_sha256(path)?);
        Ok(())
    }

    pub fn write(&self, out_dir: &Path) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(CliError::runtime)?;
        text.push('\n');
        let path = out_dir.join(format!("manifest-{}.json", self.command));
        mappable::io::write_atomic(&path, text.as_bytes())?;
        Ok(())
    }
}
