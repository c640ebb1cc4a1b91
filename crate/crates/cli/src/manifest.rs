//! Run manifest: resolved configuration, applied overrides and SHA-256
//! hashes of every input read and every file under the output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Resolved, RunConfig};
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "run_manifest.json";
pub const CONFIG_NAME: &str = "config.json";

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub overrides: Vec<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|source| neuron_core::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    pub fn new(command: &str, resolved: &Resolved) -> Self {
        Self {
            tool: "neuron",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed: resolved.config.seed,
            config: resolved.config.clone(),
            overrides: resolved.overrides.clone(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    /// Writes the resolved configuration (loadable with `--config`), then
    /// hashes every file under `out` into the manifest and writes it.
    pub fn write(mut self, out: &Path) -> Result<PathBuf, CliError> {
        neuron_core::io::write_json(&out.join(CONFIG_NAME), &self.config)?;
        let path = out.join(MANIFEST_NAME);
        for file in files_under(out)? {
            if file != path {
                let key = file.strip_prefix(out).unwrap_or(&file).display().to_string();
                self.outputs.insert(key, sha256_file(&file)?);
            }
        }
        neuron_core::io::write_json(&path, &self)?;
        Ok(path)
    }
}

fn files_under(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let io_err = |source| neuron_core::Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_dir() {
            files.extend(files_under(&path)?);
        } else {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}
