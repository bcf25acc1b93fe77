//! Run manifests: the resolved config, seed and format versions written
//! next to every output.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use decompl_core::checkpoint::CHECKPOINT_VERSION;
use decompl_core::data::{FORMAT_NAME, FORMAT_VERSION};
use serde::Serialize;

use crate::config::CliConfig;

#[derive(Serialize)]
struct Formats {
    dataset: String,
    checkpoint: u32,
}

#[derive(Serialize)]
pub struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: &'a CliConfig,
    formats: Formats,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl<'a> Manifest<'a> {
    pub fn new(command: &'a str, config: &'a CliConfig, seed: Option<u64>) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            formats: Formats {
                dataset: format!("{FORMAT_NAME}/{FORMAT_VERSION}"),
                checkpoint: CHECKPOINT_VERSION,
            },
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    /// Writes `<stem>.manifest.json` beside `primary`.
    pub fn write_beside(&self, primary: &Path) -> Result<PathBuf> {
        let stem = primary.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let path = primary.with_file_name(format!("{stem}.manifest.json"));
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
