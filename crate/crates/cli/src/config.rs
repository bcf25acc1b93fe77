//! Run configuration: a TOML file (or the built-in defaults) with dotted
//! `key=value` overrides applied on top.

use std::path::{Path, PathBuf};

use decompl_core::harness::TrainConfig;
use decompl_core::model::{ModelConfig, Variant};
use decompl_core::synth::SynthConfig;
use decompl_core::{Error, TaskConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskPreset {
    Volleyball,
    Cad,
}

impl TaskPreset {
    pub fn task(self) -> TaskConfig {
        match self {
            TaskPreset::Volleyball => TaskConfig::volleyball(),
            TaskPreset::Cad => TaskConfig::cad(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: vec![
                Variant::Full,
                Variant::OnlyCoordinate,
                Variant::NoCoordinate,
                Variant::NoAuxLosses,
                Variant::MaxPool,
                Variant::MeanPool,
            ],
            seeds: (0..5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Output directory; the `--out-dir` flag and `DECOMPL_OUT_DIR` take
    /// precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub task: TaskPreset,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            task: TaskPreset::Volleyball,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

fn config_error(message: impl Into<String>) -> Error {
    Error::Config(message.into())
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), Error> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("malformed key {key:?}")));
    }
    let (last, parents) = path.split_last().expect("split yields at least one part");
    let mut table = root;
    for part in parents {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("{key}: {part} is not a table")))?;
    }
    table.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Loads `source` (`default` or a TOML path), applies the overrides in
/// order and checks every section.
pub fn load(source: &str, overrides: &[String]) -> Result<CliConfig, Error> {
    let mut root = if source == "default" {
        toml::Table::new()
    } else {
        let path = Path::new(source);
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?
    };
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let cfg: CliConfig = toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| config_error(e.to_string()))?;
    cfg.synth.validate()?;
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(cfg)
}
