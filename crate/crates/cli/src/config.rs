//! The pipeline configuration document and `--set` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use capsnet::balance::{AugmentationSpec, BalancingStrategy};
use capsnet::model::ModelConfig;
use capsnet::preprocess::PreprocessConfig;
use capsnet::train::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const DEFAULT_MASTER_SEED: u64 = 2024;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Class-foldered training tree.
    pub train_root: Option<PathBuf>,
    pub validation_root: Option<PathBuf>,
    /// JSONL manifests; take precedence over the roots.
    pub train_manifest: Option<PathBuf>,
    pub validation_manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceSection {
    pub strategy: BalancingStrategy,
    /// Output directory for the balanced dataset; defaults to `<run>/balanced`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub batch_size: usize,
    /// Published per-class scores to compare against.
    pub baseline: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            batch_size: 32,
            baseline: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub runs_dir: PathBuf,
    /// Run directory name; a timestamp when unset.
    pub run_name: Option<String>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            runs_dir: PathBuf::from("runs"),
            run_name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub master_seed: u64,
    pub data: DataSection,
    pub balance: BalanceSection,
    pub augment: AugmentationSpec,
    pub preprocess: PreprocessConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            master_seed: DEFAULT_MASTER_SEED,
            data: DataSection::default(),
            balance: BalanceSection::default(),
            augment: AugmentationSpec::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads `path` (or the defaults) and applies `key.path=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let base: PipelineConfig = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => PipelineConfig::default(),
        };
        let mut value = serde_json::to_value(&base).expect("config serializes");
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let config: PipelineConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("after --set overrides: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.balance.strategy.validate()?;
        self.augment.validate()?;
        self.preprocess.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.input_hw != self.preprocess.resize_hw {
            return Err(CliError::Config(format!(
                "model.input_hw {:?} must equal preprocess.resize_hw {:?}",
                self.model.input_hw, self.preprocess.resize_hw
            )));
        }
        if self.eval.batch_size == 0 {
            return Err(CliError::Config("eval.batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn train_seed(&self) -> u64 {
        self.train.master_seed.unwrap_or(self.master_seed)
    }
}

/// Sets `section.key[.sub]=value`; the value is parsed as JSON, or taken as a string.
pub fn apply_override(root: &mut Value, item: &str) -> CliResult<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects key=value, got `{item}`")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set key `{key}` is malformed")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let map = match node {
            Value::Object(map) => map,
            Value::Null => {
                *node = Value::Object(Default::default());
                node.as_object_mut().expect("just created")
            }
            _ => {
                return Err(CliError::Config(format!(
                    "--set key `{key}`: `{}` is not a section",
                    parts[..i].join(".")
                )))
            }
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_parses_json_then_string() {
        let mut v = serde_json::to_value(PipelineConfig::default()).unwrap();
        apply_override(&mut v, "train.epochs=3").unwrap();
        apply_override(&mut v, "output.run_name=abc").unwrap();
        apply_override(&mut v, "model.head.hidden_dims=[]").unwrap();
        let c: PipelineConfig = serde_json::from_value(v).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.output.run_name.as_deref(), Some("abc"));
        assert!(c.model.head.hidden_dims.is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::load(None, &["train.epoch=3".into()]).unwrap_err();
        assert!(matches!(err, CliError::Config(_)), "{err}");
        let mut v = serde_json::to_value(PipelineConfig::default()).unwrap();
        assert!(apply_override(&mut v, "master_seed.x=1").is_err());
    }

    #[test]
    fn mismatched_input_size_is_rejected() {
        assert!(PipelineConfig::load(None, &["model.input_hw=[64,64]".into()]).is_err());
        assert!(PipelineConfig::load(None, &["model.input_hw=[64,64]".into(), "preprocess.resize_hw=[64,64]".into()]).is_ok());
    }
}
