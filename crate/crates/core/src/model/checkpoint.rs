//! Checkpoint files and the portable inference export.
//!
//! A checkpoint is a `<name>.safetensors` weight file holding every
//! parameter and buffer, plus a `<name>.json` sidecar with the backbone id
//! and the model configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{build_model, ActivationKind, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::labels::ClassLabel;
use crate::preprocess::PreprocessConfig;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub backbone: String,
    /// 1-based epoch, `0` for an untrained model.
    pub epoch: usize,
    pub validation_macro_recall: Option<f64>,
    pub model: ModelConfig,
    pub preprocess: PreprocessConfig,
}

impl CheckpointMeta {
    pub fn new(model: &Model, preprocess: &PreprocessConfig, epoch: usize, metric: Option<f64>) -> Self {
        CheckpointMeta {
            format_version: FORMAT_VERSION,
            backbone: model.config().backbone.id().to_string(),
            epoch,
            validation_macro_recall: metric,
            model: model.config().clone(),
            preprocess: preprocess.clone(),
        }
    }
}

pub fn epoch_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch}")
}

pub const BEST_NAME: &str = "best";

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.safetensors")), dir.join(format!("{name}.json")))
}

/// Writes `<dir>/<name>.safetensors` and `<dir>/<name>.json`; returns the weight path.
pub fn save_checkpoint(model: &Model, meta: &CheckpointMeta, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (weights, sidecar) = paths(dir, name);
    model.save_weights(&weights)?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::json(&sidecar, e))?;
    fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))?;
    Ok(weights)
}

/// Copies checkpoint `name` to `best.*`.
pub fn mark_best(dir: &Path, name: &str) -> Result<()> {
    let (from_w, from_j) = paths(dir, name);
    let (to_w, to_j) = paths(dir, BEST_NAME);
    fs::copy(&from_w, &to_w).map_err(|e| Error::io(&to_w, e))?;
    fs::copy(&from_j, &to_j).map_err(|e| Error::io(&to_j, e))?;
    Ok(())
}

fn sidecar_for(weights: &Path) -> PathBuf {
    weights.with_extension("json")
}

pub fn read_meta(weights: &Path) -> Result<CheckpointMeta> {
    let sidecar = sidecar_for(weights);
    let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::json(&sidecar, e))?;
    if meta.backbone != meta.model.backbone.id() {
        return Err(Error::Data(format!(
            "{}: backbone `{}` disagrees with model config `{}`",
            sidecar.display(),
            meta.backbone,
            meta.model.backbone
        )));
    }
    Ok(meta)
}

/// Rebuilds a model from a checkpoint weight file (or its sidecar path).
pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let weights = if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("safetensors")
    } else {
        path.to_path_buf()
    };
    let meta = read_meta(&weights)?;
    let config = ModelConfig {
        pretrained: false,
        ..meta.model.clone()
    };
    let model = build_model(&config, 0)?;
    model.load_weights(&weights)?;
    Ok((model, meta))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GraphOp {
    Backbone { id: String, feature_dim: usize, prefix: String },
    Linear { weight: String, bias: String },
    Relu,
    LeakyRelu { slope: f64 },
    Prelu { weight: String },
    Softmax,
}

/// Self-describing inference graph stored in `graph.json` next to `weights.safetensors`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportedGraph {
    pub format_version: u32,
    pub input_shape: [usize; 4],
    pub input_layout: String,
    pub preprocess: PreprocessConfig,
    pub classes: Vec<String>,
    pub ops: Vec<GraphOp>,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `graph.json` and `weights.safetensors` into `dir`.
pub fn export(model: &Model, preprocess: &PreprocessConfig, dir: &Path) -> Result<ExportedGraph> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config = model.config();
    let mut ops = vec![GraphOp::Backbone {
        id: config.backbone.id().to_string(),
        feature_dim: model.feature_dim(),
        prefix: "backbone.".into(),
    }];
    for i in 0..config.head.hidden_dims.len() {
        let base = format!("head.hidden.{i}");
        ops.push(GraphOp::Linear {
            weight: format!("{base}.linear.weight"),
            bias: format!("{base}.linear.bias"),
        });
        ops.push(match config.head.activation {
            ActivationKind::Relu => GraphOp::Relu,
            ActivationKind::LeakyRelu => GraphOp::LeakyRelu {
                slope: super::LEAKY_RELU_SLOPE,
            },
            ActivationKind::Prelu => GraphOp::Prelu {
                weight: format!("{base}.prelu.weight"),
            },
        });
    }
    ops.push(GraphOp::Linear {
        weight: "head.out.weight".into(),
        bias: "head.out.bias".into(),
    });
    ops.push(GraphOp::Softmax);

    let tensors = model
        .store()
        .names()
        .into_iter()
        .map(|name| {
            let shape = model.store().get(&name).map(|v| v.dims().to_vec()).unwrap_or_default();
            TensorEntry { name, shape }
        })
        .collect();
    let [h, w] = config.input_hw;
    let graph = ExportedGraph {
        format_version: FORMAT_VERSION,
        input_shape: [1, 3, h, w],
        input_layout: "NCHW".into(),
        preprocess: preprocess.clone(),
        classes: ClassLabel::ALL.iter().map(|c| c.name().to_string()).collect(),
        ops,
        tensors,
    };
    model.save_weights(&dir.join("weights.safetensors"))?;
    let path = dir.join("graph.json");
    let text = serde_json::to_string_pretty(&graph).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(graph)
}
