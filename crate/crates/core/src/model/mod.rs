//! Backbone plus classifier head.
//!
//! Pooled backbone features of dimension `D` feed
//! `[dropout -> linear -> activation]* -> linear(10)`. Backbone parameters
//! live under `backbone.` and head parameters under `head.` in one
//! [`ParamStore`].

pub mod backbone;
pub mod checkpoint;
pub mod layers;
pub mod params;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Linear, VarBuilder};
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneKind};
pub use params::ParamStore;

use crate::error::{Error, Result};
use crate::labels::{ClassLabel, NUM_CLASSES};
use crate::seed;

pub const LEAKY_RELU_SLOPE: f64 = 0.01;
pub const PRELU_INIT: f64 = 0.25;
pub const WEIGHTS_DIR_ENV: &str = "CAPSNET_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    LeakyRelu,
    #[default]
    Prelu,
}

/// Scalar form of the head activations. `slope` is only read for PReLU.
pub fn activation(kind: ActivationKind, x: f64, slope: f64) -> f64 {
    let a = match kind {
        ActivationKind::Relu => 0.0,
        ActivationKind::LeakyRelu => LEAKY_RELU_SLOPE,
        ActivationKind::Prelu => slope,
    };
    if x >= 0.0 {
        x
    } else {
        a * x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub hidden_dims: Vec<usize>,
    pub activation: ActivationKind,
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden_dims: vec![512],
            activation: ActivationKind::Prelu,
            dropout: 0.3,
        }
    }
}

impl HeadConfig {
    /// Closed-form trainable parameter count for input dimension `d`.
    pub fn parameter_count(&self, d: usize, num_classes: usize) -> usize {
        let mut total = 0;
        let mut prev = d;
        for &h in &self.hidden_dims {
            total += prev * h + h;
            if self.activation == ActivationKind::Prelu {
                total += h;
            }
            prev = h;
        }
        total + prev * num_classes + num_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub pretrained: bool,
    pub head: HeadConfig,
    pub num_classes: usize,
    /// Train only the head; backbone runs in inference mode.
    pub freeze_backbone: bool,
    /// Directory holding `<backbone id>.safetensors`.
    pub weights_dir: Option<PathBuf>,
    /// Expected input (height, width).
    pub input_hw: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneKind::EfficientnetB7,
            pretrained: true,
            head: HeadConfig::default(),
            num_classes: NUM_CLASSES,
            freeze_backbone: false,
            weights_dir: None,
            input_hw: [224, 224],
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::Config(format!(
                "model.num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.head.dropout) {
            return Err(Error::Config(format!("model.head.dropout must be in [0, 1), got {}", self.head.dropout)));
        }
        if self.head.hidden_dims.contains(&0) {
            return Err(Error::Config("model.head.hidden_dims entries must be positive".into()));
        }
        if self.input_hw.contains(&0) {
            return Err(Error::Config("model.input_hw entries must be positive".into()));
        }
        Ok(())
    }

    pub fn weights_path(&self) -> PathBuf {
        let dir = self.weights_dir.clone().unwrap_or_else(default_weights_dir);
        dir.join(format!("{}.safetensors", self.backbone.id()))
    }
}

pub fn default_weights_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(WEIGHTS_DIR_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("capsnet").join("weights")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Batch-norm statistics update and dropout draws masks from `dropout_seed`.
    Train { dropout_seed: u64 },
}

#[derive(Debug, Clone)]
enum HiddenAct {
    Relu,
    Leaky,
    Prelu(Tensor),
}

#[derive(Debug, Clone)]
struct HiddenLayer {
    linear: Linear,
    act: HiddenAct,
}

/// The classifier head on its own; usable in any dtype.
#[derive(Debug, Clone)]
pub struct Head {
    hidden: Vec<HiddenLayer>,
    out: Linear,
    dropout: f64,
}

impl Head {
    pub fn new(config: &HeadConfig, in_dim: usize, num_classes: usize, vb: VarBuilder) -> candle_core::Result<Self> {
        let mut hidden = Vec::with_capacity(config.hidden_dims.len());
        let mut prev = in_dim;
        for (i, &h) in config.hidden_dims.iter().enumerate() {
            let layer_vb = vb.pp("hidden").pp(i.to_string());
            let linear = candle_nn::linear(prev, h, layer_vb.pp("linear"))?;
            let act = match config.activation {
                ActivationKind::Relu => HiddenAct::Relu,
                ActivationKind::LeakyRelu => HiddenAct::Leaky,
                ActivationKind::Prelu => HiddenAct::Prelu(layer_vb.pp("prelu").get_with_hints(
                    h,
                    "weight",
                    candle_nn::Init::Const(PRELU_INIT),
                )?),
            };
            hidden.push(HiddenLayer { linear, act });
            prev = h;
        }
        let out = candle_nn::linear(prev, num_classes, vb.pp("out"))?;
        Ok(Head {
            hidden,
            out,
            dropout: config.dropout,
        })
    }

    pub fn forward(&self, features: &Tensor, mode: Mode) -> candle_core::Result<Tensor> {
        let mut xs = features.clone();
        for (i, layer) in self.hidden.iter().enumerate() {
            if let Mode::Train { dropout_seed } = mode {
                xs = layers::seeded_dropout(&xs, self.dropout, seed::derive(dropout_seed, i as u64))?;
            }
            xs = layer.linear.forward(&xs)?;
            xs = match &layer.act {
                HiddenAct::Relu => xs.relu()?,
                HiddenAct::Leaky => (xs.relu()? + (xs.minimum(0.0)? * LEAKY_RELU_SLOPE)?)?,
                HiddenAct::Prelu(a) => (xs.relu()? + xs.minimum(0.0)?.broadcast_mul(a)?)?,
            };
        }
        self.out.forward(&xs)
    }

    /// Number of linear layers, hidden plus output.
    pub fn linear_count(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// A built classifier: backbone, head and the store owning their parameters.
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    backbone: Box<dyn Backbone>,
    head: Head,
    device: Device,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("parameters", &self.store.parameter_count(""))
            .finish()
    }
}

/// Builds the model. `seed` drives every freshly initialized tensor; pretrained
/// backbone weights come from [`ModelConfig::weights_path`].
pub fn build_model(config: &ModelConfig, seed_value: u64) -> Result<Model> {
    config.validate()?;
    let mut store = ParamStore::new(seed_value);
    if config.pretrained {
        let path = config.weights_path();
        if !path.is_file() {
            return Err(Error::Weights {
                path,
                reason: "file not found".into(),
            });
        }
        let loaded = candle_core::safetensors::load(&path, &Device::Cpu).map_err(|e| Error::Weights {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let preset: HashMap<String, Tensor> = loaded
            .into_iter()
            .map(|(name, t)| (format!("backbone.{name}"), t))
            .collect();
        store.preset(preset);
        store.require_preset_under("backbone.");
        build_from_store(config, store).map_err(|e| match e {
            Error::Tensor(err) => Error::Weights {
                path,
                reason: err.to_string(),
            },
            other => other,
        })
    } else {
        build_from_store(config, store)
    }
}

fn build_from_store(config: &ModelConfig, store: ParamStore) -> Result<Model> {
    let device = Device::Cpu;
    let vb = store.var_builder(DType::F32, &device);
    let backbone = config.backbone.build(vb.pp("backbone"))?;
    let head = Head::new(&config.head, backbone.feature_dim(), config.num_classes, vb.pp("head"))?;
    Ok(Model {
        config: config.clone(),
        store,
        backbone,
        head,
        device,
    })
}

impl Model {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    /// Variables updated by the optimizer.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        if self.config.freeze_backbone {
            self.store.trainable("head.")
        } else {
            self.store.trainable("")
        }
    }

    pub fn head_parameter_count(&self) -> usize {
        self.store.parameter_count("head.")
    }

    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let [h, w] = self.config.input_hw;
        match batch.dims() {
            [_, 3, bh, bw] if *bh == h && *bw == w => Ok(()),
            dims => Err(Error::InvalidInput(format!("expected a (B, 3, {h}, {w}) batch, got {dims:?}"))),
        }
    }

    /// Pooled backbone features, `(B, D)`.
    pub fn features(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(batch)?;
        let train = matches!(mode, Mode::Train { .. }) && !self.config.freeze_backbone;
        let feats = self.backbone.forward_t(batch, train)?;
        Ok(if self.config.freeze_backbone { feats.detach() } else { feats })
    }

    pub fn head_forward(&self, features: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.head.forward(features, mode)?)
    }

    /// Logits, `(B, num_classes)`.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        let feats = self.features(batch, mode)?;
        self.head_forward(&feats, mode)
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        self.store.save(path)
    }

    pub fn load_weights(&self, path: &Path) -> Result<()> {
        self.store.load_into(path)
    }
}

/// Builds a `N x 3 x H x W` tensor from preprocessed images.
pub fn batch_tensor(images: &[crate::preprocess::ChwImage], device: &Device) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot batch zero images".into()))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if img.height != h || img.width != w {
            return Err(Error::InvalidInput(format!(
                "mixed image sizes in batch: {}x{} and {}x{}",
                h, w, img.height, img.width
            )));
        }
        data.extend_from_slice(&img.data);
    }
    Ok(Tensor::from_vec(data, (images.len(), 3, h, w), device)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub label: ClassLabel,
    pub confidence: Vec<f64>,
}

impl Prediction {
    pub fn top_confidence(&self) -> f64 {
        self.confidence[self.label.index()]
    }
}

/// Softmax in double precision, argmax with ties going to the lowest index.
pub fn predict(logits: &Tensor) -> Result<Vec<Prediction>> {
    let rows = match logits.dims() {
        [_, k] if *k == NUM_CLASSES => logits.to_dtype(DType::F64)?.to_vec2::<f64>()?,
        dims => {
            return Err(Error::InvalidInput(format!(
                "expected (B, {NUM_CLASSES}) logits, got {dims:?}"
            )))
        }
    };
    rows.iter().map(|row| predict_row(row)).collect()
}

pub fn predict_row(row: &[f64]) -> Result<Prediction> {
    let confidence = softmax(row);
    let mut best = 0;
    for (i, &p) in confidence.iter().enumerate() {
        if p > confidence[best] {
            best = i;
        }
    }
    Ok(Prediction {
        label: ClassLabel::from_index(best)?,
        confidence,
    })
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Row-wise log-softmax over the last dimension.
pub fn log_softmax(logits: &Tensor) -> candle_core::Result<Tensor> {
    candle_nn::ops::log_softmax(logits, D::Minus1)
}
