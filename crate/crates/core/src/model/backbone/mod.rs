//! Pretrained-backbone registry. Every backbone maps an `N x 3 x H x W` batch
//! to globally average-pooled `N x D` features.

mod densenet;
mod efficientnet;
mod resnet;
mod vgg;

use std::fmt;

use candle_core::{Result as CandleResult, Tensor};
use candle_nn::VarBuilder;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use densenet::DenseNet121;
pub use efficientnet::EfficientNetB7;
pub use resnet::ResNet50;
pub use vgg::Vgg16;

use crate::error::{Error, Result};

pub trait Backbone: Send + Sync {
    fn feature_dim(&self) -> usize;
    fn forward_t(&self, xs: &Tensor, train: bool) -> CandleResult<Tensor>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BackboneKind {
    EfficientnetB7,
    Densenet121,
    Resnet50,
    Vgg16,
}

impl BackboneKind {
    pub const REGISTRY: [BackboneKind; 4] = [
        BackboneKind::EfficientnetB7,
        BackboneKind::Densenet121,
        BackboneKind::Resnet50,
        BackboneKind::Vgg16,
    ];

    pub fn id(self) -> &'static str {
        match self {
            BackboneKind::EfficientnetB7 => "efficientnet_b7",
            BackboneKind::Densenet121 => "densenet121",
            BackboneKind::Resnet50 => "resnet50",
            BackboneKind::Vgg16 => "vgg16",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        Self::REGISTRY
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::UnknownBackbone {
                name: id.to_string(),
                available: Self::REGISTRY.iter().map(|k| k.id()).collect(),
            })
    }

    pub fn feature_dim(self) -> usize {
        match self {
            BackboneKind::EfficientnetB7 => efficientnet::FEATURE_DIM,
            BackboneKind::Densenet121 => densenet::FEATURE_DIM,
            BackboneKind::Resnet50 => resnet::FEATURE_DIM,
            BackboneKind::Vgg16 => vgg::FEATURE_DIM,
        }
    }

    /// The registry entry with the fewest parameters.
    pub fn smallest() -> Self {
        BackboneKind::Densenet121
    }

    pub fn build(self, vb: VarBuilder) -> CandleResult<Box<dyn Backbone>> {
        Ok(match self {
            BackboneKind::EfficientnetB7 => Box::new(EfficientNetB7::new(vb)?),
            BackboneKind::Densenet121 => Box::new(DenseNet121::new(vb)?),
            BackboneKind::Resnet50 => Box::new(ResNet50::new(vb)?),
            BackboneKind::Vgg16 => Box::new(Vgg16::new(vb)?),
        })
    }
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl Serialize for BackboneKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for BackboneKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let id = String::deserialize(d)?;
        BackboneKind::from_id(&id).map_err(serde::de::Error::custom)
    }
}
