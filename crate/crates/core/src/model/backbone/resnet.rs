//! ResNet-50 feature extractor, torchvision parameter layout.

use candle_core::{ModuleT, Result, Tensor};
use candle_nn::VarBuilder;

use super::Backbone;
use crate::model::layers::{bn_config, global_avg_pool, max_pool_after_relu, Act, ConvBn, ConvSpec};

pub const FEATURE_DIM: usize = 2048;
const LAYERS: [usize; 4] = [3, 4, 6, 3];
const EXPANSION: usize = 4;

fn conv_bn(in_c: usize, out_c: usize, kernel: usize, stride: usize, act: Act, vb: &VarBuilder, conv: &str, bn: &str) -> Result<ConvBn> {
    ConvBn::new(
        ConvSpec { in_c, out_c, kernel, stride, depthwise: false },
        act,
        bn_config(1e-5, 0.1),
        vb.pp(conv),
        vb.pp(bn),
    )
}

#[derive(Debug, Clone)]
struct Bottleneck {
    a: ConvBn,
    b: ConvBn,
    c: ConvBn,
    downsample: Option<ConvBn>,
}

impl Bottleneck {
    fn new(in_c: usize, width: usize, stride: usize, vb: VarBuilder) -> Result<Self> {
        let out_c = width * EXPANSION;
        let downsample = if stride != 1 || in_c != out_c {
            Some(conv_bn(in_c, out_c, 1, stride, Act::None, &vb.pp("downsample"), "0", "1")?)
        } else {
            None
        };
        Ok(Bottleneck {
            a: conv_bn(in_c, width, 1, 1, Act::Relu, &vb, "conv1", "bn1")?,
            b: conv_bn(width, width, 3, stride, Act::Relu, &vb, "conv2", "bn2")?,
            c: conv_bn(width, out_c, 1, 1, Act::None, &vb, "conv3", "bn3")?,
            downsample,
        })
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let ys = self.a.forward_t(xs, train)?;
        let ys = self.b.forward_t(&ys, train)?;
        let ys = self.c.forward_t(&ys, train)?;
        let shortcut = match &self.downsample {
            Some(d) => d.forward_t(xs, train)?,
            None => xs.clone(),
        };
        (ys + shortcut)?.relu()
    }
}

#[derive(Debug, Clone)]
pub struct ResNet50 {
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
}

impl ResNet50 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let stem = conv_bn(3, 64, 7, 2, Act::Relu, &vb, "conv1", "bn1")?;
        let mut blocks = Vec::new();
        let mut in_c = 64;
        for (i, &count) in LAYERS.iter().enumerate() {
            let width = 64 << i;
            let layer = vb.pp(format!("layer{}", i + 1));
            for b in 0..count {
                let stride = if b == 0 && i > 0 { 2 } else { 1 };
                blocks.push(Bottleneck::new(in_c, width, stride, layer.pp(b.to_string()))?);
                in_c = width * EXPANSION;
            }
        }
        Ok(ResNet50 { stem, blocks })
    }
}

impl Backbone for ResNet50 {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let mut ys = max_pool_after_relu(&self.stem.forward_t(xs, train)?, 3, 2, 1)?;
        for block in &self.blocks {
            ys = block.forward_t(&ys, train)?;
        }
        global_avg_pool(&ys)
    }
}
