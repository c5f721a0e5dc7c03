//! DenseNet-121 feature extractor, torchvision parameter layout.

use candle_core::{Module, ModuleT, Result, Tensor};
use candle_nn::{BatchNorm, Conv2d, Conv2dConfig, VarBuilder};

use super::Backbone;
use crate::model::layers::{bn_config, global_avg_pool, max_pool_after_relu};

const GROWTH: usize = 32;
const BN_SIZE: usize = 4;
const BLOCKS: [usize; 4] = [6, 12, 24, 16];
const INIT_FEATURES: usize = 64;
pub const FEATURE_DIM: usize = 1024;

fn norm(c: usize, vb: VarBuilder) -> Result<BatchNorm> {
    candle_nn::batch_norm(c, bn_config(1e-5, 0.1), vb)
}

fn conv(in_c: usize, out_c: usize, kernel: usize, stride: usize, padding: usize, vb: VarBuilder) -> Result<Conv2d> {
    let cfg = Conv2dConfig { padding, stride, ..Default::default() };
    candle_nn::conv2d_no_bias(in_c, out_c, kernel, cfg, vb)
}

#[derive(Debug, Clone)]
struct DenseLayer {
    norm1: BatchNorm,
    conv1: Conv2d,
    norm2: BatchNorm,
    conv2: Conv2d,
}

impl DenseLayer {
    fn new(in_c: usize, vb: VarBuilder) -> Result<Self> {
        let mid = BN_SIZE * GROWTH;
        Ok(DenseLayer {
            norm1: norm(in_c, vb.pp("norm1"))?,
            conv1: conv(in_c, mid, 1, 1, 0, vb.pp("conv1"))?,
            norm2: norm(mid, vb.pp("norm2"))?,
            conv2: conv(mid, GROWTH, 3, 1, 1, vb.pp("conv2"))?,
        })
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let ys = self.conv1.forward(&self.norm1.forward_t(xs, train)?.relu()?)?;
        self.conv2.forward(&self.norm2.forward_t(&ys, train)?.relu()?)
    }
}

#[derive(Debug, Clone)]
struct Transition {
    norm: BatchNorm,
    conv: Conv2d,
}

#[derive(Debug, Clone)]
pub struct DenseNet121 {
    conv0: Conv2d,
    norm0: BatchNorm,
    blocks: Vec<Vec<DenseLayer>>,
    transitions: Vec<Transition>,
    norm5: BatchNorm,
}

impl DenseNet121 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let f = vb.pp("features");
        let conv0 = conv(3, INIT_FEATURES, 7, 2, 3, f.pp("conv0"))?;
        let norm0 = norm(INIT_FEATURES, f.pp("norm0"))?;
        let mut channels = INIT_FEATURES;
        let mut blocks = Vec::new();
        let mut transitions = Vec::new();
        for (i, &count) in BLOCKS.iter().enumerate() {
            let block_vb = f.pp(format!("denseblock{}", i + 1));
            let mut layers = Vec::with_capacity(count);
            for j in 0..count {
                layers.push(DenseLayer::new(channels, block_vb.pp(format!("denselayer{}", j + 1)))?);
                channels += GROWTH;
            }
            blocks.push(layers);
            if i + 1 < BLOCKS.len() {
                let t = f.pp(format!("transition{}", i + 1));
                transitions.push(Transition {
                    norm: norm(channels, t.pp("norm"))?,
                    conv: conv(channels, channels / 2, 1, 1, 0, t.pp("conv"))?,
                });
                channels /= 2;
            }
        }
        debug_assert_eq!(channels, FEATURE_DIM);
        let norm5 = norm(channels, f.pp("norm5"))?;
        Ok(DenseNet121 { conv0, norm0, blocks, transitions, norm5 })
    }
}

impl Backbone for DenseNet121 {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let ys = self.norm0.forward_t(&self.conv0.forward(xs)?, train)?.relu()?;
        let mut ys = max_pool_after_relu(&ys, 3, 2, 1)?;
        for (i, block) in self.blocks.iter().enumerate() {
            for layer in block {
                let new = layer.forward_t(&ys, train)?;
                ys = Tensor::cat(&[&ys, &new], 1)?;
            }
            if let Some(t) = self.transitions.get(i) {
                ys = t.conv.forward(&t.norm.forward_t(&ys, train)?.relu()?)?;
                ys = ys.avg_pool2d(2)?;
            }
        }
        global_avg_pool(&self.norm5.forward_t(&ys, train)?.relu()?)
    }
}
