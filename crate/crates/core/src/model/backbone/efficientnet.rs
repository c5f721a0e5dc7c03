//! EfficientNet-B7 feature extractor, torchvision parameter layout.

use candle_core::{Module, ModuleT, Result, Tensor};
use candle_nn::{Conv2d, VarBuilder};

use super::Backbone;
use crate::model::layers::{bn_config, global_avg_pool, Act, ConvBn, ConvSpec};

const WIDTH_MULT: f64 = 2.0;
const DEPTH_MULT: f64 = 3.1;
const BN_EPS: f64 = 1e-3;
const BN_MOMENTUM: f64 = 0.01;

/// (expand ratio, kernel, stride, base in channels, base out channels, base layers) of B0.
const STAGES: [(usize, usize, usize, usize, usize, usize); 7] = [
    (1, 3, 1, 32, 16, 1),
    (6, 3, 2, 16, 24, 2),
    (6, 5, 2, 24, 40, 2),
    (6, 3, 2, 40, 80, 3),
    (6, 5, 1, 80, 112, 3),
    (6, 5, 2, 112, 192, 4),
    (6, 3, 1, 192, 320, 1),
];

fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut new_v = ((v + d / 2.0) / d).floor() * d;
    new_v = new_v.max(d);
    if new_v < 0.9 * v {
        new_v += d;
    }
    new_v as usize
}

fn adjust_channels(c: usize) -> usize {
    make_divisible(c as f64 * WIDTH_MULT, 8)
}

fn adjust_depth(layers: usize) -> usize {
    (layers as f64 * DEPTH_MULT).ceil() as usize
}

pub const FEATURE_DIM: usize = 4 * 640;

#[derive(Debug, Clone)]
struct SqueezeExcite {
    fc1: Conv2d,
    fc2: Conv2d,
}

impl SqueezeExcite {
    fn new(channels: usize, squeeze: usize, vb: VarBuilder) -> Result<Self> {
        let cfg = Default::default();
        Ok(SqueezeExcite {
            fc1: candle_nn::conv2d(channels, squeeze, 1, cfg, vb.pp("fc1"))?,
            fc2: candle_nn::conv2d(squeeze, channels, 1, cfg, vb.pp("fc2"))?,
        })
    }

    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let scale = xs.mean_keepdim(3)?.mean_keepdim(2)?;
        let scale = self.fc1.forward(&scale)?.silu()?;
        let scale = candle_nn::ops::sigmoid(&self.fc2.forward(&scale)?)?;
        xs.broadcast_mul(&scale)
    }
}

#[derive(Debug, Clone)]
struct MbConv {
    expand: Option<ConvBn>,
    depthwise: ConvBn,
    se: SqueezeExcite,
    project: ConvBn,
    residual: bool,
}

impl MbConv {
    fn new(expand_ratio: usize, kernel: usize, stride: usize, in_c: usize, out_c: usize, vb: VarBuilder) -> Result<Self> {
        let bn = bn_config(BN_EPS, BN_MOMENTUM);
        let expanded = make_divisible((in_c * expand_ratio) as f64, 8);
        let vb = vb.pp("block");
        let mut idx = 0;
        let expand = if expanded != in_c {
            let layer = ConvBn::new(
                ConvSpec { in_c, out_c: expanded, kernel: 1, stride: 1, depthwise: false },
                Act::Silu,
                bn,
                vb.pp("0").pp("0"),
                vb.pp("0").pp("1"),
            )?;
            idx += 1;
            Some(layer)
        } else {
            None
        };
        let depthwise = ConvBn::new(
            ConvSpec { in_c: expanded, out_c: expanded, kernel, stride, depthwise: true },
            Act::Silu,
            bn,
            vb.pp(idx.to_string()).pp("0"),
            vb.pp(idx.to_string()).pp("1"),
        )?;
        let se = SqueezeExcite::new(expanded, (in_c / 4).max(1), vb.pp((idx + 1).to_string()))?;
        let project = ConvBn::new(
            ConvSpec { in_c: expanded, out_c, kernel: 1, stride: 1, depthwise: false },
            Act::None,
            bn,
            vb.pp((idx + 2).to_string()).pp("0"),
            vb.pp((idx + 2).to_string()).pp("1"),
        )?;
        Ok(MbConv {
            expand,
            depthwise,
            se,
            project,
            residual: stride == 1 && in_c == out_c,
        })
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let mut ys = match &self.expand {
            Some(e) => e.forward_t(xs, train)?,
            None => xs.clone(),
        };
        ys = self.depthwise.forward_t(&ys, train)?;
        ys = self.se.forward(&ys)?;
        ys = self.project.forward_t(&ys, train)?;
        if self.residual {
            ys = (ys + xs)?;
        }
        Ok(ys)
    }
}

#[derive(Debug, Clone)]
pub struct EfficientNetB7 {
    stem: ConvBn,
    blocks: Vec<MbConv>,
    head: ConvBn,
}

impl EfficientNetB7 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let bn = bn_config(BN_EPS, BN_MOMENTUM);
        let features = vb.pp("features");
        let stem_c = adjust_channels(32);
        let stem = ConvBn::new(
            ConvSpec { in_c: 3, out_c: stem_c, kernel: 3, stride: 2, depthwise: false },
            Act::Silu,
            bn,
            features.pp("0").pp("0"),
            features.pp("0").pp("1"),
        )?;
        let mut blocks = Vec::new();
        for (s, &(ratio, kernel, stride, base_in, base_out, layers)) in STAGES.iter().enumerate() {
            let stage = features.pp((s + 1).to_string());
            let out_c = adjust_channels(base_out);
            for b in 0..adjust_depth(layers) {
                let (in_c, stride) = if b == 0 {
                    (adjust_channels(base_in), stride)
                } else {
                    (out_c, 1)
                };
                blocks.push(MbConv::new(ratio, kernel, stride, in_c, out_c, stage.pp(b.to_string()))?);
            }
        }
        let last_in = adjust_channels(320);
        let head = ConvBn::new(
            ConvSpec { in_c: last_in, out_c: FEATURE_DIM, kernel: 1, stride: 1, depthwise: false },
            Act::Silu,
            bn,
            features.pp("8").pp("0"),
            features.pp("8").pp("1"),
        )?;
        Ok(EfficientNetB7 { stem, blocks, head })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

impl Backbone for EfficientNetB7 {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let mut ys = self.stem.forward_t(xs, train)?;
        for block in &self.blocks {
            ys = block.forward_t(&ys, train)?;
        }
        global_avg_pool(&self.head.forward_t(&ys, train)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn channel_and_depth_scaling() {
        let channels: Vec<usize> = [32, 16, 24, 40, 80, 112, 192, 320].iter().map(|&c| adjust_channels(c)).collect();
        assert_eq!(channels, vec![64, 32, 48, 80, 160, 224, 384, 640]);
        let depths: Vec<usize> = STAGES.iter().map(|s| adjust_depth(s.5)).collect();
        assert_eq!(depths, vec![4, 7, 7, 10, 10, 13, 4]);
        assert_eq!(depths.iter().sum::<usize>(), 55);
    }
}
