//! VGG-16 convolutional trunk, torchvision parameter layout, globally average-pooled.

use candle_core::{Module, Result, Tensor};
use candle_nn::{Conv2d, Conv2dConfig, VarBuilder};

use super::Backbone;
use crate::model::layers::global_avg_pool;

pub const FEATURE_DIM: usize = 512;

/// Channel widths, `0` marks a 2x2 max pool.
const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];

#[derive(Debug, Clone)]
enum Stage {
    Conv(Conv2d),
    Pool,
}

#[derive(Debug, Clone)]
pub struct Vgg16 {
    stages: Vec<Stage>,
}

impl Vgg16 {
    pub fn new(vb: VarBuilder) -> Result<Self> {
        let f = vb.pp("features");
        let mut stages = Vec::new();
        let mut index = 0;
        let mut in_c = 3;
        for &c in &CFG {
            if c == 0 {
                stages.push(Stage::Pool);
                index += 1;
            } else {
                let cfg = Conv2dConfig { padding: 1, ..Default::default() };
                stages.push(Stage::Conv(candle_nn::conv2d(in_c, c, 3, cfg, f.pp(index.to_string()))?));
                // conv followed by its ReLU
                index += 2;
                in_c = c;
            }
        }
        Ok(Vgg16 { stages })
    }
}

impl Backbone for Vgg16 {
    fn feature_dim(&self) -> usize {
        FEATURE_DIM
    }

    fn forward_t(&self, xs: &Tensor, _train: bool) -> Result<Tensor> {
        let mut ys = xs.clone();
        for stage in &self.stages {
            ys = match stage {
                Stage::Conv(c) => c.forward(&ys)?.relu()?,
                Stage::Pool => ys.max_pool2d(2)?,
            };
        }
        global_avg_pool(&ys)
    }
}
