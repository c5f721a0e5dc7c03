//! Building blocks shared by the backbones and the head.

use candle_core::{Module, ModuleT, Result, Tensor};
use candle_nn::{BatchNorm, BatchNormConfig, Conv2d, Conv2dConfig, VarBuilder};
use rand::Rng;

use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    None,
    Relu,
    Silu,
}

impl Act {
    pub fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Act::None => Ok(x.clone()),
            Act::Relu => x.relu(),
            Act::Silu => x.silu(),
        }
    }
}

pub fn bn_config(eps: f64, momentum: f64) -> BatchNormConfig {
    BatchNormConfig {
        eps,
        remove_mean: true,
        affine: true,
        momentum,
    }
}

/// Convolution without bias, batch norm, activation. Parameters live under
/// `<prefix>.<conv_name>` and `<prefix>.<bn_name>`.
#[derive(Debug, Clone)]
pub struct ConvBn {
    conv: ConvKind,
    bn: BatchNorm,
    act: Act,
}

#[derive(Debug, Clone)]
enum ConvKind {
    Dense(Conv2d),
    Depthwise(DepthwiseConv),
}

pub struct ConvSpec {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub depthwise: bool,
}

impl ConvBn {
    pub fn new(
        spec: ConvSpec,
        act: Act,
        bn: BatchNormConfig,
        vb_conv: VarBuilder,
        vb_bn: VarBuilder,
    ) -> Result<Self> {
        let padding = (spec.kernel - 1) / 2;
        let conv = if spec.depthwise {
            ConvKind::Depthwise(DepthwiseConv::new(spec.in_c, spec.kernel, spec.stride, padding, vb_conv)?)
        } else {
            let cfg = Conv2dConfig {
                padding,
                stride: spec.stride,
                ..Default::default()
            };
            ConvKind::Dense(candle_nn::conv2d_no_bias(spec.in_c, spec.out_c, spec.kernel, cfg, vb_conv)?)
        };
        let bn = candle_nn::batch_norm(spec.out_c, bn, vb_bn)?;
        Ok(ConvBn { conv, bn, act })
    }
}

impl ModuleT for ConvBn {
    fn forward_t(&self, xs: &Tensor, train: bool) -> Result<Tensor> {
        let ys = match &self.conv {
            ConvKind::Dense(c) => c.forward(xs)?,
            ConvKind::Depthwise(c) => c.forward(xs)?,
        };
        self.act.apply(&self.bn.forward_t(&ys, train)?)
    }
}

/// Per-channel k x k convolution, evaluated as a sum of shifted, strided
/// slices scaled by per-channel taps. Differentiable through ordinary tensor ops.
#[derive(Debug, Clone)]
pub struct DepthwiseConv {
    weight: Tensor,
    channels: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl DepthwiseConv {
    pub fn new(channels: usize, kernel: usize, stride: usize, padding: usize, vb: VarBuilder) -> Result<Self> {
        let weight = vb.get_with_hints(
            (channels, 1, kernel, kernel),
            "weight",
            candle_nn::init::DEFAULT_KAIMING_NORMAL,
        )?;
        Ok(DepthwiseConv {
            weight,
            channels,
            kernel,
            stride,
            padding,
        })
    }
}

impl Module for DepthwiseConv {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = xs.dims4()?;
        if c != self.channels {
            candle_core::bail!("depthwise conv expects {} channels, got {c}", self.channels);
        }
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let extra_h = (k - 1 + ho * s).saturating_sub(h + 2 * p);
        let extra_w = (k - 1 + wo * s).saturating_sub(w + 2 * p);
        let padded = xs
            .pad_with_zeros(2, p, p + extra_h)?
            .pad_with_zeros(3, p, p + extra_w)?;
        let taps = self.weight.reshape((c, k * k))?;
        let mut acc: Option<Tensor> = None;
        for i in 0..k {
            for j in 0..k {
                let mut patch = padded.narrow(2, i, ho * s)?.narrow(3, j, wo * s)?;
                if s > 1 {
                    patch = patch
                        .contiguous()?
                        .reshape((b, c, ho, s, wo, s))?
                        .narrow(3, 0, 1)?
                        .narrow(5, 0, 1)?
                        .reshape((b, c, ho, wo))?;
                }
                let tap = taps.narrow(1, i * k + j, 1)?.reshape((1, c, 1, 1))?;
                let term = patch.broadcast_mul(&tap)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => (a + term)?,
                });
            }
        }
        Ok(acc.expect("kernel has at least one tap"))
    }
}

/// Inverted dropout with a mask drawn from `seed`.
pub fn seeded_dropout(xs: &Tensor, p: f64, seed_value: u64) -> Result<Tensor> {
    if p <= 0.0 {
        return Ok(xs.clone());
    }
    let keep = 1.0 - p;
    let scale = (1.0 / keep) as f32;
    let mut rng = seed::rng(seed_value);
    let mask: Vec<f32> = (0..xs.elem_count())
        .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, xs.shape(), xs.device())?.to_dtype(xs.dtype())?;
    xs * mask
}

/// Global average pool of an NCHW tensor to (N, C).
pub fn global_avg_pool(xs: &Tensor) -> Result<Tensor> {
    xs.mean(3)?.mean(2)
}

/// Max pool with zero padding; only valid after a ReLU (inputs >= 0).
pub fn max_pool_after_relu(xs: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    xs.pad_with_zeros(2, padding, padding)?
        .pad_with_zeros(3, padding, padding)?
        .max_pool2d_with_stride(kernel, stride)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ParamStore;
    use candle_core::{DType, Device};

    /// Direct nested-loop depthwise convolution.
    fn reference(x: &[f32], (c, h, w): (usize, usize, usize), wt: &[f32], k: usize, s: usize, p: usize) -> Vec<f32> {
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = 0.0;
                    for i in 0..k {
                        for j in 0..k {
                            let iy = (oy * s + i) as isize - p as isize;
                            let ix = (ox * s + j) as isize - p as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                acc += x[(ch * h + iy as usize) * w + ix as usize] * wt[(ch * k + i) * k + j];
                            }
                        }
                    }
                    out[(ch * ho + oy) * wo + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn depthwise_matches_reference_and_grouped_conv() {
        let dev = Device::Cpu;
        for (k, s, h, w) in [(3, 1, 7, 6), (3, 2, 7, 6), (5, 2, 9, 8), (5, 1, 4, 4), (3, 2, 2, 2)] {
            let c = 3;
            let store = ParamStore::new(k as u64 * 10 + s as u64);
            let dw = DepthwiseConv::new(c, k, s, (k - 1) / 2, store.var_builder(DType::F32, &dev)).unwrap();
            let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 7 % 13) as f32) - 6.0).collect();
            let xt = Tensor::from_vec(x.clone(), (1, c, h, w), &dev).unwrap();
            let got = dw.forward(&xt).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let wt = dw.weight.flatten_all().unwrap().to_vec1::<f32>().unwrap();
            let want = reference(&x, (c, h, w), &wt, k, s, (k - 1) / 2);
            assert_eq!(got.len(), want.len());
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-4, "k{k} s{s}: {a} vs {b}");
            }
            let grouped = xt
                .conv2d(&dw.weight, (k - 1) / 2, s, 1, c)
                .unwrap()
                .flatten_all()
                .unwrap()
                .to_vec1::<f32>()
                .unwrap();
            for (a, b) in got.iter().zip(&grouped) {
                assert!((a - b).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn dropout_is_seeded() {
        let x = Tensor::ones((4, 50), DType::F32, &Device::Cpu).unwrap();
        let a = seeded_dropout(&x, 0.3, 9).unwrap().to_vec2::<f32>().unwrap();
        let b = seeded_dropout(&x, 0.3, 9).unwrap().to_vec2::<f32>().unwrap();
        let c = seeded_dropout(&x, 0.3, 10).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let zeros = a.iter().flatten().filter(|&&v| v == 0.0).count();
        assert!(zeros > 20 && zeros < 100, "{zeros}");
    }
}
