//! Stored image to normalized channel-first float tensor.
//!
//! The chain is: channel reorder to RGB, optional CLAHE (off by default),
//! bilinear resize, scale to `[0, 1]`, per-channel `(v - mean) / std`.

pub mod clahe;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use clahe::clahe;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelOrder {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "BGR")]
    Bgr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaheConfig {
    pub enabled: bool,
    pub clip_limit: f64,
    pub tile_grid: [usize; 2],
}

impl Default for ClaheConfig {
    fn default() -> Self {
        ClaheConfig {
            enabled: false,
            clip_limit: 2.0,
            tile_grid: [8, 8],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Output (height, width).
    pub resize_hw: [usize; 2],
    /// Channel order of the pixel buffers handed to [`preprocess`].
    pub channel_order_in: ChannelOrder,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    pub clahe: ClaheConfig,
}

/// ImageNet channel statistics.
pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            resize_hw: [224, 224],
            channel_order_in: ChannelOrder::Rgb,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            clahe: ClaheConfig::default(),
        }
    }
}

impl PreprocessConfig {
    /// Native EfficientNet-B7 resolution.
    pub fn b7_native() -> Self {
        PreprocessConfig {
            resize_hw: [600, 600],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resize_hw.contains(&0) {
            return Err(Error::Config("preprocess.resize_hw entries must be > 0".into()));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("preprocess.std entries must be > 0".into()));
        }
        if self.clahe.enabled && !(self.clahe.clip_limit > 0.0) {
            return Err(Error::Config("preprocess.clahe.clip_limit must be > 0".into()));
        }
        Ok(())
    }
}

/// A `3 x height x width` float image, channel-first RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ChwImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ChwImage {
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

/// Borrowed interleaved pixel buffer of arbitrary channel count.
#[derive(Debug, Clone, Copy)]
pub struct PixelBuffer<'a> {
    pub data: &'a [u8],
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

/// Preprocesses an interleaved buffer; it must have exactly three channels.
pub fn preprocess_buffer(buffer: PixelBuffer<'_>, config: &PreprocessConfig) -> Result<ChwImage> {
    if buffer.channels != 3 {
        return Err(Error::InvalidInput(format!(
            "expected a 3-channel image, got {} channels",
            buffer.channels
        )));
    }
    if buffer.data.len() != buffer.height * buffer.width * 3 {
        return Err(Error::InvalidInput("pixel buffer length does not match its dimensions".into()));
    }
    let image = RgbImage::from_raw(buffer.width as u32, buffer.height as u32, buffer.data.to_vec())
        .ok_or_else(|| Error::InvalidInput("pixel buffer does not match its dimensions".into()))?;
    preprocess(&image, config)
}

/// `image` holds pixels in `config.channel_order_in` order.
pub fn preprocess(image: &RgbImage, config: &PreprocessConfig) -> Result<ChwImage> {
    config.validate()?;
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidInput("cannot preprocess an empty image".into()));
    }
    let mut rgb = match config.channel_order_in {
        ChannelOrder::Rgb => image.clone(),
        ChannelOrder::Bgr => swap_red_blue(image),
    };
    if config.clahe.enabled {
        rgb = clahe(&rgb, config.clahe.clip_limit, config.clahe.tile_grid)?;
    }
    let [out_h, out_w] = config.resize_hw;
    let resized = resize_bilinear(&rgb, out_h, out_w);
    let plane = out_h * out_w;
    let mut data = vec![0.0f32; 3 * plane];
    for c in 0..3 {
        let (mean, std) = (config.mean[c], config.std[c]);
        for i in 0..plane {
            data[c * plane + i] = (resized[i * 3 + c] / 255.0 - mean) / std;
        }
    }
    Ok(ChwImage {
        height: out_h,
        width: out_w,
        data,
    })
}

/// Loads a file and preprocesses it. Decoded files are RGB whatever the
/// config says about in-memory buffers.
pub fn preprocess_file(path: &Path, config: &PreprocessConfig) -> Result<ChwImage> {
    let image = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })?
        .to_rgb8();
    let config = PreprocessConfig {
        channel_order_in: ChannelOrder::Rgb,
        ..config.clone()
    };
    preprocess(&image, &config)
}

/// Preprocesses many files in parallel; output order follows `paths`.
pub fn preprocess_files(paths: &[PathBuf], config: &PreprocessConfig) -> Result<Vec<ChwImage>> {
    use rayon::prelude::*;
    paths.par_iter().map(|p| preprocess_file(p, config)).collect()
}

/// Inverse of the normalization step, returning `[0, 1]`-scaled values.
pub fn unnormalize(image: &ChwImage, config: &PreprocessConfig) -> Vec<f32> {
    let plane = image.height * image.width;
    image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i / plane;
            v * config.std[c] + config.mean[c]
        })
        .collect()
}

fn swap_red_blue(image: &RgbImage) -> RgbImage {
    let mut out = image.clone();
    for p in out.pixels_mut() {
        p.0.swap(0, 2);
    }
    out
}

/// Half-pixel-centre bilinear resize with edge clamping, returning
/// interleaved float samples on the 0-255 scale (no rounding).
pub fn resize_bilinear(image: &RgbImage, out_h: usize, out_w: usize) -> Vec<f32> {
    let (in_w, in_h) = (image.width() as usize, image.height() as usize);
    let src = image.as_raw();
    let axis = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f32)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(in_len - 1);
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, (pos - i0 as f64).min(1.0) as f32)
            })
            .collect()
    };
    let xs = axis(out_w, in_w);
    let ys = axis(out_h, in_h);
    let mut out = vec![0.0f32; out_h * out_w * 3];
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            for c in 0..3 {
                let at = |x: usize, y: usize| f32::from(src[(y * in_w + x) * 3 + c]);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                out[(oy * out_w + ox) * 3 + c] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn raw_config(hw: [usize; 2]) -> PreprocessConfig {
        PreprocessConfig {
            resize_hw: hw,
            mean: [0.0; 3],
            std: [1.0 / 255.0; 3],
            ..PreprocessConfig::default()
        }
    }

    #[test]
    fn constant_white_normalizes_to_one() {
        let img = RgbImage::from_pixel(7, 5, Rgb([255, 255, 255]));
        let config = PreprocessConfig {
            resize_hw: [4, 4],
            mean: [0.5; 3],
            std: [0.5; 3],
            ..PreprocessConfig::default()
        };
        let out = preprocess(&img, &config).unwrap();
        assert!(out.data.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bgr_input_is_swapped() {
        let img = RgbImage::from_pixel(1, 1, Rgb([10, 20, 30]));
        let config = PreprocessConfig {
            channel_order_in: ChannelOrder::Bgr,
            ..raw_config([1, 1])
        };
        let out = preprocess(&img, &config).unwrap();
        let got: Vec<f32> = (0..3).map(|c| out.at(c, 0, 0)).collect();
        for (g, want) in got.iter().zip([30.0, 20.0, 10.0]) {
            assert!((g - want).abs() < 1e-3, "{got:?}");
        }
    }

    #[test]
    fn bilinear_two_by_two_to_one() {
        let img = RgbImage::from_fn(2, 2, |_, y| if y == 0 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) });
        let resized = resize_bilinear(&img, 1, 1);
        assert_eq!(resized, vec![127.5, 127.5, 127.5]);
    }

    #[test]
    fn clahe_off_by_default() {
        let config = PreprocessConfig::default();
        assert!(!config.clahe.enabled);
        let img = RgbImage::from_fn(40, 30, |x, y| Rgb([(x * 5) as u8, (y * 7) as u8, 100]));
        let without = PreprocessConfig {
            clahe: ClaheConfig { enabled: false, clip_limit: 9.0, tile_grid: [2, 2] },
            ..config.clone()
        };
        assert_eq!(preprocess(&img, &config).unwrap(), preprocess(&img, &without).unwrap());
        let with = PreprocessConfig {
            clahe: ClaheConfig { enabled: true, ..ClaheConfig::default() },
            ..config.clone()
        };
        assert_ne!(preprocess(&img, &config).unwrap(), preprocess(&img, &with).unwrap());
    }

    #[test]
    fn non_three_channel_buffers_are_rejected() {
        let gray = [1u8, 2, 3, 4];
        let buffer = PixelBuffer { data: &gray, height: 2, width: 2, channels: 1 };
        assert!(preprocess_buffer(buffer, &PreprocessConfig::default()).is_err());
        let rgba = [0u8; 16];
        let buffer = PixelBuffer { data: &rgba, height: 2, width: 2, channels: 4 };
        assert!(preprocess_buffer(buffer, &PreprocessConfig::default()).is_err());
        let rgb = [0u8; 12];
        let buffer = PixelBuffer { data: &rgb, height: 2, width: 2, channels: 3 };
        assert!(preprocess_buffer(buffer, &PreprocessConfig::default()).is_ok());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let img = RgbImage::from_pixel(2, 2, Rgb([1, 1, 1]));
        let zero_std = PreprocessConfig { std: [1.0, 0.0, 1.0], ..PreprocessConfig::default() };
        assert!(preprocess(&img, &zero_std).is_err());
        let zero_size = PreprocessConfig { resize_hw: [0, 4], ..PreprocessConfig::default() };
        assert!(preprocess(&img, &zero_size).is_err());
        assert!(preprocess(&RgbImage::new(0, 3), &PreprocessConfig::default()).is_err());
    }

    #[test]
    fn config_json_field_names() {
        let json = serde_json::to_value(PreprocessConfig::default()).unwrap();
        assert_eq!(json["channel_order_in"], "RGB");
        assert_eq!(json["resize_hw"], serde_json::json!([224, 224]));
        assert_eq!(json["clahe"]["tile_grid"], serde_json::json!([8, 8]));
        let bad = serde_json::json!({"resize": [1, 1]});
        assert!(serde_json::from_value::<PreprocessConfig>(bad).is_err());
    }

    proptest! {
        #[test]
        fn output_dims_and_inverse(
            w in 1u32..40, h in 1u32..40, oh in 1usize..30, ow in 1usize..30, seed_value in any::<u64>()
        ) {
            let mut rng = crate::seed::rng(seed_value);
            use rand::Rng;
            let img = RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]));
            let config = PreprocessConfig { resize_hw: [oh, ow], ..PreprocessConfig::default() };
            let out = preprocess(&img, &config).unwrap();
            prop_assert_eq!((out.height, out.width, out.data.len()), (oh, ow, 3 * oh * ow));
            prop_assert_eq!(&preprocess(&img, &config).unwrap(), &out);

            let resized = resize_bilinear(&img, oh, ow);
            let back = unnormalize(&out, &config);
            let plane = oh * ow;
            for c in 0..3 {
                for i in 0..plane {
                    let want = resized[i * 3 + c] / 255.0;
                    prop_assert!((back[c * plane + i] - want).abs() < 1e-6);
                }
            }
        }
    }
}
