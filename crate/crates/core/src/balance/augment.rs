//! Single-image augmentation ops driven by a per-record seed.

use image::RgbImage;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{blur_plane, sample_bilinear_u8, to_u8};
use crate::seed;

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Range { lo, hi }
    }

    pub const fn fixed(value: f64) -> Self {
        Range { lo: value, hi: value }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            return self.lo;
        }
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!(
                "{what}: range [{}, {}] is not a closed interval",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.lo, r.hi]
    }
}

/// One augmentation op with its parameter ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugOp {
    /// Angle in degrees; positive turns content counter-clockwise.
    Rotate { probability: f64, angle_deg: Range },
    Hflip { probability: f64 },
    Vflip { probability: f64 },
    /// Displacement magnitude `alpha` (pixels) of a Gaussian-smoothed (`sigma`) random field.
    Elastic {
        probability: f64,
        alpha: Range,
        sigma: Range,
    },
    /// Additive per-pixel noise, standard deviation on the 0-255 scale.
    GaussNoise { probability: f64, sigma: Range },
    GaussBlur { probability: f64, sigma: Range },
    /// `v * (1 + contrast) + 255 * brightness`.
    BrightnessContrast {
        probability: f64,
        brightness: Range,
        contrast: Range,
    },
}

impl AugOp {
    pub fn name(&self) -> &'static str {
        match self {
            AugOp::Rotate { .. } => "rotate",
            AugOp::Hflip { .. } => "hflip",
            AugOp::Vflip { .. } => "vflip",
            AugOp::Elastic { .. } => "elastic",
            AugOp::GaussNoise { .. } => "gauss_noise",
            AugOp::GaussBlur { .. } => "gauss_blur",
            AugOp::BrightnessContrast { .. } => "brightness_contrast",
        }
    }

    pub fn probability(&self) -> f64 {
        match *self {
            AugOp::Rotate { probability, .. }
            | AugOp::Hflip { probability }
            | AugOp::Vflip { probability }
            | AugOp::Elastic { probability, .. }
            | AugOp::GaussNoise { probability, .. }
            | AugOp::GaussBlur { probability, .. }
            | AugOp::BrightnessContrast { probability, .. } => probability,
        }
    }

    fn validate(&self) -> Result<()> {
        let p = self.probability();
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!(
                "{}: probability {p} outside [0, 1]",
                self.name()
            )));
        }
        let positive = |r: &Range, what: &str| -> Result<()> {
            r.check(what)?;
            if r.lo <= 0.0 {
                return Err(Error::Config(format!("{what}: range must be positive")));
            }
            Ok(())
        };
        match self {
            AugOp::Rotate { angle_deg, .. } => angle_deg.check("rotate.angle_deg"),
            AugOp::Hflip { .. } | AugOp::Vflip { .. } => Ok(()),
            AugOp::Elastic { alpha, sigma, .. } => {
                alpha.check("elastic.alpha")?;
                positive(sigma, "elastic.sigma")
            }
            AugOp::GaussNoise { sigma, .. } => {
                sigma.check("gauss_noise.sigma")?;
                if sigma.lo < 0.0 {
                    return Err(Error::Config("gauss_noise.sigma must be >= 0".into()));
                }
                Ok(())
            }
            AugOp::GaussBlur { sigma, .. } => positive(sigma, "gauss_blur.sigma"),
            AugOp::BrightnessContrast {
                brightness,
                contrast,
                ..
            } => {
                brightness.check("brightness_contrast.brightness")?;
                contrast.check("brightness_contrast.contrast")
            }
        }
    }
}

/// Ordered op list; ops run in list order, each gated by its probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationSpec {
    pub ops: Vec<AugOp>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            ops: vec![
                AugOp::Rotate {
                    probability: 0.5,
                    angle_deg: Range::new(-30.0, 30.0),
                },
                AugOp::Hflip { probability: 0.5 },
                AugOp::Vflip { probability: 0.5 },
                AugOp::Elastic {
                    probability: 0.3,
                    alpha: Range::new(20.0, 40.0),
                    sigma: Range::new(4.0, 6.0),
                },
                AugOp::GaussNoise {
                    probability: 0.3,
                    sigma: Range::new(5.0, 20.0),
                },
                AugOp::GaussBlur {
                    probability: 0.3,
                    sigma: Range::new(0.3, 1.5),
                },
                AugOp::BrightnessContrast {
                    probability: 0.5,
                    brightness: Range::new(-0.2, 0.2),
                    contrast: Range::new(-0.2, 0.2),
                },
            ],
        }
    }
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<()> {
        self.ops.iter().try_for_each(AugOp::validate)
    }

    pub fn any_enabled(&self) -> bool {
        self.ops.iter().any(|op| op.probability() > 0.0)
    }
}

/// Applies `spec` to `image`, drawing every random number from a generator
/// seeded with `item_seed` alone.
pub fn apply_augmentation(image: &RgbImage, spec: &AugmentationSpec, item_seed: u64) -> Result<RgbImage> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidInput("cannot augment an empty image".into()));
    }
    spec.validate()?;
    let mut rng = seed::rng(item_seed);
    let mut current = image.clone();
    for op in &spec.ops {
        // The gate is drawn for every op so the stream layout does not depend on outcomes.
        let gate: f64 = rng.random();
        if gate >= op.probability() {
            continue;
        }
        current = match op {
            AugOp::Rotate { angle_deg, .. } => rotate(&current, angle_deg.sample(&mut rng)),
            AugOp::Hflip { .. } => hflip(&current),
            AugOp::Vflip { .. } => vflip(&current),
            AugOp::Elastic { alpha, sigma, .. } => {
                let alpha = alpha.sample(&mut rng);
                let sigma = sigma.sample(&mut rng);
                elastic(&current, alpha, sigma, &mut rng)
            }
            AugOp::GaussNoise { sigma, .. } => {
                let sigma = sigma.sample(&mut rng);
                gauss_noise(&current, sigma, &mut rng)
            }
            AugOp::GaussBlur { sigma, .. } => gauss_blur(&current, sigma.sample(&mut rng)),
            AugOp::BrightnessContrast {
                brightness,
                contrast,
                ..
            } => {
                let b = brightness.sample(&mut rng);
                let c = contrast.sample(&mut rng);
                brightness_contrast(&current, b, c)
            }
        };
    }
    Ok(current)
}

pub fn hflip(image: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(image)
}

pub fn vflip(image: &RgbImage) -> RgbImage {
    image::imageops::flip_vertical(image)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-12 {
        r
    } else {
        v
    }
}

/// Rotation about the image centre with reflect101 fill, cropped back to the input size.
pub fn rotate(image: &RgbImage, angle_deg: f64) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let src = image.as_raw();
    let mut out = vec![0u8; src.len()];
    let mut px = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let sx = cx + cos * dx - sin * dy;
            let sy = cy + sin * dx + cos * dy;
            sample_bilinear_u8(src, w, h, 3, sx, sy, &mut px);
            let o = (y * w + x) * 3;
            for c in 0..3 {
                out[o + c] = to_u8(px[c]);
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer matches dimensions")
}

pub fn elastic(image: &RgbImage, alpha: f64, sigma: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let field = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..w * h).map(|_| rng.random_range(-1.0..=1.0)).collect();
        blur_plane(&raw, w, h, sigma)
            .into_iter()
            .map(|v| v * alpha)
            .collect()
    };
    let dx = field(rng);
    let dy = field(rng);
    let src = image.as_raw();
    let mut out = vec![0u8; src.len()];
    let mut px = [0.0f64; 3];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            sample_bilinear_u8(src, w, h, 3, x as f64 + dx[i], y as f64 + dy[i], &mut px);
            for c in 0..3 {
                out[i * 3 + c] = to_u8(px[c]);
            }
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer matches dimensions")
}

pub fn gauss_noise(image: &RgbImage, sigma: f64, rng: &mut ChaCha8Rng) -> RgbImage {
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite and non-negative");
    let data = image
        .as_raw()
        .iter()
        .map(|&v| to_u8(f64::from(v) + normal.sample(rng)))
        .collect();
    RgbImage::from_raw(image.width(), image.height(), data).expect("buffer matches dimensions")
}

pub fn gauss_blur(image: &RgbImage, sigma: f64) -> RgbImage {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let src = image.as_raw();
    let mut out = vec![0u8; src.len()];
    for c in 0..3 {
        let plane: Vec<f64> = (0..w * h).map(|i| f64::from(src[i * 3 + c])).collect();
        for (i, v) in blur_plane(&plane, w, h, sigma).into_iter().enumerate() {
            out[i * 3 + c] = to_u8(v);
        }
    }
    RgbImage::from_raw(w as u32, h as u32, out).expect("buffer matches dimensions")
}

pub fn brightness_contrast(image: &RgbImage, brightness: f64, contrast: f64) -> RgbImage {
    let gain = 1.0 + contrast;
    let offset = 255.0 * brightness;
    let data = image
        .as_raw()
        .iter()
        .map(|&v| to_u8(f64::from(v) * gain + offset))
        .collect();
    RgbImage::from_raw(image.width(), image.height(), data).expect("buffer matches dimensions")
}
