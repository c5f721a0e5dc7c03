//! Minimal PNG charts: metric curves and a confusion heat-map. No text is
//! drawn; the CSV next to each image carries the numbers.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::eval::ConfusionMatrix;
use crate::labels::NUM_CLASSES;
use crate::train::{LogSplit, MetricLog};

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 30;
const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
pub const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
pub const VALIDATION_COLOR: Rgb<u8> = Rgb([255, 127, 14]);

/// One polyline of (x, y) points.
pub struct Series<'a> {
    pub points: &'a [(f64, f64)],
    pub color: Rgb<u8>,
}

fn draw_line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = (x0 + (x1 - x0) * t).round();
        let y = (y0 + (y1 - y0) * t).round();
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Renders series on shared axes fitted to the data range.
pub fn line_chart(series: &[Series<'_>]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BACKGROUND);
    let all = series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let (left, right) = (MARGIN as f64, (WIDTH - MARGIN / 2) as f64);
    let (top, bottom) = ((MARGIN / 2) as f64, (HEIGHT - MARGIN) as f64);
    for k in 0..=4 {
        let y = top + (bottom - top) * k as f64 / 4.0;
        draw_line(&mut img, (left, y), (right, y), GRID);
    }
    draw_line(&mut img, (left, bottom), (right, bottom), AXIS);
    draw_line(&mut img, (left, top), (left, bottom), AXIS);
    if !xmin.is_finite() {
        return img;
    }
    if xmax - xmin < 1e-12 {
        xmax = xmin + 1.0;
    }
    if ymax - ymin < 1e-12 {
        ymin -= 0.5;
        ymax += 0.5;
    }
    let map = |(x, y): (f64, f64)| {
        (
            left + (x - xmin) / (xmax - xmin) * (right - left),
            bottom - (y - ymin) / (ymax - ymin) * (bottom - top),
        )
    };
    for s in series {
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(|(x, y)| x.is_finite() && y.is_finite()).collect();
        if pts.len() == 1 {
            let (x, y) = map(pts[0]);
            draw_line(&mut img, (x - 2.0, y), (x + 2.0, y), s.color);
            draw_line(&mut img, (x, y - 2.0), (x, y + 2.0), s.color);
        }
        for w in pts.windows(2) {
            draw_line(&mut img, map(w[0]), map(w[1]), s.color);
        }
    }
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

fn curve(log: &MetricLog, split: LogSplit, loss: bool) -> Vec<(f64, f64)> {
    log.split(split)
        .map(|e| (e.step as f64, if loss { e.loss } else { e.macro_accuracy }))
        .collect()
}

/// Writes `loss.png` and `macro_accuracy.png` with steps on the x-axis.
pub fn write_curves(log: &MetricLog, dir: &Path) -> Result<()> {
    for (name, is_loss) in [("loss.png", true), ("macro_accuracy.png", false)] {
        let train = curve(log, LogSplit::Train, is_loss);
        let val = curve(log, LogSplit::Validation, is_loss);
        let img = line_chart(&[
            Series { points: &train, color: TRAIN_COLOR },
            Series { points: &val, color: VALIDATION_COLOR },
        ]);
        save(&img, &dir.join(name))?;
    }
    Ok(())
}

/// Row-normalized heat-map, white (0%) to dark blue (100%).
pub fn confusion_heatmap(cm: &ConfusionMatrix, cell: u32) -> RgbImage {
    let norm = cm.row_normalized();
    let side = cell * NUM_CLASSES as u32;
    let mut img = RgbImage::from_pixel(side, side, BACKGROUND);
    for (r, row) in norm.iter().enumerate() {
        for (c, &pct) in row.iter().enumerate() {
            let t = (pct / 100.0).clamp(0.0, 1.0);
            let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
            let color = Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)]);
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(c as u32 * cell + x, r as u32 * cell + y, color);
                }
            }
        }
    }
    img
}

pub fn write_confusion_heatmap(cm: &ConfusionMatrix, path: &Path) -> Result<()> {
    save(&confusion_heatmap(cm, 32), path)
}
