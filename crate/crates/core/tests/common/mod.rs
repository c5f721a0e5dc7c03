#![allow(dead_code)]

use std::fs;
use std::path::Path;

use capsnet::ClassLabel;
use image::{Rgb, RgbImage};

/// A class-tinted image with a per-index gradient, so files differ.
pub fn class_image(label: ClassLabel, index: usize, w: u32, h: u32) -> RgbImage {
    let c = label.index() as u32;
    RgbImage::from_fn(w, h, |x, y| {
        let base = [(c * 25) % 256, (255 - c * 23) % 256, (c * 71 + 40) % 256];
        let wobble = ((x * 3 + y * 5 + index as u32 * 11) % 24) as u32;
        Rgb([
            ((base[0] + wobble) % 256) as u8,
            ((base[1] + wobble / 2) % 256) as u8,
            ((base[2] + (x + y) % 16) % 256) as u8,
        ])
    })
}

/// Writes `counts[c]` PNGs under `root/<class name>/img_<i>.png`.
pub fn class_tree(root: &Path, counts: &[usize; 10], size: u32) {
    for label in ClassLabel::ALL {
        let dir = root.join(label.name());
        fs::create_dir_all(&dir).unwrap();
        for i in 0..counts[label.index()] {
            class_image(label, i, size, size)
                .save(dir.join(format!("img_{i:04}.png")))
                .unwrap();
        }
    }
}
