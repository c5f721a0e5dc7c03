//! Contrast-limited adaptive histogram equalization on the luminance channel.

use image::RgbImage;

use crate::error::{Error, Result};

const BINS: usize = 256;

/// Equalizes luminance tile by tile with clipped histograms, interpolating
/// the per-tile lookup tables bilinearly between tile centres. Chroma is
/// preserved by shifting every channel by the luminance change.
pub fn clahe(image: &RgbImage, clip_limit: f64, tile_grid: [usize; 2]) -> Result<RgbImage> {
    if !(clip_limit > 0.0) {
        return Err(Error::Config(format!("clahe clip_limit must be > 0, got {clip_limit}")));
    }
    if tile_grid[0] == 0 || tile_grid[1] == 0 {
        return Err(Error::Config("clahe tile_grid entries must be > 0".into()));
    }
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::InvalidInput("cannot equalize an empty image".into()));
    }
    let raw = image.as_raw();
    let luma: Vec<f64> = raw
        .chunks_exact(3)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect();
    let luma_u8: Vec<u8> = luma.iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect();
    let (lo, hi) = luma_u8
        .iter()
        .fold((u8::MAX, u8::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Ok(image.clone());
    }

    let equalized = clahe_plane(&luma_u8, w, h, clip_limit, tile_grid);
    let mut out = Vec::with_capacity(raw.len());
    for (i, p) in raw.chunks_exact(3).enumerate() {
        let shift = equalized[i] - luma[i];
        for &c in p {
            out.push((f64::from(c) + shift).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, out).expect("buffer matches dimensions"))
}

/// CLAHE over a single 8-bit plane; returns un-rounded output levels.
pub fn clahe_plane(plane: &[u8], w: usize, h: usize, clip_limit: f64, tile_grid: [usize; 2]) -> Vec<f64> {
    let tiles_y = tile_grid[0].min(h);
    let tiles_x = tile_grid[1].min(w);
    let bound = |t: usize, tiles: usize, len: usize| t * len / tiles;

    let mut luts = vec![[0.0f64; BINS]; tiles_x * tiles_y];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (y0, y1) = (bound(ty, tiles_y, h), bound(ty + 1, tiles_y, h));
            let (x0, x1) = (bound(tx, tiles_x, w), bound(tx + 1, tiles_x, w));
            let mut hist = [0usize; BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[plane[y * w + x] as usize] += 1;
                }
            }
            let area = (y1 - y0) * (x1 - x0);
            luts[ty * tiles_x + tx] = tile_lut(&mut hist, area, clip_limit);
        }
    }

    let centre = |t: usize, tiles: usize, len: usize| {
        (bound(t, tiles, len) + bound(t + 1, tiles, len)) as f64 / 2.0 - 0.5
    };
    let locate = |pos: f64, tiles: usize, len: usize| -> (usize, usize, f64) {
        if pos <= centre(0, tiles, len) {
            return (0, 0, 0.0);
        }
        for t in 0..tiles - 1 {
            let (c0, c1) = (centre(t, tiles, len), centre(t + 1, tiles, len));
            if pos <= c1 {
                return (t, t + 1, (pos - c0) / (c1 - c0));
            }
        }
        (tiles - 1, tiles - 1, 0.0)
    };

    let mut out = vec![0.0; plane.len()];
    for y in 0..h {
        let (ty0, ty1, fy) = locate(y as f64, tiles_y, h);
        for x in 0..w {
            let (tx0, tx1, fx) = locate(x as f64, tiles_x, w);
            let v = plane[y * w + x] as usize;
            let at = |ty: usize, tx: usize| luts[ty * tiles_x + tx][v];
            let top = at(ty0, tx0) * (1.0 - fx) + at(ty0, tx1) * fx;
            let bottom = at(ty1, tx0) * (1.0 - fx) + at(ty1, tx1) * fx;
            out[y * w + x] = top * (1.0 - fy) + bottom * fy;
        }
    }
    out
}

fn tile_lut(hist: &mut [usize; BINS], area: usize, clip_limit: f64) -> [f64; BINS] {
    let limit = ((clip_limit * area as f64 / BINS as f64) as usize).max(1);
    let mut excess = 0usize;
    for bin in hist.iter_mut() {
        if *bin > limit {
            excess += *bin - limit;
            *bin = limit;
        }
    }
    let per_bin = excess / BINS;
    let mut residual = excess % BINS;
    for bin in hist.iter_mut() {
        *bin += per_bin;
    }
    if residual > 0 {
        let step = (BINS / residual).max(1);
        let mut i = 0;
        while residual > 0 && i < BINS {
            hist[i] += 1;
            residual -= 1;
            i += step;
        }
    }
    let scale = 255.0 / area as f64;
    let mut lut = [0.0; BINS];
    let mut cumulative = 0usize;
    for (v, bin) in hist.iter().enumerate() {
        cumulative += bin;
        lut[v] = (cumulative as f64 * scale).round().min(255.0);
    }
    lut
}
