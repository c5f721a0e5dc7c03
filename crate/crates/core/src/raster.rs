//! Small float-plane helpers shared by augmentation and preprocessing.

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
pub fn reflect101(index: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut i = index.rem_euclid(period);
    if i >= len as isize {
        i = period - i;
    }
    i as usize
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)` (at least 1).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / denom).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Separable Gaussian blur of a row-major `height x width` plane, reflect101 borders.
pub fn blur_plane(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        let row = &plane[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sx = reflect101(x as isize + k as isize - radius, width);
                acc += t * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let sy = reflect101(y as isize + k as isize - radius, height);
                acc += t * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Bilinear sample of an interleaved `height x width x channels` u8 buffer at a
/// fractional pixel position, reflect101 outside the image.
pub fn sample_bilinear_u8(
    data: &[u8],
    width: usize,
    height: usize,
    channels: usize,
    x: f64,
    y: f64,
    out: &mut [f64],
) {
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = reflect101(x0f as isize, width);
    let x1 = reflect101(x0f as isize + 1, width);
    let y0 = reflect101(y0f as isize, height);
    let y1 = reflect101(y0f as isize + 1, height);
    for (c, slot) in out.iter_mut().enumerate().take(channels) {
        let at = |xx: usize, yy: usize| f64::from(data[(yy * width + xx) * channels + c]);
        let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
        let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
        *slot = top * (1.0 - fy) + bottom * fy;
    }
}

pub fn to_u8(value: f64) -> u8 {
    value.round().clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect101_matches_hand_table() {
        let len = 4;
        let got: Vec<usize> = (-4..8).map(|i| reflect101(i, len)).collect();
        // index: -4 -3 -2 -1 0 1 2 3 4 5 6 7
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect101(-5, 1), 0);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let taps = gaussian_kernel(1.5);
        assert_eq!(taps.len(), 11);
        assert!((taps.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..taps.len() / 2 {
            assert_eq!(taps[i], taps[taps.len() - 1 - i]);
        }
    }

    #[test]
    fn blur_preserves_constant_planes() {
        let plane = vec![7.0; 5 * 3];
        for v in blur_plane(&plane, 5, 3, 4.0) {
            assert!((v - 7.0).abs() < 1e-9);
        }
    }
}
