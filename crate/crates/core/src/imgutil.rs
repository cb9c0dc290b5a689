//! Image geometry helpers shared by preprocessing and saliency rendering.

use ndarray::Array2;

/// Bilinear resample with the half-pixel (pixel-center) coordinate
/// convention: destination pixel centers map to
/// `src = (dst + 0.5) * (src_len / dst_len) - 0.5`, clamped to the source
/// extent. Matches the common image-library default rather than the
/// corner-aligned variant.
pub fn resize_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (h, w) = src.dim();
    assert!(h > 0 && w > 0, "cannot resize an empty image");
    assert!(out_h > 0 && out_w > 0, "target size must be positive");

    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;

    // Precompute the horizontal taps once per output column.
    let mut x_taps = Vec::with_capacity(out_w);
    for ox in 0..out_w {
        let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
        let x0 = sx.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        x_taps.push((x0, x1, sx - x0 as f64));
    }

    let mut out = Array2::zeros((out_h, out_w));
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for (ox, &(x0, x1, fx)) in x_taps.iter().enumerate() {
            let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
            let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
            out[[oy, ox]] = top * (1.0 - fy) + bot * fy;
        }
    }
    out
}

/// [`resize_bilinear`] for f32 images; interpolation runs in f64.
pub fn resize_bilinear_f32(src: &Array2<f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let wide = src.mapv(|v| v as f64);
    resize_bilinear(&wide, out_h, out_w).mapv(|v| v as f32)
}

/// Bilinear sample at fractional coordinates; positions outside the image
/// return `fill`.
fn sample_bilinear(src: &Array2<f64>, y: f64, x: f64, fill: f64) -> f64 {
    let (h, w) = src.dim();
    if y < -0.5 || x < -0.5 || y > h as f64 - 0.5 || x > w as f64 - 0.5 {
        return fill;
    }
    let yc = y.clamp(0.0, (h - 1) as f64);
    let xc = x.clamp(0.0, (w - 1) as f64);
    let y0 = yc.floor() as usize;
    let x0 = xc.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let (fy, fx) = (yc - y0 as f64, xc - x0 as f64);
    let top = src[[y0, x0]] * (1.0 - fx) + src[[y0, x1]] * fx;
    let bot = src[[y1, x0]] * (1.0 - fx) + src[[y1, x1]] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Rotate about the image center by `degrees` (counterclockwise), bilinear
/// resampling, out-of-frame pixels set to `fill`.
pub fn rotate_bilinear(src: &Array2<f64>, degrees: f64, fill: f64) -> Array2<f64> {
    let (h, w) = src.dim();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    Array2::from_shape_fn((h, w), |(oy, ox)| {
        // Inverse mapping: rotate the destination offset backwards. With
        // y pointing down, an on-screen counterclockwise rotation sends
        // +x toward -y, so the backward transform is the transpose.
        let dy = oy as f64 - cy;
        let dx = ox as f64 - cx;
        let sy = cy + dy * cos + dx * sin;
        let sx = cx - dy * sin + dx * cos;
        sample_bilinear(src, sy, sx, fill)
    })
}

/// Shift by (dy, dx) pixels (may be fractional), bilinear resampling,
/// revealed pixels set to `fill`.
pub fn translate_bilinear(src: &Array2<f64>, dy: f64, dx: f64, fill: f64) -> Array2<f64> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((h, w), |(oy, ox)| {
        sample_bilinear(src, oy as f64 - dy, ox as f64 - dx, fill)
    })
}

/// Separable Gaussian blur; the kernel spans ±3σ and is renormalized, so a
/// constant image is exactly preserved. σ ≤ 0 returns the input unchanged.
pub fn gaussian_blur(src: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return src.clone();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64 * i as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let (h, w) = src.dim();
    let reflect = |i: i64, n: i64| -> usize {
        // Reflect-101 boundary: ...2 1 0 1 2... keeps mass in frame.
        let mut i = i;
        if i < 0 {
            i = -i;
        }
        if i >= n {
            i = 2 * (n - 1) - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + k as i64 - radius, w as i64);
                acc += src[[y, sx]] * kv;
            }
            tmp[[y, x]] = acc / norm;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + k as i64 - radius, h as i64);
                acc += tmp[[sy, x]] * kv;
            }
            out[[y, x]] = acc / norm;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_resize_is_exact() {
        let src = array![[1.0, 2.0], [3.0, 4.0]];
        let out = resize_bilinear(&src, 2, 2);
        assert_eq!(out, src);
    }

    #[test]
    fn constant_image_stays_constant() {
        let src = Array2::from_elem((3, 5), 7.5);
        let out = resize_bilinear(&src, 9, 2);
        for &v in out.iter() {
            assert!((v - 7.5).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_upsample_matches_hand_computation() {
        // Half-pixel mapping for 2 -> 4: dst columns sample src at
        // -0.25 (clamped 0), 0.25, 0.75, 1.25 (clamped 1).
        let src = array![[0.0, 1.0], [2.0, 3.0]];
        let out = resize_bilinear(&src, 4, 4);
        let expect = array![
            [0.0, 0.25, 0.75, 1.0],
            [0.5, 0.75, 1.25, 1.5],
            [1.5, 1.75, 2.25, 2.5],
            [2.0, 2.25, 2.75, 3.0]
        ];
        for (a, b) in out.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12, "{out:?} vs {expect:?}");
        }
    }

    #[test]
    fn four_to_two_downsample_averages_neighbours() {
        // 4 -> 2 with half-pixel centers samples at 0.5 and 2.5, i.e. the
        // midpoints of adjacent source pairs.
        let mut src = Array2::zeros((4, 4));
        for y in 0..4 {
            for x in 0..4 {
                src[[y, x]] = x as f64;
            }
        }
        let out = resize_bilinear(&src, 2, 2);
        assert!((out[[0, 0]] - 0.5).abs() < 1e-12);
        assert!((out[[0, 1]] - 2.5).abs() < 1e-12);
    }

    #[test]
    fn f32_wrapper_agrees_with_f64_path() {
        let src = array![[0.0f32, 1.0], [2.0, 3.0]];
        let out = resize_bilinear_f32(&src, 4, 4);
        assert!((out[[1, 2]] - 1.25).abs() < 1e-6);
    }

    #[test]
    fn rotation_by_360_degrees_is_near_identity() {
        let src = Array2::from_shape_fn((9, 9), |(y, x)| (y * 9 + x) as f64 / 80.0);
        let out = rotate_bilinear(&src, 360.0, 0.0);
        for (a, b) in out.iter().zip(src.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        // 90° maps corners onto corners for a square grid.
        let quarter = rotate_bilinear(&src, 90.0, 0.0);
        assert!((quarter[[8, 0]] - src[[0, 0]]).abs() < 1e-9);
    }

    #[test]
    fn translation_moves_content_and_fills_the_gap() {
        let mut src = Array2::zeros((4, 4));
        src[[1, 1]] = 1.0;
        let out = translate_bilinear(&src, 1.0, 2.0, -1.0);
        assert_eq!(out[[2, 3]], 1.0);
        assert_eq!(out[[0, 0]], -1.0);
    }

    #[test]
    fn blur_preserves_constants_and_mass_roughly() {
        let flat = Array2::from_elem((8, 8), 0.3);
        let out = gaussian_blur(&flat, 1.5);
        for &v in out.iter() {
            assert!((v - 0.3).abs() < 1e-12);
        }
        let mut spike = Array2::zeros((9, 9));
        spike[[4, 4]] = 1.0;
        let blurred = gaussian_blur(&spike, 1.0);
        assert!(blurred[[4, 4]] < 0.5);
        assert!((blurred.sum() - 1.0).abs() < 1e-6);
        assert_eq!(gaussian_blur(&spike, 0.0), spike);
    }
}
