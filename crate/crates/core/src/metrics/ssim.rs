//! Patch-wise structural similarity for images in [-1, 1].

use ndarray::{s, Array2, ArrayView2};

use crate::{Error, Result};

/// Dynamic range of pixel values: images live in [-1, 1].
const DYNAMIC_RANGE: f64 = 2.0;

/// Per-tile statistics window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SsimWindow {
    /// One SSIM value per tile from tile-wide mean/variance/covariance.
    #[default]
    Tile,
    /// Classic sliding 11×11 Gaussian window (σ = 1.5) inside each tile,
    /// averaged over valid positions.
    Gaussian,
}

/// Result of a patch-wise SSIM comparison.
#[derive(Debug, Clone)]
pub struct SsimResult {
    /// Arithmetic mean of `per_patch`.
    pub mean_ssim: f64,
    /// One similarity value per non-overlapping tile, row-major tile order.
    pub per_patch: Vec<f64>,
    /// Tile side length in pixels.
    pub patch_size: usize,
}

fn ssim_value(mu1: f64, mu2: f64, var1: f64, var2: f64, cov: f64) -> f64 {
    let c1 = (0.01 * DYNAMIC_RANGE).powi(2);
    let c2 = (0.03 * DYNAMIC_RANGE).powi(2);
    // Windowed variances can round slightly negative; clamp before use.
    let var1 = var1.max(0.0);
    let var2 = var2.max(0.0);
    ((2.0 * mu1 * mu2 + c1) * (2.0 * cov + c2)) / ((mu1 * mu1 + mu2 * mu2 + c1) * (var1 + var2 + c2))
}

/// Tile-global SSIM: population variance/covariance over the whole tile.
fn tile_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    let n = a.len() as f64;
    let mu1 = a.sum() / n;
    let mu2 = b.sum() / n;
    let (mut var1, mut var2, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - mu1;
        let dy = y - mu2;
        var1 += dx * dx;
        var2 += dy * dy;
        cov += dx * dy;
    }
    var1 /= n;
    var2 /= n;
    cov /= n;
    ssim_value(mu1, mu2, var1, var2, cov)
}

/// 11×11 Gaussian kernel with σ = 1.5, normalized to sum 1.
fn gaussian_kernel() -> Array2<f64> {
    let mut k = Array2::zeros((11, 11));
    let sigma2 = 1.5f64 * 1.5;
    for y in 0..11 {
        for x in 0..11 {
            let dy = y as f64 - 5.0;
            let dx = x as f64 - 5.0;
            k[[y, x]] = (-(dx * dx + dy * dy) / (2.0 * sigma2)).exp();
        }
    }
    let total = k.sum();
    k.mapv_inplace(|v| v / total);
    k
}

/// Mean SSIM over all valid 11×11 Gaussian-window positions inside a tile.
fn gaussian_tile_ssim(a: ArrayView2<f64>, b: ArrayView2<f64>, kernel: &Array2<f64>) -> f64 {
    let (h, w) = a.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=(h - 11) {
        for ox in 0..=(w - 11) {
            let (mut m1, mut m2, mut e11, mut e22, mut e12) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..11 {
                for kx in 0..11 {
                    let wgt = kernel[[ky, kx]];
                    let x = a[[oy + ky, ox + kx]];
                    let y = b[[oy + ky, ox + kx]];
                    m1 += wgt * x;
                    m2 += wgt * y;
                    e11 += wgt * x * x;
                    e22 += wgt * y * y;
                    e12 += wgt * x * y;
                }
            }
            let var1 = e11 - m1 * m1;
            let var2 = e22 - m2 * m2;
            let cov = e12 - m1 * m2;
            total += ssim_value(m1, m2, var1, var2, cov);
            count += 1;
        }
    }
    total / count as f64
}

/// Patch-wise SSIM with the default tile-global window.
///
/// The images are tiled into non-overlapping `patch`×`patch` tiles
/// (trailing partial tiles dropped), one SSIM value is computed per tile,
/// and the mean over tiles is reported.
pub fn ssim_patchwise(a: &Array2<f32>, b: &Array2<f32>, patch: usize) -> Result<SsimResult> {
    ssim_patchwise_windowed(a, b, patch, SsimWindow::Tile)
}

/// [`ssim_patchwise`] with an explicit window choice.
pub fn ssim_patchwise_windowed(
    a: &Array2<f32>,
    b: &Array2<f32>,
    patch: usize,
    window: SsimWindow,
) -> Result<SsimResult> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeError(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (h, w) = a.dim();
    if patch == 0 || h < patch || w < patch {
        return Err(Error::PatchTooLarge { patch, h, w });
    }
    if window == SsimWindow::Gaussian && patch < 11 {
        return Err(Error::PatchTooLarge { patch, h: 11, w: 11 });
    }
    let aw = a.mapv(|v| v as f64);
    let bw = b.mapv(|v| v as f64);
    let kernel = match window {
        SsimWindow::Gaussian => Some(gaussian_kernel()),
        SsimWindow::Tile => None,
    };

    let mut per_patch = Vec::with_capacity((h / patch) * (w / patch));
    for ty in 0..h / patch {
        for tx in 0..w / patch {
            let ys = ty * patch..(ty + 1) * patch;
            let xs = tx * patch..(tx + 1) * patch;
            let ta = aw.slice(s![ys.clone(), xs.clone()]);
            let tb = bw.slice(s![ys, xs]);
            let value = match &kernel {
                Some(k) => gaussian_tile_ssim(ta, tb, k),
                None => tile_ssim(ta, tb),
            };
            per_patch.push(value);
        }
    }
    let mean_ssim = per_patch.iter().sum::<f64>() / per_patch.len() as f64;
    Ok(SsimResult {
        mean_ssim,
        per_patch,
        patch_size: patch,
    })
}
