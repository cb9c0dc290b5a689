//! Raw-image preprocessing: resize and intensity normalization.

use ndarray::Array2;

use crate::imgutil::resize_bilinear;
use crate::{Error, Result};

/// Resize an 8-bit grayscale image to `target_size`×`target_size` with
/// bilinear interpolation and map intensities linearly so 0 → −1 and
/// 255 → +1.
///
/// `target_size` must be ≥ 16 and divisible by 16 so the result can be
/// patch-tokenized later without remainder.
pub fn preprocess_image(raw: &Array2<u8>, target_size: usize) -> Result<Array2<f32>> {
    if raw.is_empty() {
        return Err(Error::InvalidImage("empty input image".into()));
    }
    if target_size < 16 || target_size % 16 != 0 {
        return Err(Error::InvalidSize(format!(
            "target size {target_size} must be ≥ 16 and divisible by 16"
        )));
    }
    let wide = raw.mapv(|v| v as f64);
    let resized = resize_bilinear(&wide, target_size, target_size);
    // Interpolation of values in [0, 255] stays in [0, 255], so the affine
    // map lands exactly in [-1, 1] with no clamping.
    Ok(resized.mapv(|v| (v / 127.5 - 1.0) as f32))
}

/// Bin an age in years at the 60-year threshold: 0 below, 1 at or above.
pub fn bin_age(age_years: f64) -> Result<u8> {
    if !age_years.is_finite() || age_years < 0.0 {
        return Err(Error::InvalidAge(age_years));
    }
    Ok(if age_years < 60.0 { 0 } else { 1 })
}
