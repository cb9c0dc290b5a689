//! Deterministic synthetic chest-image stand-in.
//!
//! Generates desk-scale images whose protected attributes and findings are
//! carried by simple, spatially localized intensity cues:
//!
//! * sex = 1 → a bright disc in the upper-left quadrant,
//! * age_bin = 1 → a high-intensity horizontal band in the lower third,
//! * finding f → a small blob near a fixed per-finding anchor, jittered
//!   per image.
//!
//! Finding prevalences follow a geometric long-tail from ≈ 40% down to
//! ≈ 1%, and the attribute marginals mirror a real cohort (57% male,
//! 24% older). Everything is reproducible from a single seed.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::types::{ImageRecord, NUM_FINDINGS};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

/// Salt separating the synthetic generator's RNG streams from other users
/// of the same base seed.
const SYNTH_SALT: u64 = 0x53_59_4e_54; // "SYNT"

/// Fraction of images with sex = 1 (male).
const P_MALE: f64 = 0.57;
/// Fraction of images with age_bin = 1 (≥ 60 years).
const P_OLD: f64 = 0.24;
/// Prevalence of the most common finding.
const P_FIRST: f64 = 0.40;
/// Prevalence of the rarest finding.
const P_LAST: f64 = 0.01;

/// Per-finding prevalence schedule: geometric decay from [`P_FIRST`] for
/// finding 0 to [`P_LAST`] for finding 14.
pub fn finding_prevalence(f: usize) -> f64 {
    let ratio = (P_LAST / P_FIRST).powf(1.0 / (NUM_FINDINGS as f64 - 1.0));
    P_FIRST * ratio.powi(f as i32)
}

/// Paint a soft-edged disc of peak `value` with max-blend, so overlapping
/// shapes keep the brighter one visible.
fn paint_disc(grid: &mut Array2<f32>, cy: f64, cx: f64, radius: f64, value: f32) {
    let size = grid.nrows() as i64;
    let y_min = ((cy - radius - 1.0).floor() as i64).max(0);
    let y_max = ((cy + radius + 1.0).ceil() as i64).min(size - 1);
    let x_min = ((cx - radius - 1.0).floor() as i64).max(0);
    let x_max = ((cx + radius + 1.0).ceil() as i64).min(size - 1);
    for y in y_min..=y_max {
        for x in x_min..=x_max {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let w = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
            if w > 0.0 {
                let cell = &mut grid[[y as usize, x as usize]];
                *cell = cell.max(*cell * (1.0 - w) + value * w);
            }
        }
    }
}

/// Generate `n_images` synthetic records of `image_size`² pixels.
///
/// Deterministic for a fixed `(n_images, image_size, seed)` triple: each
/// image draws from its own derived RNG stream, so the set can be produced
/// in any order or in parallel without changing a pixel.
pub fn make_synthetic_dataset(
    n_images: usize,
    image_size: usize,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    assert!(n_images >= 8, "need at least 8 images, got {n_images}");
    if image_size < 16 || image_size % 16 != 0 {
        return Err(Error::InvalidSize(format!(
            "image size {image_size} must be ≥ 16 and divisible by 16"
        )));
    }
    let base = derive_seed(seed, SYNTH_SALT);
    let records = (0..n_images)
        .map(|i| synth_image(base, i, image_size))
        .collect();
    Ok(records)
}

fn synth_image(base: u64, index: usize, size: usize) -> ImageRecord {
    let mut rng = stream_rng(base, index as u64);
    let s = size as f64;

    // Draw metadata in a fixed order so the stream layout is stable.
    let sex = u8::from(rng.random_bool(P_MALE));
    let age_bin = u8::from(rng.random_bool(P_OLD));
    let mut findings = [0u8; NUM_FINDINGS];
    for (f, bit) in findings.iter_mut().enumerate() {
        *bit = u8::from(rng.random_bool(finding_prevalence(f)));
    }
    let jitter_amp = s / 16.0;
    let jitters: Vec<(f64, f64)> = (0..NUM_FINDINGS)
        .map(|_| {
            (
                rng.random_range(-jitter_amp..=jitter_amp),
                rng.random_range(-jitter_amp..=jitter_amp),
            )
        })
        .collect();

    // Dim, lightly textured background.
    let noise = Normal::new(-0.3, 0.05).expect("valid normal");
    let mut pixels = Array2::from_shape_simple_fn((size, size), || noise.sample(&mut rng) as f32);

    // Sex cue: bright disc centred in the upper-left quadrant.
    if sex == 1 {
        paint_disc(&mut pixels, s / 4.0, s / 4.0, s / 8.0, 0.9);
    }

    // Age cue: bright band inside the lower third.
    if age_bin == 1 {
        let y0 = (2 * size).div_ceil(3);
        let y1 = (y0 + size / 8).min(size);
        for y in y0..y1 {
            for x in 0..size {
                let cell = &mut pixels[[y, x]];
                *cell = cell.max(0.8);
            }
        }
    }

    // Finding cues: small blobs at a fixed 4×4 anchor grid, jittered.
    let blob_radius = (s / 20.0).max(2.0);
    for (f, &bit) in findings.iter().enumerate() {
        if bit == 1 {
            let (jy, jx) = jitters[f];
            let cy = ((f / 4) as f64 + 0.5) * s / 4.0 + jy;
            let cx = ((f % 4) as f64 + 0.5) * s / 4.0 + jx;
            paint_disc(&mut pixels, cy, cx, blob_radius, 0.6);
        }
    }

    pixels.mapv_inplace(|v| v.clamp(-1.0, 1.0));

    ImageRecord {
        image_id: format!("synth-{index:05}"),
        patient_id: format!("SP{index:05}"),
        pixels,
        sex,
        age_bin,
        findings,
    }
}
