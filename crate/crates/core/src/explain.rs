//! Grad-CAM heat maps for the convolutional classifiers.
//!
//! A heat map answers "which pixels most increase this output logit":
//! the gradient of the target logit is pulled back to a chosen conv
//! stage, averaged spatially into per-channel weights, and the
//! ReLU-gated weighted sum of the feature channels is upsampled to the
//! input size. Every map is normalized to [0,1] on its own, so color
//! intensity is comparable only within one panel, never across panels.

use std::path::Path;

use ndarray::{Array2, Array4, ArrayD, Axis};

use crate::classifiers::CnnBackbone;
use crate::imgutil::resize_bilinear;
use crate::nn::sigmoid_scalar;
use crate::{Error, Result};

/// A normalized saliency map for one image and one output node.
#[derive(Debug, Clone)]
pub struct HeatMap {
    /// Input-sized grid in [0,1]; all zeros when the raw map was constant,
    /// otherwise its minimum is exactly 0 and its maximum exactly 1.
    pub grid: Array2<f64>,
    /// Output node the map explains (judge: attribute column; disease
    /// model: finding index).
    pub target_class: usize,
    /// The model's sigmoid probability for that node on this image.
    pub model_probability: f64,
}

/// The conventional target stage: the last conv layer before pooling.
pub fn default_gradcam_layer(model: &CnnBackbone) -> usize {
    model.n_blocks() - 1
}

/// Computes the Grad-CAM map of `target_class` for one image.
///
/// `layer` is a conv stage index (`0..n_blocks`); the map is built from
/// that stage's post-ReLU output. Stage indices at or past the pooled
/// head are not spatial and are rejected with [`Error::InvalidLayer`].
/// A 1×1 feature map (tiny image, deep stage) is handled by the
/// constant rule rather than rejected: a one-cell map is always
/// constant, so the result is all zeros.
pub fn gradcam(
    model: &CnnBackbone,
    image: &Array2<f64>,
    target_class: usize,
    layer: usize,
) -> Result<HeatMap> {
    let s = model.image_size();
    if image.dim() != (s, s) {
        return Err(Error::ShapeError(format!(
            "image is {:?}, model expects ({s}, {s})",
            image.dim()
        )));
    }
    if layer >= model.n_blocks() {
        return Err(Error::InvalidLayer(format!(
            "stage {layer} has no spatial feature map; conv stages are 0..={}",
            model.n_blocks() - 1
        )));
    }
    if target_class >= model.n_out() {
        return Err(Error::InvalidSpec(format!(
            "target class {target_class} out of range; model has {} outputs",
            model.n_out()
        )));
    }

    let mut x = Array4::<f64>::zeros((1, 1, s, s));
    x.index_axis_mut(Axis(0), 0)
        .index_axis_mut(Axis(0), 0)
        .assign(image);

    // Forward to the chosen stage, keep its activation A, then finish the
    // pass; pull the one-hot logit gradient back to A without touching
    // any parameter gradients.
    let (a_maps, _) = model.forward_blocks_t(&x, 0, layer + 1);
    let (feat, tail_caches) = model.forward_blocks_t(&a_maps, layer + 1, model.n_blocks());
    let (logits, head_cache) = model.head_forward_t(&feat);
    let probability = sigmoid_scalar(logits[[0, target_class]]);

    let mut d_logits = Array2::<f64>::zeros(logits.raw_dim());
    d_logits[[0, target_class]] = 1.0;
    let d_feat = model.head_input_grad(&d_logits, &head_cache);
    let d_a = model.blocks_input_grad(&d_feat, &tail_caches, layer + 1);

    // Channel weights: spatial mean of the pulled-back gradient.
    let (_, channels, fh, fw) = a_maps.dim();
    let cells = (fh * fw) as f64;
    let mut raw = Array2::<f64>::zeros((fh, fw));
    for c in 0..channels {
        let w_c = d_a
            .index_axis(Axis(0), 0)
            .index_axis(Axis(0), c)
            .sum()
            / cells;
        raw.scaled_add(w_c, &a_maps.index_axis(Axis(0), 0).index_axis(Axis(0), c));
    }
    raw.mapv_inplace(|v| v.max(0.0));

    // Constancy is decided on the raw map: bilinear upsampling of a
    // constant surface can wobble by an ulp, and min-max normalization
    // would blow that noise up to full scale.
    let raw_min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw_max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = if raw_min == raw_max {
        Array2::zeros((s, s))
    } else {
        let mut up = resize_bilinear(&raw, s, s);
        let lo = up.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        up.mapv_inplace(|v| (v - lo) / (hi - lo));
        up
    };

    Ok(HeatMap {
        grid,
        target_class,
        model_probability: probability,
    })
}

/// Jet-style color ramp for heat intensity in [0,1].
fn heat_color(m: f64) -> [f64; 3] {
    let seg = |center: f64| (1.5 - (4.0 * m - center).abs()).clamp(0.0, 1.0);
    [seg(3.0), seg(2.0), seg(1.0)]
}

/// Writes the heat map alpha-blended over its grayscale source image.
///
/// `image` uses the pipeline's [-1,1] intensity range. Blending is
/// intensity-scaled: a pixel's color opacity is `alpha * heat`, so cold
/// regions stay radiograph-gray. `alpha` outside [0,1] is rejected.
pub fn save_overlay_png(
    image: &Array2<f64>,
    map: &HeatMap,
    alpha: f64,
    path: &Path,
) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(Error::InvalidAlpha(alpha));
    }
    if image.dim() != map.grid.dim() {
        return Err(Error::ShapeError(format!(
            "image {:?} vs heat map {:?}",
            image.dim(),
            map.grid.dim()
        )));
    }
    let (h, w) = image.dim();
    let mut rgb = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let gray = ((image[[y, x]] + 1.0) / 2.0).clamp(0.0, 1.0);
            let m = map.grid[[y, x]];
            let color = heat_color(m);
            let a = alpha * m;
            let px = [0, 1, 2].map(|c| {
                let v = gray * (1.0 - a) + color[c] * a;
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            });
            rgb.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    rgb.save(path)
        .map_err(|e| Error::FormatError(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Writes a batch of maps as one `(N, 1, H, W)` f32 array file, the same
/// container the edited-image stacks use. All maps must share one size.
pub fn save_heat_maps(maps: &[HeatMap], path: &Path) -> Result<()> {
    if maps.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, w) = maps[0].grid.dim();
    let mut stack = ArrayD::<f32>::zeros(ndarray::IxDyn(&[maps.len(), 1, h, w]));
    for (i, m) in maps.iter().enumerate() {
        if m.grid.dim() != (h, w) {
            return Err(Error::ShapeError(format!(
                "map {i} is {:?}, map 0 is ({h}, {w})",
                m.grid.dim()
            )));
        }
        for y in 0..h {
            for x in 0..w {
                stack[[i, 0, y, x]] = m.grid[[y, x]] as f32;
            }
        }
    }
    crate::arrayfile::write_f32(path, &stack)
}
