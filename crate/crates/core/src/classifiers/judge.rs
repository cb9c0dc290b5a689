//! Attribute judge: a convolutional classifier with two sigmoid output
//! nodes, one per protected attribute (sex, age), trained on original
//! images and used afterwards to audit how much attribute signal survives
//! in edited images.

use std::path::Path;

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use super::archive::{load_archive, save_archive};
use super::backbone::CnnBackbone;
use super::TrainRow;
use crate::dataio::{Attribute, ImageRecord};
use crate::editing::EditedImageSet;
use crate::imgutil::{gaussian_blur, rotate_bilinear, translate_bilinear};
use crate::metrics::{auc, confusion_metrics};
use crate::neutralizer::{bce_with_logits, fnv1a_f64};
use crate::nn::{sigmoid_scalar, AdamW};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NZJDGEV1";
const INIT_SALT: u64 = 0x4a_44_47_30; // "JDG0"
const SHUFFLE_SALT: u64 = 0x4a_53_48_46; // "JSHF"
const AUGMENT_SALT: u64 = 0x4a_41_55_47; // "JAUG"

/// Images are scored in chunks of this many at evaluation time.
const EVAL_BATCH: usize = 64;

/// Train-time image augmentations. Each sample draws its augmentation
/// parameters from a dedicated stream, so a run is reproducible end to end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Mirror left-right with probability one half.
    pub hflip: bool,
    /// Maximum absolute rotation, degrees; the angle is uniform in ±this.
    pub rotation_deg: f64,
    /// Maximum translation as a fraction of the image side, per axis.
    pub translate_frac: f64,
    /// Maximum Gaussian blur σ; blur is applied to half the samples with
    /// σ uniform in (0, max].
    pub blur_sigma: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip: true,
            rotation_deg: 10.0,
            translate_frac: 0.05,
            blur_sigma: 1.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            hflip: false,
            rotation_deg: 0.0,
            translate_frac: 0.0,
            blur_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub augment: AugmentConfig,
    pub seed: u64,
    pub base_channels: usize,
    pub blocks: usize,
}

impl JudgeHyper {
    pub fn new(epochs: usize) -> Self {
        JudgeHyper {
            lr: 5e-4,
            batch_size: 120,
            epochs,
            weight_decay: 0.0,
            augment: AugmentConfig::default(),
            seed: 0,
            base_channels: 16,
            blocks: 4,
        }
    }
}

/// A trained judge. Output node 0 scores sex, node 1 scores the age bin.
#[derive(Debug, Clone)]
pub struct JudgeCheckpoint {
    pub backbone: CnnBackbone,
    pub seed: u64,
    pub epochs: usize,
    /// Mean training loss of the final epoch; absent for untrained judges.
    pub final_loss: Option<f64>,
}

/// Column of the judge's output that scores `attr`.
pub fn attribute_column(attr: Attribute) -> usize {
    match attr {
        Attribute::Sex => 0,
        Attribute::Age => 1,
    }
}

/// Fixed-order augmentation: always draws the same number of randoms per
/// sample, applies only what the config enables.
fn apply_augment(
    img: &ndarray::Array2<f64>,
    cfg: &AugmentConfig,
    rng: &mut impl rand::Rng,
) -> ndarray::Array2<f64> {
    let size = img.nrows() as f64;
    let flip: bool = rng.random_bool(0.5);
    let angle = rng.random_range(-1.0..=1.0) * cfg.rotation_deg;
    let dy = rng.random_range(-1.0..=1.0) * cfg.translate_frac * size;
    let dx = rng.random_range(-1.0..=1.0) * cfg.translate_frac * size;
    let blur_on: bool = rng.random_bool(0.5);
    let sigma = rng.random_range(0.0..=1.0) * cfg.blur_sigma;

    let mut out = img.clone();
    if cfg.rotation_deg > 0.0 {
        out = rotate_bilinear(&out, angle, -1.0);
    }
    if cfg.translate_frac > 0.0 {
        out = translate_bilinear(&out, dy, dx, -1.0);
    }
    if cfg.blur_sigma > 0.0 && blur_on {
        out = gaussian_blur(&out, sigma);
    }
    if cfg.hflip && flip {
        let n = out.ncols();
        out = ndarray::Array2::from_shape_fn(out.raw_dim(), |(i, j)| out[[i, n - 1 - j]]);
    }
    out
}

fn check_records(records: &[ImageRecord]) -> Result<usize> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let size = records[0].pixels.nrows();
    for rec in records {
        if rec.pixels.dim() != (size, size) {
            return Err(Error::InvalidSize(format!(
                "image {} is {:?}, expected {size}×{size}",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
    }
    Ok(size)
}

/// Trains the judge on `records` (originals). Supplying `init` starts from
/// existing backbone weights instead of a random initialization.
pub fn train_judge_with_backbone(
    records: &[ImageRecord],
    hyper: &JudgeHyper,
    init: Option<CnnBackbone>,
) -> Result<(JudgeCheckpoint, Vec<TrainRow>)> {
    let size = check_records(records)?;
    for attr in [Attribute::Sex, Attribute::Age] {
        let first = records[0].attribute(attr);
        if records.iter().all(|r| r.attribute(attr) == first) {
            return Err(Error::DegenerateLabels(format!(
                "{} labels are single-class in the training set",
                attr.name()
            )));
        }
    }
    let mut model = match init {
        Some(m) => {
            if m.image_size() != size || m.n_out() != 2 {
                return Err(Error::InvalidSpec(format!(
                    "supplied backbone handles {}×{} images with {} outputs; need {size}×{size} with 2",
                    m.image_size(),
                    m.image_size(),
                    m.n_out()
                )));
            }
            m
        }
        None => {
            let mut b = CnnBackbone::new(
                size,
                hyper.base_channels,
                hyper.blocks,
                2,
                derive_seed(hyper.seed, INIT_SALT),
            )?;
            b.zero_head();
            b
        }
    };

    let mut opt = AdamW::new(hyper.weight_decay);
    let mut rows = Vec::new();
    let mut final_loss = None;
    for epoch in 0..hyper.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut stream_rng(
            derive_seed(hyper.seed, SHUFFLE_SALT),
            epoch as u64,
        ));
        let mut rng_aug = stream_rng(derive_seed(hyper.seed, AUGMENT_SALT), epoch as u64);

        let mut epoch_loss = 0.0;
        let mut n_steps = 0usize;
        for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let b = chunk.len();
            let mut x = Array4::<f64>::zeros((b, 1, size, size));
            let mut t = Array2::<f64>::zeros((b, 2));
            for (bi, &idx) in chunk.iter().enumerate() {
                let rec = &records[idx];
                let img = apply_augment(
                    &rec.pixels.mapv(|v| v as f64),
                    &hyper.augment,
                    &mut rng_aug,
                );
                x.slice_mut(ndarray::s![bi, 0, .., ..]).assign(&img);
                t[[bi, 0]] = rec.sex as f64;
                t[[bi, 1]] = rec.age_bin as f64;
            }

            let (z, cache) = model.forward_t(&x);
            let mut loss = 0.0;
            let mut d_z = Array2::<f64>::zeros((b, 2));
            for bi in 0..b {
                for j in 0..2 {
                    loss += bce_with_logits(z[[bi, j]], t[[bi, j]]);
                    d_z[[bi, j]] = (sigmoid_scalar(z[[bi, j]]) - t[[bi, j]]) / b as f64;
                }
            }
            loss /= b as f64;
            if !loss.is_finite() {
                return Err(Error::NumericalError(format!(
                    "judge loss became non-finite at epoch {epoch}, step {step}"
                )));
            }
            model.backward(&d_z, &cache, true);
            opt.step(&mut model.params_mut(), hyper.lr);

            rows.push(TrainRow { epoch, step, loss });
            epoch_loss += loss;
            n_steps += 1;
        }
        final_loss = Some(epoch_loss / n_steps as f64);
    }

    Ok((
        JudgeCheckpoint {
            backbone: model,
            seed: hyper.seed,
            epochs: hyper.epochs,
            final_loss,
        },
        rows,
    ))
}

pub fn train_judge(
    records: &[ImageRecord],
    hyper: &JudgeHyper,
) -> Result<(JudgeCheckpoint, Vec<TrainRow>)> {
    train_judge_with_backbone(records, hyper, None)
}

impl JudgeCheckpoint {
    pub fn image_size(&self) -> usize {
        self.backbone.image_size()
    }

    /// Probabilities for a pixel stack, one row per image, columns
    /// (sex, age).
    pub fn probs(&self, x: &Array4<f64>) -> Array2<f64> {
        self.backbone.probs(x)
    }

    /// Scores records in evaluation batches; columns (sex, age).
    pub fn score_records(&self, records: &[ImageRecord]) -> Result<Array2<f64>> {
        let size = self.image_size();
        for rec in records {
            if rec.pixels.dim() != (size, size) {
                return Err(Error::InvalidSize(format!(
                    "image {} is {:?}, the judge expects {size}×{size}",
                    rec.image_id,
                    rec.pixels.dim()
                )));
            }
        }
        let mut out = Array2::zeros((records.len(), 2));
        for start in (0..records.len()).step_by(EVAL_BATCH) {
            let chunk = &records[start..(start + EVAL_BATCH).min(records.len())];
            let mut x = Array4::<f64>::zeros((chunk.len(), 1, size, size));
            for (bi, rec) in chunk.iter().enumerate() {
                x.slice_mut(ndarray::s![bi, 0, .., ..])
                    .assign(&rec.pixels.mapv(|v| v as f64));
            }
            out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
                .assign(&self.probs(&x));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = JudgeMeta {
            image_size: self.image_size(),
            base_channels: self.backbone.base_channels(),
            blocks: self.backbone.n_blocks(),
            seed: self.seed,
            epochs: self.epochs,
            final_loss: self.final_loss,
            weights_hash: {
                let mut m = self.backbone.clone();
                let flat: Vec<f64> = m
                    .params_mut()
                    .iter()
                    .flat_map(|p| p.value.iter().copied().collect::<Vec<_>>())
                    .collect();
                fnv1a_f64(flat.iter())
            },
        };
        let mut model = self.backbone.clone();
        save_archive(path, MAGIC, &meta, model.named_params_mut())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = load_archive::<JudgeMeta>(path, MAGIC)?;
        let meta_epochs = loaded.meta.epochs;
        let meta_seed = loaded.meta.seed;
        let meta_loss = loaded.meta.final_loss;
        let mut backbone = CnnBackbone::new(
            loaded.meta.image_size,
            loaded.meta.base_channels,
            loaded.meta.blocks,
            2,
            0,
        )?;
        loaded.assign_all(backbone.named_params_mut())?;
        Ok(JudgeCheckpoint {
            backbone,
            seed: meta_seed,
            epochs: meta_epochs,
            final_loss: meta_loss,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JudgeMeta {
    image_size: usize,
    base_channels: usize,
    blocks: usize,
    seed: u64,
    epochs: usize,
    final_loss: Option<f64>,
    weights_hash: u64,
}

/// One row of the leakage audit: judge performance on images edited at one
/// intensity.
#[derive(Debug, Clone, Serialize)]
pub struct LeakageRow {
    pub alpha: f64,
    /// Threshold-free AUC; null when the labels are single-class.
    pub auc: Option<f64>,
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LeakageReport {
    pub attribute: Attribute,
    pub rows: Vec<LeakageRow>,
    pub warnings: Vec<String>,
}

/// Scores every α-stack of `edited` with the judge's node for the edited
/// attribute and tabulates AUC/ACC/SEN/SPE/F1 (threshold 0.5) against the
/// true attribute bits, one row per α.
pub fn evaluate_leakage(
    judge: &JudgeCheckpoint,
    edited: &EditedImageSet,
    labels: &[u8],
) -> Result<LeakageReport> {
    if labels.len() != edited.n_images() {
        return Err(Error::ShapeError(format!(
            "{} labels for {} edited images",
            labels.len(),
            edited.n_images()
        )));
    }
    let size = judge.image_size();
    let col = attribute_column(edited.attribute);
    let mut rows = Vec::with_capacity(edited.alphas.len());
    let mut warnings = Vec::new();
    for (&alpha, stack) in edited.alphas.iter().zip(&edited.arrays) {
        let (n, _, h, w) = stack.dim();
        if (h, w) != (size, size) {
            return Err(Error::ShapeError(format!(
                "edited stack is {h}×{w}, the judge expects {size}×{size}"
            )));
        }
        let mut scores = Vec::with_capacity(n);
        for start in (0..n).step_by(EVAL_BATCH) {
            let stop = (start + EVAL_BATCH).min(n);
            let x = stack
                .slice(ndarray::s![start..stop, .., .., ..])
                .mapv(|v| v as f64);
            let p = judge.probs(&x);
            scores.extend(p.column(col).iter().copied());
        }
        let auc_value = match auc(&scores, labels) {
            Ok(a) => Some(a),
            Err(Error::UndefinedAuc) => {
                warnings.push(format!(
                    "alpha {alpha}: labels are single-class, AUC undefined"
                ));
                None
            }
            Err(e) => return Err(e),
        };
        let cm = confusion_metrics(&scores, labels, 0.5);
        rows.push(LeakageRow {
            alpha,
            auc: auc_value,
            acc: cm.acc,
            sen: cm.sen,
            spe: cm.spe,
            f1: cm.f1,
        });
    }
    Ok(LeakageReport {
        attribute: edited.attribute,
        rows,
        warnings,
    })
}
