//! Disease diagnosis model: 15-way multi-label classifier with weighted
//! binary cross-entropy, an end-of-training snapshot ensemble, and
//! pluggable debiasing strategies applied per batch.

use std::path::Path;

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::archive::{load_archive, save_archive};
use super::backbone::CnnBackbone;
use super::debias::{balanced_resample, mixup_batch, sample_mixup_lambda};
use super::TrainRow;
use crate::dataio::{Attribute, ImageRecord, FINDINGS, NUM_FINDINGS};
use crate::metrics::{auc, confusion_metrics, pr_auc};
use crate::neutralizer::EncoderKind;
use crate::nn::{sigmoid_scalar, AdamW};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NZDDMSV1";
const INIT_SALT: u64 = 0x44_44_4d_30; // "DDM0"
const SHUFFLE_SALT: u64 = 0x44_53_48_46; // "DSHF"
const MIXUP_SALT: u64 = 0x44_4d_49_58; // "DMIX"
const BALANCE_SALT: u64 = 0x44_42_41_4c; // "DBAL"

/// Positive-class weights are clamped here; a finding with no positives at
/// all would otherwise divide by zero.
pub const MAX_POS_WEIGHT: f64 = 1e4;

/// Snapshot ensembles keep at most this many end-of-epoch models.
pub const MAX_SNAPSHOTS: usize = 20;

const EVAL_BATCH: usize = 64;

/// How the training set is shaped against attribute shortcuts.
///
/// `Neutralized` is provenance metadata: the caller trains on records whose
/// pixels were already edited at the stated intensity; this variant records
/// that fact in the checkpoint rather than re-editing anything here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainStrategy {
    Original,
    Neutralized { alpha: f64, encoder: EncoderKind },
    Balanced { attr: Attribute },
    Mixup { attr: Attribute, beta: f64 },
    ManifoldMixup { attr: Attribute, beta: f64 },
}

impl TrainStrategy {
    pub fn validate(&self) -> Result<()> {
        match self {
            TrainStrategy::Neutralized { alpha, .. } => {
                if !(0.0..=1.0).contains(alpha) || alpha.is_nan() {
                    return Err(Error::InvalidAlpha(*alpha));
                }
            }
            TrainStrategy::Mixup { beta, .. } | TrainStrategy::ManifoldMixup { beta, .. } => {
                if !(*beta > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "mixup beta must be positive, got {beta}"
                    )));
                }
            }
            TrainStrategy::Original | TrainStrategy::Balanced { .. } => {}
        }
        Ok(())
    }

    /// Short machine-readable tag for logs and file names.
    pub fn label(&self) -> String {
        match self {
            TrainStrategy::Original => "original".into(),
            TrainStrategy::Neutralized { alpha, encoder } => {
                format!("neutralized-{encoder:?}-a{alpha}").to_lowercase()
            }
            TrainStrategy::Balanced { attr } => format!("balanced-{}", attr.name()),
            TrainStrategy::Mixup { attr, .. } => format!("mixup-{}", attr.name()),
            TrainStrategy::ManifoldMixup { attr, .. } => {
                format!("manifold-mixup-{}", attr.name())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdmHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Additional epochs run purely to harvest ensemble snapshots.
    pub extra_ensemble_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub base_channels: usize,
    pub blocks: usize,
}

impl DdmHyper {
    pub fn new(epochs: usize) -> Self {
        DdmHyper {
            lr: 5e-4,
            batch_size: 120,
            epochs,
            extra_ensemble_epochs: 20,
            weight_decay: 0.0,
            seed: 0,
            base_channels: 16,
            blocks: 4,
        }
    }
}

/// Trained disease model: the last-epochs snapshot ensemble plus the class
/// weights and strategy it was trained with.
#[derive(Debug, Clone)]
pub struct DdmCheckpoint {
    /// End-of-epoch snapshots, oldest first; the last entry is the final
    /// model. Never empty, never longer than [`MAX_SNAPSHOTS`].
    pub snapshots: Vec<CnnBackbone>,
    pub pos_weights: Vec<f64>,
    pub strategy: TrainStrategy,
    pub seed: u64,
    pub epochs: usize,
    pub extra_ensemble_epochs: usize,
    pub warnings: Vec<String>,
}

/// Per-finding positive-class weights w_f = N_neg,f / N_pos,f, capped at
/// [`MAX_POS_WEIGHT`]. Returns the weights and a warning per capped finding.
pub fn positive_class_weights(records: &[ImageRecord]) -> (Vec<f64>, Vec<String>) {
    let n = records.len() as f64;
    let mut weights = Vec::with_capacity(NUM_FINDINGS);
    let mut warnings = Vec::new();
    for f in 0..NUM_FINDINGS {
        let pos = records.iter().filter(|r| r.findings[f] == 1).count() as f64;
        let raw = if pos == 0.0 {
            f64::INFINITY
        } else {
            (n - pos) / pos
        };
        if raw > MAX_POS_WEIGHT {
            warnings.push(format!(
                "finding {} ({}): {} positives of {} records, weight capped at {MAX_POS_WEIGHT}",
                f, FINDINGS[f], pos as usize, records.len()
            ));
            weights.push(MAX_POS_WEIGHT);
        } else {
            weights.push(raw);
        }
    }
    (weights, warnings)
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean weighted BCE over a batch of logits and (possibly soft) targets,
/// and its gradient. The positive term of finding f is scaled by w_f.
fn weighted_bce(
    z: &Array2<f64>,
    t: &Array2<f64>,
    w: &[f64],
) -> (f64, Array2<f64>) {
    let (b, f) = z.dim();
    let scale = 1.0 / (b * f) as f64;
    let mut loss = 0.0;
    let mut d_z = Array2::zeros((b, f));
    for bi in 0..b {
        for fi in 0..f {
            let zv = z[[bi, fi]];
            let tv = t[[bi, fi]];
            loss += w[fi] * tv * softplus(-zv) + (1.0 - tv) * softplus(zv);
            let s = sigmoid_scalar(zv);
            d_z[[bi, fi]] = (w[fi] * tv * (s - 1.0) + (1.0 - tv) * s) * scale;
        }
    }
    (loss * scale, d_z)
}

fn findings_matrix(records: &[ImageRecord], indices: &[usize]) -> Array2<f64> {
    let mut t = Array2::zeros((indices.len(), NUM_FINDINGS));
    for (bi, &idx) in indices.iter().enumerate() {
        for f in 0..NUM_FINDINGS {
            t[[bi, f]] = records[idx].findings[f] as f64;
        }
    }
    t
}

fn pixel_batch(records: &[ImageRecord], indices: &[usize], size: usize) -> Array4<f64> {
    let mut x = Array4::zeros((indices.len(), 1, size, size));
    for (bi, &idx) in indices.iter().enumerate() {
        x.slice_mut(ndarray::s![bi, 0, .., ..])
            .assign(&records[idx].pixels.mapv(|v| v as f64));
    }
    x
}

/// Endless deterministic sampler over a group's indices: shuffles, deals,
/// reshuffles on exhaustion.
struct IndexCycler {
    ids: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl IndexCycler {
    fn new(mut ids: Vec<usize>, mut rng: ChaCha8Rng) -> Self {
        ids.shuffle(&mut rng);
        IndexCycler { ids, pos: 0, rng }
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            if self.pos == self.ids.len() {
                self.ids.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.ids[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn attr_of(strategy: &TrainStrategy) -> Option<Attribute> {
    match strategy {
        TrainStrategy::Balanced { attr }
        | TrainStrategy::Mixup { attr, .. }
        | TrainStrategy::ManifoldMixup { attr, .. } => Some(*attr),
        _ => None,
    }
}

/// Trains the disease model. Runs `epochs + extra_ensemble_epochs` epochs
/// and keeps snapshots from the last `min(max(extra, 1), 20)` of them; with
/// zero total epochs the initialization itself is the single snapshot.
///
/// Class weights always come from the full `records` set, before any
/// per-epoch resampling.
pub fn train_ddm(
    records: &[ImageRecord],
    strategy: &TrainStrategy,
    hyper: &DdmHyper,
) -> Result<(DdmCheckpoint, Vec<TrainRow>)> {
    strategy.validate()?;
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
    if let Some(attr) = attr_of(strategy) {
        let ones = records.iter().filter(|r| r.attribute(attr) == 1).count();
        if ones == 0 || ones == records.len() {
            return Err(Error::EmptyGroup);
        }
    }

    let (pos_weights, mut warnings) = positive_class_weights(records);
    let mut model = CnnBackbone::new(
        size,
        hyper.base_channels,
        hyper.blocks,
        NUM_FINDINGS,
        derive_seed(hyper.seed, INIT_SALT),
    )?;
    model.zero_head();
    let mut opt = AdamW::new(hyper.weight_decay);

    let total_epochs = hyper.epochs + hyper.extra_ensemble_epochs;
    let n_snapshots = hyper
        .extra_ensemble_epochs
        .max(1)
        .min(MAX_SNAPSHOTS)
        .min(total_epochs.max(1));
    if hyper.extra_ensemble_epochs > MAX_SNAPSHOTS {
        warnings.push(format!(
            "{} ensemble epochs requested; keeping the last {MAX_SNAPSHOTS} snapshots",
            hyper.extra_ensemble_epochs
        ));
    }

    let mut snapshots: Vec<CnnBackbone> = Vec::with_capacity(n_snapshots);
    let mut rows = Vec::new();
    for epoch in 0..total_epochs {
        // Per-epoch effective training set.
        let resampled;
        let active: &[ImageRecord] = match strategy {
            TrainStrategy::Balanced { attr } => {
                resampled = balanced_resample(
                    records,
                    *attr,
                    derive_seed(derive_seed(hyper.seed, BALANCE_SALT), epoch as u64),
                )?;
                &resampled
            }
            _ => records,
        };

        let steps = match strategy {
            TrainStrategy::Mixup { .. } | TrainStrategy::ManifoldMixup { .. } => {
                active.len().div_ceil(hyper.batch_size)
            }
            _ => 0, // plain path iterates chunks directly
        };

        match strategy {
            TrainStrategy::Mixup { attr, beta } | TrainStrategy::ManifoldMixup { attr, beta } => {
                let manifold = matches!(strategy, TrainStrategy::ManifoldMixup { .. });
                let group_a: Vec<usize> = (0..active.len())
                    .filter(|&i| active[i].attribute(*attr) == 0)
                    .collect();
                let group_b: Vec<usize> = (0..active.len())
                    .filter(|&i| active[i].attribute(*attr) == 1)
                    .collect();
                let epoch_seed = derive_seed(derive_seed(hyper.seed, SHUFFLE_SALT), epoch as u64);
                let mut cyc_a = IndexCycler::new(group_a, stream_rng(epoch_seed, 0));
                let mut cyc_b = IndexCycler::new(group_b, stream_rng(epoch_seed, 1));
                let mut rng_mix =
                    stream_rng(derive_seed(hyper.seed, MIXUP_SALT), epoch as u64);

                for step in 0..steps {
                    let ids_a = cyc_a.take(hyper.batch_size.min(active.len()));
                    let ids_b = cyc_b.take(hyper.batch_size.min(active.len()));
                    let x_a = pixel_batch(active, &ids_a, size);
                    let x_b = pixel_batch(active, &ids_b, size);
                    let y_a = findings_matrix(active, &ids_a);
                    let y_b = findings_matrix(active, &ids_b);
                    let lambda = sample_mixup_lambda(*beta, &mut rng_mix)?;

                    let loss = if manifold {
                        // Blend at the feature map entering the last block.
                        let k = model.penultimate_boundary();
                        let (f_a, caches_a) = model.forward_blocks_t(&x_a, 0, k);
                        let (f_b, caches_b) = model.forward_blocks_t(&x_b, 0, k);
                        let f_mix = lambda * &f_a + (1.0 - lambda) * &f_b;
                        let t = lambda * &y_a + (1.0 - lambda) * &y_b;
                        let (h, caches_tail) =
                            model.forward_blocks_t(&f_mix, k, model.n_blocks());
                        let (z, head_cache) = model.head_forward_t(&h);
                        let (loss, d_z) = weighted_bce(&z, &t, &pos_weights);
                        let d_h = model.head_backward(&d_z, &head_cache, true);
                        let d_mix = model.backward_blocks(&d_h, &caches_tail, k, true);
                        model.backward_blocks(&(lambda * &d_mix), &caches_a, 0, true);
                        model.backward_blocks(&((1.0 - lambda) * &d_mix), &caches_b, 0, true);
                        loss
                    } else {
                        let (x, t) = mixup_batch(&x_a, &y_a, &x_b, &y_b, lambda)?;
                        let (z, cache) = model.forward_t(&x);
                        let (loss, d_z) = weighted_bce(&z, &t, &pos_weights);
                        model.backward(&d_z, &cache, true);
                        loss
                    };
                    if !loss.is_finite() {
                        return Err(Error::NumericalError(format!(
                            "training loss became non-finite at epoch {epoch}, step {step}"
                        )));
                    }
                    opt.step(&mut model.params_mut(), hyper.lr);
                    rows.push(TrainRow { epoch, step, loss });
                }
            }
            _ => {
                let mut order: Vec<usize> = (0..active.len()).collect();
                order.shuffle(&mut stream_rng(
                    derive_seed(hyper.seed, SHUFFLE_SALT),
                    epoch as u64,
                ));
                for (step, chunk) in order.chunks(hyper.batch_size).enumerate() {
                    let x = pixel_batch(active, chunk, size);
                    let t = findings_matrix(active, chunk);
                    let (z, cache) = model.forward_t(&x);
                    let (loss, d_z) = weighted_bce(&z, &t, &pos_weights);
                    if !loss.is_finite() {
                        return Err(Error::NumericalError(format!(
                            "training loss became non-finite at epoch {epoch}, step {step}"
                        )));
                    }
                    model.backward(&d_z, &cache, true);
                    opt.step(&mut model.params_mut(), hyper.lr);
                    rows.push(TrainRow { epoch, step, loss });
                }
            }
        }

        if total_epochs - epoch <= n_snapshots {
            snapshots.push(model.clone());
        }
    }
    if snapshots.is_empty() {
        snapshots.push(model);
    }

    Ok((
        DdmCheckpoint {
            snapshots,
            pos_weights,
            strategy: strategy.clone(),
            seed: hyper.seed,
            epochs: hyper.epochs,
            extra_ensemble_epochs: hyper.extra_ensemble_epochs,
            warnings,
        },
        rows,
    ))
}

/// How snapshot ensembling combines members at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Average predicted probabilities across snapshots, then score once.
    ProbAvg,
    /// Score each snapshot, then average the metric values.
    MetricAvg,
}

/// Metrics for one finding; all null when the test labels for it are
/// single-class.
#[derive(Debug, Clone, Serialize)]
pub struct FindingReport {
    pub index: usize,
    pub name: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
    pub acc: Option<f64>,
    pub sen: Option<f64>,
    pub spe: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DdmReport {
    pub mode: EnsembleMode,
    pub per_finding: Vec<FindingReport>,
    /// Macro means over the findings with defined metrics.
    pub macro_roc_auc: Option<f64>,
    pub macro_pr_auc: Option<f64>,
    pub macro_acc: Option<f64>,
    pub macro_sen: Option<f64>,
    pub macro_spe: Option<f64>,
    pub macro_f1: Option<f64>,
    pub n_defined: usize,
}

fn model_probs(model: &CnnBackbone, records: &[ImageRecord]) -> Array2<f64> {
    let size = model.image_size();
    let mut out = Array2::zeros((records.len(), NUM_FINDINGS));
    for start in (0..records.len()).step_by(EVAL_BATCH) {
        let chunk = &records[start..(start + EVAL_BATCH).min(records.len())];
        let indices: Vec<usize> = (0..chunk.len()).collect();
        let x = pixel_batch(chunk, &indices, size);
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&model.probs(&x));
    }
    out
}

struct FindingScores {
    roc_auc: Option<f64>,
    pr_auc: Option<f64>,
    acc: f64,
    sen: f64,
    spe: f64,
    f1: f64,
}

fn score_finding(scores: &[f64], labels: &[u8]) -> Option<FindingScores> {
    let roc = match auc(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::UndefinedAuc) => return None,
        Err(_) => return None,
    };
    let pr = pr_auc(scores, labels).ok();
    let cm = confusion_metrics(scores, labels, 0.5);
    Some(FindingScores {
        roc_auc: roc,
        pr_auc: pr,
        acc: cm.acc,
        sen: cm.sen,
        spe: cm.spe,
        f1: cm.f1,
    })
}

fn macro_mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().filter_map(|v| *v).collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Snapshot-averaged probabilities on `records`: one row per record, one
/// column per finding. This is the score matrix behind
/// [`EnsembleMode::ProbAvg`], exposed so downstream analyses (paired AUC
/// tests, subgroup breakdowns) can work from the same predictions.
pub fn ensemble_probs(ckpt: &DdmCheckpoint, records: &[ImageRecord]) -> Result<Array2<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(!ckpt.snapshots.is_empty(), "checkpoints hold ≥ 1 snapshot");
    let size = ckpt.snapshots[0].image_size();
    for rec in records {
        if rec.pixels.dim() != (size, size) {
            return Err(Error::InvalidSize(format!(
                "image {} is {:?}, the model expects {size}×{size}",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
    }
    let mut mean = Array2::zeros((records.len(), NUM_FINDINGS));
    for model in &ckpt.snapshots {
        mean += &model_probs(model, records);
    }
    mean /= ckpt.snapshots.len() as f64;
    Ok(mean)
}

/// Evaluates the snapshot ensemble on `records`: per-finding ROC-AUC,
/// PR-AUC, and thresholded metrics at 0.5, plus macro means over the
/// findings present in the test labels.
pub fn evaluate_ddm(
    ckpt: &DdmCheckpoint,
    records: &[ImageRecord],
    mode: EnsembleMode,
) -> Result<DdmReport> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    assert!(!ckpt.snapshots.is_empty(), "checkpoints hold ≥ 1 snapshot");
    let size = ckpt.snapshots[0].image_size();
    for rec in records {
        if rec.pixels.dim() != (size, size) {
            return Err(Error::InvalidSize(format!(
                "image {} is {:?}, the model expects {size}×{size}",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
    }

    let per_snapshot: Vec<Array2<f64>> = ckpt
        .snapshots
        .iter()
        .map(|m| model_probs(m, records))
        .collect();

    let mut per_finding = Vec::with_capacity(NUM_FINDINGS);
    for f in 0..NUM_FINDINGS {
        let labels: Vec<u8> = records.iter().map(|r| r.findings[f]).collect();
        let n_pos = labels.iter().filter(|&&b| b == 1).count();
        let n_neg = labels.len() - n_pos;

        let scored = match mode {
            EnsembleMode::ProbAvg => {
                let mut mean = vec![0.0; records.len()];
                for probs in &per_snapshot {
                    for (i, m) in mean.iter_mut().enumerate() {
                        *m += probs[[i, f]];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= per_snapshot.len() as f64;
                }
                score_finding(&mean, &labels)
            }
            EnsembleMode::MetricAvg => {
                let member_scores: Vec<FindingScores> = per_snapshot
                    .iter()
                    .filter_map(|probs| {
                        let scores: Vec<f64> = (0..records.len()).map(|i| probs[[i, f]]).collect();
                        score_finding(&scores, &labels)
                    })
                    .collect();
                if member_scores.is_empty() {
                    None
                } else {
                    let k = member_scores.len() as f64;
                    Some(FindingScores {
                        roc_auc: macro_mean(
                            &member_scores.iter().map(|s| s.roc_auc).collect::<Vec<_>>(),
                        ),
                        pr_auc: macro_mean(
                            &member_scores.iter().map(|s| s.pr_auc).collect::<Vec<_>>(),
                        ),
                        acc: member_scores.iter().map(|s| s.acc).sum::<f64>() / k,
                        sen: member_scores.iter().map(|s| s.sen).sum::<f64>() / k,
                        spe: member_scores.iter().map(|s| s.spe).sum::<f64>() / k,
                        f1: member_scores.iter().map(|s| s.f1).sum::<f64>() / k,
                    })
                }
            }
        };

        per_finding.push(match scored {
            Some(s) => FindingReport {
                index: f,
                name: FINDINGS[f].to_string(),
                n_pos,
                n_neg,
                roc_auc: s.roc_auc,
                pr_auc: s.pr_auc,
                acc: Some(s.acc),
                sen: Some(s.sen),
                spe: Some(s.spe),
                f1: Some(s.f1),
            },
            None => FindingReport {
                index: f,
                name: FINDINGS[f].to_string(),
                n_pos,
                n_neg,
                roc_auc: None,
                pr_auc: None,
                acc: None,
                sen: None,
                spe: None,
                f1: None,
            },
        });
    }

    let n_defined = per_finding.iter().filter(|r| r.roc_auc.is_some()).count();
    let collect = |get: fn(&FindingReport) -> Option<f64>| {
        macro_mean(&per_finding.iter().map(get).collect::<Vec<_>>())
    };
    Ok(DdmReport {
        mode,
        macro_roc_auc: collect(|r| r.roc_auc),
        macro_pr_auc: collect(|r| r.pr_auc),
        macro_acc: collect(|r| r.acc),
        macro_sen: collect(|r| r.sen),
        macro_spe: collect(|r| r.spe),
        macro_f1: collect(|r| r.f1),
        per_finding,
        n_defined,
    })
}

#[derive(Serialize, Deserialize)]
struct DdmMeta {
    image_size: usize,
    base_channels: usize,
    blocks: usize,
    n_snapshots: usize,
    pos_weights: Vec<f64>,
    strategy: TrainStrategy,
    seed: u64,
    epochs: usize,
    extra_ensemble_epochs: usize,
    warnings: Vec<String>,
}

impl DdmCheckpoint {
    pub fn image_size(&self) -> usize {
        self.snapshots[0].image_size()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = DdmMeta {
            image_size: self.image_size(),
            base_channels: self.snapshots[0].base_channels(),
            blocks: self.snapshots[0].n_blocks(),
            n_snapshots: self.snapshots.len(),
            pos_weights: self.pos_weights.clone(),
            strategy: self.strategy.clone(),
            seed: self.seed,
            epochs: self.epochs,
            extra_ensemble_epochs: self.extra_ensemble_epochs,
            warnings: self.warnings.clone(),
        };
        let mut clones: Vec<CnnBackbone> = self.snapshots.clone();
        let mut named = Vec::new();
        for (k, snap) in clones.iter_mut().enumerate() {
            for (name, p) in snap.named_params_mut() {
                named.push((format!("snap{k}.{name}"), p));
            }
        }
        save_archive(path, MAGIC, &meta, named)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let loaded = load_archive::<DdmMeta>(path, MAGIC)?;
        let meta = &loaded.meta;
        let mut snapshots = Vec::with_capacity(meta.n_snapshots);
        for _ in 0..meta.n_snapshots {
            snapshots.push(CnnBackbone::new(
                meta.image_size,
                meta.base_channels,
                meta.blocks,
                NUM_FINDINGS,
                0,
            )?);
        }
        let mut named = Vec::new();
        for (k, snap) in snapshots.iter_mut().enumerate() {
            for (name, p) in snap.named_params_mut() {
                named.push((format!("snap{k}.{name}"), p));
            }
        }
        let out = DdmCheckpoint {
            pos_weights: meta.pos_weights.clone(),
            strategy: meta.strategy.clone(),
            seed: meta.seed,
            epochs: meta.epochs,
            extra_ensemble_epochs: meta.extra_ensemble_epochs,
            warnings: meta.warnings.clone(),
            snapshots: Vec::new(),
        };
        loaded.assign_all(named)?;
        Ok(DdmCheckpoint { snapshots, ..out })
    }
}
