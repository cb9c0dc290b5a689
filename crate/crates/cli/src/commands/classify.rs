//! Classifier stages: `train-judge`, `audit`, `train-ddm`, `eval-ddm`.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array4};

use neutralyze_core::classifiers::{
    attribute_column, ensemble_probs, evaluate_ddm, evaluate_leakage, subgroup_fairness,
    train_ddm, train_judge, DdmCheckpoint, DdmHyper, EnsembleMode, JudgeCheckpoint, JudgeHyper,
    TrainRow, TrainStrategy,
};
use neutralyze_core::dataio::{Attribute, ImageRecord, FINDINGS, NUM_FINDINGS};
use neutralyze_core::editing::{alpha_file_name, EditedImageSet};
use neutralyze_core::metrics::{auc, roc_curve};

use crate::config::EnsembleChoice;
use crate::errors::{CliError, CliResult};

use super::{attribute_labels, filter_rows, opt_cell, write_csv, Ctx};

const SCORE_BATCH: usize = 64;

fn write_train_log(path: &Path, rows: &[TrainRow]) -> CliResult<()> {
    let rendered: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.step.to_string(),
                r.loss.to_string(),
            ]
        })
        .collect();
    write_csv(path, &["epoch", "step", "loss"], &rendered)
}

/// Trains the attribute judge on original train-split images.
pub fn train_judge_cmd(ctx: &Ctx) -> CliResult<()> {
    let records = ctx.dataset()?;
    let split = ctx.split(&records)?;
    let j = &ctx.cfg.judge;
    let hyper = JudgeHyper {
        lr: j.lr,
        batch_size: j.batch_size,
        epochs: j.epochs,
        weight_decay: j.weight_decay,
        augment: j.augment_config(),
        seed: ctx.cfg.run.seed,
        base_channels: j.base_channels,
        blocks: j.blocks,
    };
    let (ckpt, rows) = train_judge(&split.train, &hyper)?;

    let dir = ctx.out.join("judge");
    std::fs::create_dir_all(&dir)?;
    let ckpt_path = ctx.judge_path();
    let log_path = dir.join("train_log.csv");
    ckpt.save(&ckpt_path)?;
    write_train_log(&log_path, &rows)?;

    // Quick read on how well the judge generalizes, straight to stdout.
    if !split.val.is_empty() {
        let scores = ckpt.score_records(&split.val)?;
        for attr in [Attribute::Sex, Attribute::Age] {
            let col = attribute_column(attr);
            let s: Vec<f64> = (0..split.val.len()).map(|i| scores[[i, col]]).collect();
            let labels: Vec<u8> = split.val.iter().map(|r| r.attribute(attr)).collect();
            match auc(&s, &labels) {
                Ok(a) => println!("validation {} AUC: {a:.4}", attr.name()),
                Err(_) => println!("validation {} AUC: undefined (single-class)", attr.name()),
            }
        }
    }

    ctx.finish(
        "train-judge",
        serde_json::json!({
            "epochs": j.epochs,
            "train_images": split.train.len(),
        }),
        &[ckpt_path.clone(), log_path],
    )?;
    println!(
        "trained judge for {} epochs on {} images → {}",
        j.epochs,
        split.train.len(),
        ckpt_path.display()
    );
    Ok(())
}

/// Judge probabilities for one α stack, batched; column = `col`.
pub fn stack_scores(judge: &JudgeCheckpoint, stack: &Array4<f32>, col: usize) -> Vec<f64> {
    let n = stack.dim().0;
    let mut out = Vec::with_capacity(n);
    for start in (0..n).step_by(SCORE_BATCH) {
        let stop = (start + SCORE_BATCH).min(n);
        let chunk = stack
            .slice(ndarray::s![start..stop, .., .., ..])
            .mapv(f64::from);
        let probs = judge.probs(&chunk);
        out.extend((0..stop - start).map(|i| probs[[i, col]]));
    }
    out
}

/// Scores the edited test images with the judge: the leakage table (one
/// row per α) plus ROC point sets.
pub fn audit(ctx: &Ctx) -> CliResult<()> {
    let judge = ctx.judge()?;
    let set = ctx.edited()?;
    let records = ctx.dataset()?;

    let test_rows = set.split_rows("test");
    if test_rows.is_empty() {
        return Err(CliError::missing(
            "edited test images",
            ctx.edited_dir().join(ctx.attribute().name()),
            "generate",
        ));
    }
    let test_set = filter_rows(&set, &test_rows);
    let labels = attribute_labels(&test_set, &records, ctx.attribute())?;
    let report = evaluate_leakage(&judge, &test_set, &labels)?;

    let dir = ctx.out.join("audit");
    std::fs::create_dir_all(&dir)?;
    let leakage_csv = dir.join("leakage.csv");
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.alpha.to_string(),
                opt_cell(r.auc),
                r.acc.to_string(),
                r.sen.to_string(),
                r.spe.to_string(),
                r.f1.to_string(),
            ]
        })
        .collect();
    write_csv(&leakage_csv, &["alpha", "auc", "acc", "sen", "spe", "f1"], &rows)?;
    let leakage_json = dir.join("leakage.json");
    std::fs::write(&leakage_json, serde_json::to_string_pretty(&report)?)?;

    // ROC point sets per α, long format.
    let col = attribute_column(ctx.attribute());
    let mut roc_rows: Vec<Vec<String>> = Vec::new();
    for (ai, &alpha) in test_set.alphas.iter().enumerate() {
        let scores = stack_scores(&judge, &test_set.arrays[ai], col);
        match roc_curve(&scores, &labels) {
            Ok(curve) => {
                for i in 0..curve.thresholds.len() {
                    roc_rows.push(vec![
                        alpha.to_string(),
                        curve.thresholds[i].to_string(),
                        curve.fpr[i].to_string(),
                        curve.tpr[i].to_string(),
                    ]);
                }
            }
            Err(_) => eprintln!("warning: ROC undefined at alpha {alpha} (single-class labels)"),
        }
    }
    let roc_csv = dir.join("roc_points.csv");
    write_csv(&roc_csv, &["alpha", "threshold", "fpr", "tpr"], &roc_rows)?;

    for r in &report.rows {
        println!(
            "alpha {:>4}: AUC {}  acc {:.4}  sen {:.4}  spe {:.4}  f1 {:.4}",
            r.alpha,
            r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "  n/a".into()),
            r.acc,
            r.sen,
            r.spe,
            r.f1
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    ctx.finish(
        "audit",
        serde_json::json!({
            "attribute": ctx.attribute().name(),
            "test_images": labels.len(),
        }),
        &[leakage_csv, leakage_json, roc_csv],
    )?;
    Ok(())
}

/// Training records for a strategy: neutralized swaps train pixels for the
/// edited stack at the configured α; every other strategy trains on
/// originals (balancing/mixup happen inside the trainer).
fn strategy_records(
    ctx: &Ctx,
    strategy: &TrainStrategy,
    train: Vec<ImageRecord>,
) -> CliResult<Vec<ImageRecord>> {
    let TrainStrategy::Neutralized { alpha, .. } = strategy else {
        return Ok(train);
    };
    let set = ctx.edited()?;
    let Some(pos) = set.alpha_position(*alpha) else {
        return Err(CliError::missing(
            &format!("edited stack for alpha {alpha}"),
            ctx.edited_dir()
                .join(ctx.attribute().name())
                .join("train")
                .join(alpha_file_name(*alpha)),
            "generate (with run.alphas including it)",
        ));
    };
    let row_of: std::collections::HashMap<&str, usize> = set
        .index
        .iter()
        .enumerate()
        .map(|(i, e)| (e.image_id.as_str(), i))
        .collect();
    let mut out = Vec::with_capacity(train.len());
    for mut rec in train {
        let Some(&row) = row_of.get(rec.image_id.as_str()) else {
            return Err(CliError::missing(
                &format!("edited pixels for image {}", rec.image_id),
                ctx.edited_dir().join(ctx.attribute().name()),
                "generate",
            ));
        };
        rec.pixels = set.arrays[pos]
            .slice(ndarray::s![row, 0, .., ..])
            .to_owned();
        out.push(rec);
    }
    Ok(out)
}

/// Trains the disease diagnosis model under a debiasing strategy.
pub fn train_ddm_cmd(ctx: &Ctx, strategy: TrainStrategy) -> CliResult<()> {
    let records = ctx.dataset()?;
    let split = ctx.split(&records)?;
    let train = strategy_records(ctx, &strategy, split.train)?;

    let d = &ctx.cfg.ddm;
    let hyper = DdmHyper {
        lr: d.lr,
        batch_size: d.batch_size,
        epochs: d.epochs,
        extra_ensemble_epochs: d.extra_ensemble_epochs,
        weight_decay: d.weight_decay,
        seed: ctx.cfg.run.seed,
        base_channels: d.base_channels,
        blocks: d.blocks,
    };
    let (ckpt, rows) = train_ddm(&train, &strategy, &hyper)?;

    let label = strategy.label();
    let dir = ctx.ddm_dir(&label);
    std::fs::create_dir_all(&dir)?;
    let ckpt_path = dir.join("ddm.bin");
    let log_path = dir.join("train_log.csv");
    ckpt.save(&ckpt_path)?;
    write_train_log(&log_path, &rows)?;
    for w in &ckpt.warnings {
        eprintln!("warning: {w}");
    }

    ctx.finish(
        &format!("train-ddm-{label}"),
        serde_json::json!({
            "strategy": label,
            "epochs": d.epochs,
            "extra_ensemble_epochs": d.extra_ensemble_epochs,
            "snapshots": ckpt.snapshots.len(),
            "train_images": train.len(),
        }),
        &[ckpt_path.clone(), log_path],
    )?;
    println!(
        "trained diagnosis model ({label}) for {}+{} epochs, {} snapshots → {}",
        d.epochs,
        d.extra_ensemble_epochs,
        ckpt.snapshots.len(),
        ckpt_path.display()
    );
    Ok(())
}

/// Flag value that selects `strategy`, for error messages.
fn strategy_flag(strategy: &TrainStrategy) -> &'static str {
    match strategy {
        TrainStrategy::Original => "original",
        TrainStrategy::Neutralized { .. } => "neutralized",
        TrainStrategy::Balanced { .. } => "balanced",
        TrainStrategy::Mixup { .. } => "mixup",
        TrainStrategy::ManifoldMixup { .. } => "manifold-mixup",
    }
}

fn load_ddm(ctx: &Ctx, strategy: &TrainStrategy) -> CliResult<DdmCheckpoint> {
    let label = strategy.label();
    let path = ctx.ddm_dir(&label).join("ddm.bin");
    if !path.exists() {
        return Err(CliError::missing(
            &format!("diagnosis model '{label}'"),
            path,
            &format!("train-ddm --strategy {}", strategy_flag(strategy)),
        ));
    }
    Ok(DdmCheckpoint::load(&path)?)
}

/// Evaluates a trained diagnosis model on the shared held-out originals:
/// per-finding metrics, snapshot-averaged probabilities, and the subgroup
/// fairness summary for the run's attribute.
pub fn eval_ddm_cmd(ctx: &Ctx, strategy: TrainStrategy) -> CliResult<()> {
    let label = strategy.label();
    let ckpt = load_ddm(ctx, &label)?;
    let records = ctx.dataset()?;
    let split = ctx.split(&records)?;
    if split.test.is_empty() {
        return Err(CliError::Config(
            "split.ratios leave no test images to evaluate on".into(),
        ));
    }

    let mode = match ctx.cfg.ddm.ensemble {
        EnsembleChoice::ProbAvg => EnsembleMode::ProbAvg,
        EnsembleChoice::MetricAvg => EnsembleMode::MetricAvg,
    };
    let report = evaluate_ddm(&ckpt, &split.test, mode)?;
    let probs = ensemble_probs(&ckpt, &split.test)?;

    let dir = ctx.ddm_dir(&label).join("eval");
    std::fs::create_dir_all(&dir)?;
    let report_path = dir.join("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report)?)?;

    let per_finding = dir.join("per_finding.csv");
    let rows: Vec<Vec<String>> = report
        .per_finding
        .iter()
        .map(|f| {
            vec![
                f.index.to_string(),
                f.name.clone(),
                f.n_pos.to_string(),
                f.n_neg.to_string(),
                opt_cell(f.roc_auc),
                opt_cell(f.pr_auc),
                opt_cell(f.acc),
                opt_cell(f.sen),
                opt_cell(f.spe),
                opt_cell(f.f1),
            ]
        })
        .collect();
    write_csv(
        &per_finding,
        &[
            "finding", "name", "n_pos", "n_neg", "roc_auc", "pr_auc", "acc", "sen", "spe", "f1",
        ],
        &rows,
    )?;

    let probs_path = dir.join("probs.npy");
    neutralyze_core::arrayfile::write_f64(&probs_path, &probs.clone().into_dyn())?;
    let mut labels = Array2::<f32>::zeros((split.test.len(), NUM_FINDINGS));
    for (i, rec) in split.test.iter().enumerate() {
        for f in 0..NUM_FINDINGS {
            labels[[i, f]] = rec.findings[f] as f32;
        }
    }
    let labels_path = dir.join("labels.npy");
    neutralyze_core::arrayfile::write_f32(&labels_path, &labels.into_dyn())?;
    let ids_path = dir.join("test_ids.csv");
    let id_rows: Vec<Vec<String>> = split
        .test
        .iter()
        .map(|r| vec![r.image_id.clone(), r.attribute(ctx.attribute()).to_string()])
        .collect();
    write_csv(&ids_path, &["image_id", "attribute_bit"], &id_rows)?;

    let mut artifacts = vec![report_path, per_finding, probs_path, labels_path, ids_path];

    // Subgroup fairness for the run's attribute over the same predictions.
    let label_bits: Array2<u8> = {
        let mut m = Array2::zeros((split.test.len(), NUM_FINDINGS));
        for (i, rec) in split.test.iter().enumerate() {
            for f in 0..NUM_FINDINGS {
                m[[i, f]] = rec.findings[f];
            }
        }
        m
    };
    let group_bits: Vec<u8> = split
        .test
        .iter()
        .map(|r| r.attribute(ctx.attribute()))
        .collect();
    match subgroup_fairness(&probs, &label_bits, &group_bits) {
        Ok(fairness) => {
            let path = dir.join("fairness.json");
            std::fs::write(&path, serde_json::to_string_pretty(&fairness)?)?;
            for w in &fairness.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "fairness ({}): worst-case AUC {:.4}, gap {:.4}, sd {:.4}",
                ctx.attribute().name(),
                fairness.median_min_auc,
                fairness.median_gap,
                fairness.median_sd
            );
            artifacts.push(path);
        }
        Err(e) => eprintln!("warning: subgroup fairness undefined: {e}"),
    }

    println!(
        "evaluated {label} on {} held-out originals: macro ROC-AUC {} over {} findings",
        split.test.len(),
        report
            .macro_roc_auc
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".into()),
        report.n_defined
    );
    for f in &report.per_finding {
        if let Some(a) = f.roc_auc {
            println!("  {:>2} {:<20} AUC {a:.4} ({} pos)", f.index, f.name, f.n_pos);
        }
    }
    debug_assert_eq!(FINDINGS.len(), NUM_FINDINGS);

    ctx.finish(
        &format!("eval-ddm-{label}"),
        serde_json::json!({
            "strategy": label,
            "test_images": split.test.len(),
            "ensemble": format!("{:?}", mode),
        }),
        &artifacts,
    )?;
    Ok(())
}
