//! Data production and generator training: `preprocess`, `synth`,
//! `train-neutralizer`, `generate`.

use std::path::Path;

use neutralyze_core::dataio::{
    bin_age, load_gray_image, load_raw_records, make_synthetic_dataset, preprocess_image,
    read_manifest, save_dataset, ImageRecord,
};
use neutralyze_core::editing::{alpha_sweep, save_edited_set};
use neutralyze_core::neutralizer::{train_neutralizer, write_loss_log, TrainConfig};

use crate::errors::{CliError, CliResult};
use crate::runinfo::walk_files;

use super::Ctx;

/// Loads raw images listed in a manifest, resizes them, and writes the
/// run's dataset directory.
pub fn preprocess(ctx: &Ctx) -> CliResult<()> {
    let manifest = ctx.cfg.data.manifest.clone().ok_or_else(|| {
        CliError::Config(
            "preprocess needs an input manifest: set data.manifest or pass --manifest".into(),
        )
    })?;
    let size = ctx.cfg.run.image_size;
    let records = match &ctx.cfg.data.image_root {
        None => load_raw_records(&manifest, size)?,
        Some(root) => load_with_root(&manifest, root, size)?,
    };
    let dir = ctx.dataset_dir();
    save_dataset(&dir, &records)?;
    let artifacts = walk_files(&dir)?;
    ctx.finish(
        "preprocess",
        serde_json::json!({
            "manifest": manifest.display().to_string(),
            "n_images": records.len(),
            "image_size": size,
        }),
        &artifacts,
    )?;
    println!(
        "preprocessed {} images at {size}×{size} → {}",
        records.len(),
        dir.display()
    );
    Ok(())
}

/// Same loading loop as [`load_raw_records`], but image paths resolve
/// against an explicit root instead of the manifest's directory.
fn load_with_root(manifest: &Path, root: &Path, size: usize) -> CliResult<Vec<ImageRecord>> {
    let rows = read_manifest(manifest)?;
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let raw = load_gray_image(&root.join(&row.image))?;
        let pixels = preprocess_image(&raw, size)?;
        let image_id = Path::new(&row.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| row.image.clone());
        records.push(ImageRecord {
            image_id,
            patient_id: row.patient_id,
            pixels,
            sex: row.sex,
            age_bin: bin_age(row.age)?,
            findings: row.findings,
        });
    }
    Ok(records)
}

/// Generates the synthetic dataset: deterministic in (n, image size, seed).
pub fn synth(ctx: &Ctx) -> CliResult<()> {
    let n = ctx.cfg.synth.n;
    let size = ctx.cfg.run.image_size;
    let seed = ctx.cfg.run.seed;
    let records = make_synthetic_dataset(n, size, seed)?;
    let dir = ctx.dataset_dir();
    save_dataset(&dir, &records)?;
    let artifacts = walk_files(&dir)?;
    ctx.finish(
        "synth",
        serde_json::json!({ "n": n, "image_size": size }),
        &artifacts,
    )?;
    println!(
        "synthesized {n} images at {size}×{size} (seed {seed}) → {}",
        dir.display()
    );
    Ok(())
}

/// Trains the attribute-neutralizing generator on the train split and
/// saves its checkpoint plus the per-step loss log.
pub fn train_neutralizer(ctx: &Ctx) -> CliResult<()> {
    let records = ctx.dataset()?;
    let split = ctx.split(&records)?;
    let nz = &ctx.cfg.neutralizer;
    let spec = nz.generator_spec(ctx.cfg.run.encoder, ctx.cfg.run.image_size);
    let weights = nz.loss_weights();

    let dir = ctx.out.join("neutralizer");
    std::fs::create_dir_all(&dir)?;
    let ckpt_path = dir.join("checkpoint.bin");
    let log_path = dir.join("loss_log.csv");
    let train_cfg = TrainConfig {
        lr: nz.lr,
        batch_size: nz.batch_size,
        weight_decay: nz.weight_decay,
        warmup_epochs: nz.warmup_epochs,
        noise_mean: nz.noise_mean,
        noise_std: nz.noise_std,
        label_flip_prob: nz.label_flip_prob,
        label_smoothing: nz.label_smoothing,
        hflip_prob: nz.hflip_prob,
        seed: ctx.cfg.run.seed,
        disc_base_channels: nz.disc_base_channels,
        disc_stages: nz.disc_stages,
        checkpoint_path: Some(ckpt_path.clone()),
        log_path: Some(log_path.clone()),
        ..TrainConfig::new(nz.epochs)
    };

    let (ckpt, rows) = train_neutralizer(&split.train, ctx.attribute(), &spec, &weights, &train_cfg)?;
    ckpt.save(&ckpt_path)?;
    write_loss_log(&log_path, &rows)?;

    ctx.finish(
        "train-neutralizer",
        serde_json::json!({
            "attribute": ctx.attribute().name(),
            "encoder": ctx.cfg.run.encoder.to_string(),
            "epochs": nz.epochs,
            "train_images": split.train.len(),
        }),
        &[ckpt_path.clone(), log_path],
    )?;
    println!(
        "trained {} neutralizer for {} epochs on {} images → {}",
        ctx.cfg.run.encoder,
        nz.epochs,
        split.train.len(),
        ckpt_path.display()
    );
    Ok(())
}

/// Runs the α sweep over every split and saves the edited image stacks.
pub fn generate(ctx: &Ctx) -> CliResult<()> {
    let records = ctx.dataset()?;
    let split = ctx.split(&records)?;
    let ckpt = ctx.neutralizer()?;
    let alphas = ctx.cfg.alphas();

    let mut refs: Vec<(&str, &ImageRecord)> = Vec::with_capacity(records.len());
    for rec in &split.train {
        refs.push(("train", rec));
    }
    for rec in &split.val {
        refs.push(("val", rec));
    }
    for rec in &split.test {
        refs.push(("test", rec));
    }

    let set = alpha_sweep(&ckpt, &refs, ctx.attribute(), &alphas)?;
    let dir = ctx.edited_dir();
    save_edited_set(&set, &dir)?;
    let artifacts = walk_files(&dir.join(ctx.attribute().name()))?;
    ctx.finish(
        "generate",
        serde_json::json!({
            "attribute": ctx.attribute().name(),
            "alphas": alphas,
            "n_images": set.n_images(),
        }),
        &artifacts,
    )?;
    println!(
        "edited {} images at {} intensities → {}",
        set.n_images(),
        alphas.len(),
        dir.display()
    );
    Ok(())
}
