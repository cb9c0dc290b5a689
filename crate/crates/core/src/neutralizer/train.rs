//! Adversarial training loop for the attribute neutralizer.
//!
//! Each step updates the critic first (on noised real/edited images, with
//! occasional real/fake label swaps and the input-gradient penalty) and
//! then the generator (shared encoder pass, one decode at the original
//! attribute for reconstruction and one at the flipped attribute for the
//! adversarial and attribute terms). Every random choice — shuffling,
//! horizontal flips, critic input noise, label swaps, interpolation — is
//! drawn from its own seeded stream, so a run is bitwise reproducible.

use std::path::PathBuf;

use ndarray::{Array1, Array4};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::checkpoint::{fnv1a_f64, NeutralizerCheckpoint};
use super::discriminator::{interpolate_pairs, Discriminator};
use super::generator::Generator;
use super::loss::{
    discriminator_loss, discriminator_loss_grads, generator_loss, generator_loss_grads,
};
use super::types::{GeneratorSpec, LossWeights};
use crate::dataio::{Attribute, ImageRecord};
use crate::nn::{AdamW, LrSchedule};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

pub(crate) const SALT_GEN_INIT: u64 = 0x47_45_4e_30; // "GEN0"
pub(crate) const SALT_DISC_INIT: u64 = 0x44_53_43_30; // "DSC0"
const SALT_SHUFFLE: u64 = 0x53_48_46_4c; // "SHFL"
const SALT_NOISE: u64 = 0x4e_4f_49_53; // "NOIS"
const SALT_SWAP: u64 = 0x53_57_41_50; // "SWAP"
const SALT_HFLIP: u64 = 0x48_46_4c_50; // "HFLP"
const SALT_INTERP: u64 = 0x49_4e_54_50; // "INTP"

/// Optimization hyperparameters and per-step regularizer knobs.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Linear LR warmup measured in epochs, cosine decay afterwards.
    pub warmup_epochs: usize,
    /// Additive Gaussian noise applied to every image the critic sees.
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Probability of swapping a sample's real/fake role in the critic's
    /// adversarial term.
    pub label_flip_prob: f64,
    /// Attribute targets are pulled this far toward 0.5 in both BCE terms.
    pub label_smoothing: f64,
    /// Probability of mirroring an image horizontally when it is drawn.
    pub hflip_prob: f64,
    pub seed: u64,
    pub disc_base_channels: usize,
    pub disc_stages: usize,
    /// Where to write the final checkpoint, if anywhere.
    pub checkpoint_path: Option<PathBuf>,
    /// Where to write the CSV loss log, if anywhere.
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(epochs: usize) -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 64,
            epochs,
            weight_decay: 0.01,
            warmup_epochs: 1,
            noise_mean: 0.0,
            noise_std: 0.1,
            label_flip_prob: 0.05,
            label_smoothing: 0.1,
            hflip_prob: 0.5,
            seed: 0,
            disc_base_channels: 64,
            disc_stages: 3,
            checkpoint_path: None,
            log_path: None,
        }
    }
}

/// One CSV row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    pub step: usize,
    pub l_rec: f64,
    pub l_cls_g: f64,
    pub l_adv_g: f64,
    pub l_adv_d: f64,
    pub l_cls_d: f64,
    pub gp: f64,
}

/// Writes rows with the header
/// `epoch,step,L_rec,L_cls_G,L_adv_G,L_adv_D,L_cls_D,gp`.
pub fn write_loss_log(path: &std::path::Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch", "step", "L_rec", "L_cls_G", "L_adv_G", "L_adv_D", "L_cls_D", "gp",
    ])?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.step.to_string(),
            r.l_rec.to_string(),
            r.l_cls_g.to_string(),
            r.l_adv_g.to_string(),
            r.l_adv_d.to_string(),
            r.l_cls_d.to_string(),
            r.gp.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn smooth(target: f64, s: f64) -> f64 {
    target * (1.0 - s) + 0.5 * s
}

/// Stacks records into a [B,1,S,S] batch, mirroring samples drawn for a
/// horizontal flip, and collects their attribute bits.
fn assemble_batch<R: Rng>(
    records: &[ImageRecord],
    idx: &[usize],
    attr: Attribute,
    size: usize,
    hflip_prob: f64,
    rng: &mut R,
) -> (Array4<f64>, Vec<u8>) {
    let b = idx.len();
    let mut x = Array4::zeros((b, 1, size, size));
    let mut bits = Vec::with_capacity(b);
    for (bi, &ri) in idx.iter().enumerate() {
        let rec = &records[ri];
        let flip = rng.random_bool(hflip_prob);
        for i in 0..size {
            for j in 0..size {
                let src_j = if flip { size - 1 - j } else { j };
                x[[bi, 0, i, j]] = rec.pixels[[i, src_j]] as f64;
            }
        }
        bits.push(rec.attribute(attr));
    }
    (x, bits)
}

fn add_noise<R: Rng>(x: &Array4<f64>, mean: f64, std: f64, rng: &mut R) -> Array4<f64> {
    if std == 0.0 && mean == 0.0 {
        return x.clone();
    }
    let normal = Normal::new(mean, std).expect("finite noise parameters");
    x.mapv(|v| v + normal.sample(rng))
}

struct Snapshot {
    checkpoint: NeutralizerCheckpoint,
}

/// Trains one neutralizer for `attr` and returns the final checkpoint with
/// its per-step loss log. `epochs = 0` returns the untouched initialization.
pub fn train_neutralizer(
    dataset: &[ImageRecord],
    attr: Attribute,
    spec: &GeneratorSpec,
    weights: &LossWeights,
    cfg: &TrainConfig,
) -> Result<(NeutralizerCheckpoint, Vec<LossRow>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    spec.validate()?;
    weights.validate()?;
    let size = spec.image_size;
    for rec in dataset {
        if rec.pixels.dim() != (size, size) {
            return Err(Error::InvalidSize(format!(
                "image {} is {:?}, model expects {size}×{size}",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidSpec("batch size must be positive".into()));
    }

    let mut gen = Generator::new(spec.clone(), derive_seed(cfg.seed, SALT_GEN_INIT))?;
    let mut disc = Discriminator::new(
        size,
        cfg.disc_base_channels,
        cfg.disc_stages,
        derive_seed(cfg.seed, SALT_DISC_INIT),
    )?;
    let mut opt_g = AdamW::new(cfg.weight_decay);
    let mut opt_d = AdamW::new(cfg.weight_decay);

    // The critic only matters when some term feeds it back into training.
    let critic_active =
        weights.lambda_adv > 0.0 || weights.lambda_cls_d > 0.0 || weights.lambda_gp > 0.0;

    let steps_per_epoch = dataset.len().div_ceil(cfg.batch_size);
    let sched = LrSchedule {
        base_lr: cfg.lr,
        warmup_steps: steps_per_epoch * cfg.warmup_epochs,
        total_steps: steps_per_epoch * cfg.epochs,
    };

    let make_checkpoint = |gen: &Generator, disc: &Discriminator, epoch: usize, hash: u64| {
        NeutralizerCheckpoint {
            spec: spec.clone(),
            weights: *weights,
            seed: cfg.seed,
            epoch,
            optimizer_state_hash: hash,
            generator: gen.clone(),
            discriminator: disc.clone(),
        }
    };
    let state_hash = |og: &AdamW, od: &AdamW| {
        fnv1a_f64(og.moment_values().chain(od.moment_values()))
    };

    let mut last_good = Snapshot {
        checkpoint: make_checkpoint(&gen, &disc, 0, state_hash(&opt_g, &opt_d)),
    };
    let mut rows: Vec<LossRow> = Vec::new();
    let mut global_step = 0usize;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut stream_rng(
            derive_seed(cfg.seed, SALT_SHUFFLE),
            epoch as u64,
        ));
        let mut rng_hflip = stream_rng(derive_seed(cfg.seed, SALT_HFLIP), epoch as u64);
        let mut rng_noise = stream_rng(derive_seed(cfg.seed, SALT_NOISE), epoch as u64);
        let mut rng_swap = stream_rng(derive_seed(cfg.seed, SALT_SWAP), epoch as u64);

        for (step, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let lr = sched.lr_at(global_step);
            let (x, bits) = assemble_batch(
                dataset,
                batch_idx,
                attr,
                size,
                cfg.hflip_prob,
                &mut rng_hflip,
            );
            let b = batch_idx.len();
            // Decoder conditioning uses the raw blend targets; the BCE
            // terms see the smoothed ones.
            let t_rec = Array1::from_iter(bits.iter().map(|&a| a as f64));
            let t_edit = Array1::from_iter(bits.iter().map(|&a| 1.0 - a as f64));
            let t_real_s = Array1::from_iter(
                bits.iter().map(|&a| smooth(a as f64, cfg.label_smoothing)),
            );
            let t_edit_s = t_edit.mapv(|t| smooth(t, cfg.label_smoothing));

            let diverged = |epoch, step, snap: &Snapshot| Error::TrainingDiverged {
                epoch,
                step,
                last_checkpoint: Box::new(snap.checkpoint.clone()),
            };

            let mut d_loss = None;
            if critic_active {
                // ---- Critic update (generator frozen) ----
                let x_fake = gen
                    .edit(&x, &t_edit)
                    .map_err(|_| diverged(epoch, step, &last_good))?;
                let x_real_n = add_noise(&x, cfg.noise_mean, cfg.noise_std, &mut rng_noise);
                let x_fake_n = add_noise(&x_fake, cfg.noise_mean, cfg.noise_std, &mut rng_noise);

                let gp_seed = derive_seed(
                    derive_seed(cfg.seed, SALT_INTERP),
                    (epoch * steps_per_epoch + step) as u64,
                );
                let x_hat = interpolate_pairs(&x_real_n, &x_fake_n, gp_seed)?;
                let gp_value = disc.accumulate_gp_gradients(&x_hat, weights.lambda_gp);

                let (adv_r, cls_r, cache_r) = disc.forward_t(&x_real_n);
                let (adv_f, _, cache_f) = disc.forward_t(&x_fake_n);
                let swapped: Vec<bool> = (0..b)
                    .map(|_| rng_swap.random_bool(cfg.label_flip_prob))
                    .collect();
                let eff_real = Array1::from_shape_fn(b, |i| {
                    if swapped[i] {
                        adv_f[i]
                    } else {
                        adv_r[i]
                    }
                });
                let eff_fake = Array1::from_shape_fn(b, |i| {
                    if swapped[i] {
                        adv_r[i]
                    } else {
                        adv_f[i]
                    }
                });
                let dl = discriminator_loss(&eff_real, &eff_fake, &cls_r, &t_real_s, gp_value, weights)
                    .map_err(|_| diverged(epoch, step, &last_good))?;
                let (g_r, g_f, g_c) =
                    discriminator_loss_grads(&eff_real, &eff_fake, &cls_r, &t_real_s, weights)?;
                // Undo the role swap so each gradient reaches the pass that
                // actually produced its score.
                let d_adv_real = Array1::from_shape_fn(b, |i| if swapped[i] { g_f[i] } else { g_r[i] });
                let d_adv_fake = Array1::from_shape_fn(b, |i| if swapped[i] { g_r[i] } else { g_f[i] });
                disc.backward(&d_adv_real, &g_c, &cache_r, true);
                disc.backward(&d_adv_fake, &Array1::zeros(b), &cache_f, true);
                opt_d.step(&mut disc.params_mut(), lr);
                d_loss = Some(dl);
            }

            // ---- Generator update (critic frozen) ----
            let (latent, enc_cache) = gen
                .encode_t(&x)
                .map_err(|_| diverged(epoch, step, &last_good))?;
            let (x_rec, dec_cache_rec) = gen.decode_t(&latent, &t_rec)?;
            let (x_edit, dec_cache_edit) = gen.decode_t(&latent, &t_edit)?;
            let x_edit_n = add_noise(&x_edit, cfg.noise_mean, cfg.noise_std, &mut rng_noise);
            let (adv_g, cls_g, cache_g) = disc.forward_t(&x_edit_n);
            let gl = generator_loss(&x, &x_rec, &adv_g, &cls_g, &t_edit_s, weights)
                .map_err(|_| diverged(epoch, step, &last_good))?;
            let (d_x_rec, d_adv, d_cls) =
                generator_loss_grads(&x, &x_rec, &adv_g, &cls_g, &t_edit_s, weights)?;
            let d_x_edit = disc.backward(&d_adv, &d_cls, &cache_g, false);
            let (d_grid_e, d_skips_e) = gen.decode_backward(&d_x_edit, &dec_cache_edit);
            let (d_grid_r, d_skips_r) = gen.decode_backward(&d_x_rec, &dec_cache_rec);
            let d_grid = d_grid_e + d_grid_r;
            let d_skips: Vec<Array4<f64>> = d_skips_e
                .iter()
                .zip(d_skips_r.iter())
                .map(|(a, b)| a + b)
                .collect();
            gen.encode_backward(&d_grid, &d_skips, &enc_cache);
            opt_g.step(&mut gen.params_mut(), lr);

            rows.push(LossRow {
                epoch,
                step,
                l_rec: gl.rec,
                l_cls_g: gl.cls,
                l_adv_g: gl.adv,
                l_adv_d: d_loss.map_or(0.0, |d| d.adv),
                l_cls_d: d_loss.map_or(0.0, |d| d.cls),
                gp: d_loss.map_or(0.0, |d| d.gp),
            });
            global_step += 1;
        }
        last_good = Snapshot {
            checkpoint: make_checkpoint(&gen, &disc, epoch + 1, state_hash(&opt_g, &opt_d)),
        };
    }

    let checkpoint = make_checkpoint(&gen, &disc, cfg.epochs, state_hash(&opt_g, &opt_d));
    if let Some(path) = &cfg.checkpoint_path {
        checkpoint.save(path)?;
    }
    if let Some(path) = &cfg.log_path {
        write_loss_log(path, &rows)?;
    }
    Ok((checkpoint, rows))
}

/// Mean of a loss column over one epoch's rows.
pub fn epoch_mean(rows: &[LossRow], epoch: usize, col: fn(&LossRow) -> f64) -> f64 {
    let vals: Vec<f64> = rows.iter().filter(|r| r.epoch == epoch).map(col).collect();
    vals.iter().sum::<f64>() / vals.len() as f64
}
