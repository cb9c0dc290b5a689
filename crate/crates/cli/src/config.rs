//! Layered run configuration.
//!
//! Resolution order, later layers winning: built-in defaults (the
//! full-scale transformer settings) ← named preset ← `--config` TOML file
//! ← command-line flags. The fully resolved configuration is hashed into
//! every run manifest, so two runs with the same hash saw the same
//! settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use neutralyze_core::classifiers::AugmentConfig;
use neutralyze_core::dataio::Attribute;
use neutralyze_core::editing::default_alphas;
use neutralyze_core::neutralizer::{EncoderKind, GeneratorSpec, LossWeights};

use crate::errors::{CliError, CliResult};

/// Edit intensity; deserialization rejects values outside [0, 1] so TOML
/// errors point at the offending line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Alpha(pub f64);

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D>(d: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let v = f64::deserialize(d)?;
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(serde::de::Error::custom(format!(
                "edit intensity {v} is outside [0, 1]"
            )));
        }
        Ok(Alpha(v))
    }
}

/// How the diagnosis model's end-of-training snapshots are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleChoice {
    ProbAvg,
    MetricAvg,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub data: DataSection,
    pub split: SplitSection,
    pub synth: SynthSection,
    pub neutralizer: NeutralizerSection,
    pub judge: JudgeSection,
    pub ddm: DdmSection,
    pub stats: StatsSection,
    pub gradcam: GradcamSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Every subcommand reads and writes artifacts under this directory.
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Protected attribute to neutralize and audit: sex or age.
    pub attribute: Attribute,
    /// Generator encoder: vit or unet.
    pub encoder: EncoderKind,
    /// Square side length images are resized to; must be divisible by 16.
    pub image_size: usize,
    /// Edit intensities of the sweep, strictly increasing, all in [0, 1].
    pub alphas: Vec<Alpha>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            output_dir: PathBuf::from("runs/default"),
            seed: 0,
            attribute: Attribute::Sex,
            encoder: EncoderKind::Vit,
            image_size: 256,
            alphas: default_alphas().into_iter().map(Alpha).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV manifest of raw images (columns image, patient_id, sex, age,
    /// labels). Only needed by `preprocess`.
    pub manifest: Option<PathBuf>,
    /// Directory the manifest's `image` column is relative to; defaults to
    /// the manifest's own directory.
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    /// Patient-disjoint train/val/test fractions; must sum to 1.
    pub ratios: [f64; 3],
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            ratios: [0.7, 0.1, 0.2],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// Number of synthetic images `synth` generates.
    pub n: usize,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection { n: 1000 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeutralizerSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub noise_mean: f64,
    pub noise_std: f64,
    pub label_flip_prob: f64,
    pub label_smoothing: f64,
    pub hflip_prob: f64,
    pub disc_base_channels: usize,
    pub disc_stages: usize,
    /// Loss weights: reconstruction, attribute classification, adversarial,
    /// gradient penalty. The critic's classification head reuses the
    /// classification weight.
    pub lambda_rec: f64,
    pub lambda_cls: f64,
    pub lambda_adv: f64,
    pub lambda_gp: f64,
    /// Transformer encoder width (vit only).
    pub embed_dim: usize,
    /// Transformer depth (vit only); the unet's depth follows its channel
    /// schedule.
    pub depth: usize,
    /// Attention heads (vit only); must divide embed_dim.
    pub heads: usize,
    /// Channel schedule of the unet's down-stages (unet only).
    pub unet_channels: Vec<usize>,
}

impl Default for NeutralizerSection {
    fn default() -> Self {
        NeutralizerSection {
            epochs: 150,
            lr: 1e-4,
            batch_size: 64,
            weight_decay: 0.01,
            warmup_epochs: 1,
            noise_mean: 0.0,
            noise_std: 0.1,
            label_flip_prob: 0.05,
            label_smoothing: 0.1,
            hflip_prob: 0.5,
            disc_base_channels: 64,
            disc_stages: 3,
            lambda_rec: 100.0,
            lambda_cls: 10.0,
            lambda_adv: 10.0,
            lambda_gp: 10.0,
            embed_dim: 384,
            depth: 12,
            heads: 6,
            unet_channels: vec![64, 128, 256, 512, 1024],
        }
    }
}

impl NeutralizerSection {
    pub fn generator_spec(&self, encoder: EncoderKind, image_size: usize) -> GeneratorSpec {
        match encoder {
            EncoderKind::Vit => GeneratorSpec {
                embed_dim: self.embed_dim,
                depth: self.depth,
                heads: self.heads,
                ..GeneratorSpec::vit(image_size)
            },
            EncoderKind::Unet => GeneratorSpec {
                depth: self.unet_channels.len(),
                decoder_stages: self.unet_channels.len(),
                unet_channels: self.unet_channels.clone(),
                ..GeneratorSpec::unet(image_size)
            },
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights::new(
            self.lambda_rec,
            self.lambda_cls,
            self.lambda_adv,
            self.lambda_gp,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JudgeSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub base_channels: usize,
    pub blocks: usize,
    /// Master switch for training-time augmentation.
    pub augment: bool,
    pub augment_hflip: bool,
    pub augment_rotation_deg: f64,
    pub augment_translate_frac: f64,
    pub augment_blur_sigma: f64,
}

impl Default for JudgeSection {
    fn default() -> Self {
        let aug = AugmentConfig::default();
        JudgeSection {
            epochs: 100,
            lr: 5e-4,
            batch_size: 120,
            weight_decay: 0.0,
            base_channels: 16,
            blocks: 4,
            augment: true,
            augment_hflip: aug.hflip,
            augment_rotation_deg: aug.rotation_deg,
            augment_translate_frac: aug.translate_frac,
            augment_blur_sigma: aug.blur_sigma,
        }
    }
}

impl JudgeSection {
    pub fn augment_config(&self) -> AugmentConfig {
        if !self.augment {
            return AugmentConfig::none();
        }
        AugmentConfig {
            hflip: self.augment_hflip,
            rotation_deg: self.augment_rotation_deg,
            translate_frac: self.augment_translate_frac,
            blur_sigma: self.augment_blur_sigma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdmSection {
    pub epochs: usize,
    /// Extra epochs run only to harvest ensemble snapshots.
    pub extra_ensemble_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub base_channels: usize,
    pub blocks: usize,
    /// Edit intensity the neutralized training strategy uses.
    pub alpha: Alpha,
    /// Beta(β, β) parameter for the mixup strategies.
    pub mixup_beta: f64,
    pub ensemble: EnsembleChoice,
}

impl Default for DdmSection {
    fn default() -> Self {
        DdmSection {
            epochs: 80,
            extra_ensemble_epochs: 20,
            lr: 5e-4,
            batch_size: 120,
            weight_decay: 0.0,
            base_channels: 16,
            blocks: 4,
            alpha: Alpha(0.5),
            mixup_beta: 0.2,
            ensemble: EnsembleChoice::ProbAvg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    /// Patch side for the structural-similarity sweep.
    pub ssim_patch: usize,
    /// At most this many test images enter the similarity sweep.
    pub ssim_max_images: usize,
    /// Strategy label paired-AUC tests compare against.
    pub baseline: String,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            ssim_patch: 8,
            ssim_max_images: 1000,
            baseline: "original".to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcamSection {
    /// Convolution stage whose feature maps are explained; default last.
    pub layer: Option<usize>,
    /// Peak opacity of the heat overlay in saved PNGs.
    pub overlay_alpha: f64,
}

impl Default for GradcamSection {
    fn default() -> Self {
        GradcamSection {
            layer: None,
            overlay_alpha: 0.6,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection::default(),
            data: DataSection::default(),
            split: SplitSection::default(),
            synth: SynthSection::default(),
            neutralizer: NeutralizerSection::default(),
            judge: JudgeSection::default(),
            ddm: DdmSection::default(),
            stats: StatsSection::default(),
            gradcam: GradcamSection::default(),
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["cnn-paper", "vit-paper", "desk-smoke"];

fn preset_text(name: &str) -> Option<&'static str> {
    match name {
        "cnn-paper" => Some(include_str!("../presets/cnn-paper.toml")),
        "vit-paper" => Some(include_str!("../presets/vit-paper.toml")),
        "desk-smoke" => Some(include_str!("../presets/desk-smoke.toml")),
        _ => None,
    }
}

/// Deep-merges `over` into `base`: tables merge key-wise, everything else
/// is replaced.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Resolves the layered configuration (defaults ← preset ← file). Flag
/// overrides are applied by the caller afterwards.
pub fn load(preset: Option<&str>, file: Option<&Path>) -> CliResult<RunConfig> {
    let mut merged = toml::Value::try_from(RunConfig::default()).expect("defaults serialize");
    if let Some(name) = preset {
        let text = preset_text(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset '{name}'; available: {}",
                PRESET_NAMES.join(", ")
            ))
        })?;
        let value: toml::Value = toml::from_str(text).expect("presets parse");
        merge(&mut merged, value);
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        // Parse against the typed schema first: this is where TOML reports
        // line and column for syntax errors, unknown keys, and values a
        // field rejects.
        let _: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let value: toml::Value = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        merge(&mut merged, value);
    }
    merged
        .try_into()
        .map_err(|e| CliError::Config(format!("merged configuration: {e}")))
}

impl RunConfig {
    pub fn alphas(&self) -> Vec<f64> {
        self.run.alphas.iter().map(|a| a.0).collect()
    }

    /// Semantic checks that span fields or reference the filesystem.
    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));

        if self.run.alphas.is_empty() {
            return fail("run.alphas must name at least one edit intensity".into());
        }
        for pair in self.run.alphas.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return fail(format!(
                    "run.alphas must be strictly increasing, got {} after {}",
                    pair[1].0, pair[0].0
                ));
            }
        }
        for a in &self.run.alphas {
            if !(0.0..=1.0).contains(&a.0) || a.0.is_nan() {
                return fail(format!("run.alphas value {} is outside [0, 1]", a.0));
            }
        }
        if self.run.image_size == 0 || self.run.image_size % 16 != 0 {
            return fail(format!(
                "run.image_size {} is not a positive multiple of 16",
                self.run.image_size
            ));
        }
        let ratio_sum: f64 = self.split.ratios.iter().sum();
        if self.split.ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return fail(format!(
                "split.ratios {:?} must each lie in [0, 1]",
                self.split.ratios
            ));
        }
        if (ratio_sum - 1.0).abs() > 1e-6 {
            return fail(format!(
                "split.ratios {:?} sum to {ratio_sum}, expected 1",
                self.split.ratios
            ));
        }

        for (name, lr, batch) in [
            ("neutralizer", self.neutralizer.lr, self.neutralizer.batch_size),
            ("judge", self.judge.lr, self.judge.batch_size),
            ("ddm", self.ddm.lr, self.ddm.batch_size),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name}.lr must be positive and finite, got {lr}"));
            }
            if batch == 0 {
                return fail(format!("{name}.batch_size must be at least 1"));
            }
        }
        for (name, v) in [
            ("neutralizer.lambda_rec", self.neutralizer.lambda_rec),
            ("neutralizer.lambda_cls", self.neutralizer.lambda_cls),
            ("neutralizer.lambda_adv", self.neutralizer.lambda_adv),
            ("neutralizer.lambda_gp", self.neutralizer.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, p) in [
            ("neutralizer.label_flip_prob", self.neutralizer.label_flip_prob),
            ("neutralizer.label_smoothing", self.neutralizer.label_smoothing),
            ("neutralizer.hflip_prob", self.neutralizer.hflip_prob),
            ("gradcam.overlay_alpha", self.gradcam.overlay_alpha),
        ] {
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return fail(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.run.encoder == EncoderKind::Vit {
            if self.neutralizer.heads == 0
                || self.neutralizer.embed_dim % self.neutralizer.heads != 0
            {
                return fail(format!(
                    "neutralizer.embed_dim {} must be a positive multiple of neutralizer.heads {}",
                    self.neutralizer.embed_dim, self.neutralizer.heads
                ));
            }
        } else if self.neutralizer.unet_channels.is_empty() {
            return fail("neutralizer.unet_channels must not be empty for the unet encoder".into());
        }
        for (name, c, b) in [
            ("judge", self.judge.base_channels, self.judge.blocks),
            ("ddm", self.ddm.base_channels, self.ddm.blocks),
        ] {
            if c == 0 || b == 0 {
                return fail(format!(
                    "{name}.base_channels and {name}.blocks must be at least 1"
                ));
            }
        }
        if let Some(layer) = self.gradcam.layer {
            if layer >= self.judge.blocks {
                return fail(format!(
                    "gradcam.layer {layer} is out of range; the judge has {} conv stages",
                    self.judge.blocks
                ));
            }
        }
        if !(self.ddm.mixup_beta > 0.0 && self.ddm.mixup_beta.is_finite()) {
            return fail(format!(
                "ddm.mixup_beta must be positive and finite, got {}",
                self.ddm.mixup_beta
            ));
        }
        if self.stats.ssim_patch == 0 || self.stats.ssim_patch > self.run.image_size {
            return fail(format!(
                "stats.ssim_patch {} must lie in 1..={}",
                self.stats.ssim_patch, self.run.image_size
            ));
        }
        if self.synth.n < 4 {
            return fail(format!(
                "synth.n {} is too small to split into train/val/test",
                self.synth.n
            ));
        }

        for (key, path) in [
            ("data.manifest", &self.data.manifest),
            ("data.image_root", &self.data.image_root),
        ] {
            if let Some(p) = path {
                if !p.exists() {
                    return fail(format!("{key}: no such path: {}", p.display()));
                }
            }
        }
        Ok(())
    }
}

/// SHA-256 over the canonical JSON form of the resolved configuration.
pub fn config_hash(cfg: &RunConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let mut h = Sha256::new();
    h.update(&json);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let value = toml::Value::try_from(&cfg).unwrap();
        let back: RunConfig = value.try_into().unwrap();
        assert_eq!(config_hash(&cfg), config_hash(&back));
        assert_eq!(back.run.image_size, 256);
        assert_eq!(back.run.alphas.len(), 11);
    }

    #[test]
    fn every_preset_parses_and_validates() {
        for name in PRESET_NAMES {
            let cfg = load(Some(name), None).unwrap();
            cfg.validate()
                .unwrap_or_else(|e| panic!("preset {name}: {e}"));
            let _: RunConfig = toml::from_str(preset_text(name).unwrap())
                .unwrap_or_else(|e| panic!("preset {name} standalone: {e}"));
        }
        assert!(load(Some("no-such"), None).is_err());
    }

    #[test]
    fn preset_pins_the_expected_hyperparameters() {
        let cnn = load(Some("cnn-paper"), None).unwrap();
        assert_eq!(cnn.run.encoder, EncoderKind::Unet);
        assert_eq!(cnn.neutralizer.epochs, 300);
        assert_eq!(cnn.neutralizer.loss_weights().lambda_adv, 1.0);
        let vit = load(Some("vit-paper"), None).unwrap();
        assert_eq!(vit.run.encoder, EncoderKind::Vit);
        assert_eq!(vit.neutralizer.epochs, 150);
        let w = vit.neutralizer.loss_weights();
        assert_eq!(
            (w.lambda_rec, w.lambda_cls_g, w.lambda_adv, w.lambda_gp),
            (100.0, 10.0, 10.0, 10.0)
        );
        let smoke = load(Some("desk-smoke"), None).unwrap();
        assert_eq!(smoke.run.image_size, 64);
        assert_eq!(smoke.neutralizer.epochs, 5);
        assert_eq!(smoke.judge.epochs, 5);
    }

    #[test]
    fn config_file_overrides_preset_values() {
        let dir = std::env::temp_dir().join(format!("nz-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("override.toml");
        std::fs::write(&path, "[run]\nseed = 9\n\n[judge]\nepochs = 2\n").unwrap();
        let cfg = load(Some("desk-smoke"), Some(&path)).unwrap();
        assert_eq!(cfg.run.seed, 9);
        assert_eq!(cfg.judge.epochs, 2);
        // Untouched keys keep the preset's values.
        assert_eq!(cfg.run.image_size, 64);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn out_of_range_alpha_in_a_file_reports_the_line() {
        let dir = std::env::temp_dir().join(format!("nz-cfg-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.toml");
        std::fs::write(&path, "[run]\nseed = 1\nalphas = [0.0, 1.5]\n").unwrap();
        let err = load(None, Some(&path)).unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.exit_code(), 2);
        assert!(msg.contains("line 3"), "no line info in: {msg}");
        assert!(msg.contains("outside [0, 1]"), "wrong message: {msg}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = std::env::temp_dir().join(format!("nz-cfg-unk-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("unknown.toml");
        std::fs::write(&path, "[judge]\nlearning_rate = 0.1\n").unwrap();
        let err = load(None, Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learning_rate"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn validation_rejects_semantic_errors() {
        let mut cfg = RunConfig::default();
        cfg.run.image_size = 60;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);

        let mut cfg = RunConfig::default();
        cfg.run.alphas = vec![Alpha(0.5), Alpha(0.5)];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.split.ratios = [0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.data.manifest = Some(PathBuf::from("/no/such/manifest.csv"));
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("data.manifest"), "{msg}");

        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn hash_tracks_every_layer() {
        let base = load(None, None).unwrap();
        let smoke = load(Some("desk-smoke"), None).unwrap();
        assert_ne!(config_hash(&base), config_hash(&smoke));
        let mut tweaked = load(Some("desk-smoke"), None).unwrap();
        tweaked.run.seed = 1;
        assert_ne!(config_hash(&smoke), config_hash(&tweaked));
        assert_eq!(
            config_hash(&smoke),
            config_hash(&load(Some("desk-smoke"), None).unwrap())
        );
    }
}
