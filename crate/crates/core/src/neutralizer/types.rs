//! Configuration types for the attribute-editing generator.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which encoder the generator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Unet,
    Vit,
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Unet => "unet",
            EncoderKind::Vit => "vit",
        })
    }
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "unet" | "cnn" => Ok(EncoderKind::Unet),
            "vit" => Ok(EncoderKind::Vit),
            other => Err(Error::InvalidSpec(format!(
                "unknown encoder kind '{other}' (expected unet or vit)"
            ))),
        }
    }
}

/// Architecture description for the generator. Constructors give the
/// full-size configurations; tests shrink the fields for desk-scale runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub encoder_kind: EncoderKind,
    /// Input images are 1×size×size; must be divisible by 16.
    pub image_size: usize,
    /// Token width of the transformer encoder (unused for unet).
    pub embed_dim: usize,
    /// Transformer blocks (vit) or down-stages (unet).
    pub depth: usize,
    /// Attention heads (unused for unet).
    pub heads: usize,
    /// Up-convolutions in the decoder: exactly 4 for vit, = depth for unet.
    pub decoder_stages: usize,
    /// Encoder→decoder skip tensors (unet only).
    pub skip_connections: bool,
    /// Channel schedule of the unet down-stages (len == depth; empty for vit).
    pub unet_channels: Vec<usize>,
}

impl GeneratorSpec {
    pub fn vit(image_size: usize) -> Self {
        GeneratorSpec {
            encoder_kind: EncoderKind::Vit,
            image_size,
            embed_dim: 384,
            depth: 12,
            heads: 6,
            decoder_stages: 4,
            skip_connections: false,
            unet_channels: Vec::new(),
        }
    }

    pub fn unet(image_size: usize) -> Self {
        GeneratorSpec {
            encoder_kind: EncoderKind::Unet,
            image_size,
            embed_dim: 0,
            depth: 5,
            heads: 0,
            decoder_stages: 5,
            skip_connections: true,
            unet_channels: vec![64, 128, 256, 512, 1024],
        }
    }

    /// Side length of the latent feature grid.
    pub fn latent_grid(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::Vit => self.image_size / 16,
            EncoderKind::Unet => self.image_size >> self.depth,
        }
    }

    /// Channel count of the latent feature grid.
    pub fn latent_channels(&self) -> usize {
        match self.encoder_kind {
            EncoderKind::Vit => self.embed_dim,
            EncoderKind::Unet => *self.unet_channels.last().unwrap_or(&0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size < 16 || self.image_size % 16 != 0 {
            return Err(Error::InvalidSize(format!(
                "image size {} must be a positive multiple of 16",
                self.image_size
            )));
        }
        match self.encoder_kind {
            EncoderKind::Vit => {
                if self.depth == 0 {
                    return Err(Error::InvalidSpec("vit needs at least one block".into()));
                }
                if self.heads == 0 || self.embed_dim % self.heads != 0 {
                    return Err(Error::InvalidSpec(format!(
                        "embed dim {} must be divisible by {} heads",
                        self.embed_dim, self.heads
                    )));
                }
                if self.decoder_stages != 4 {
                    return Err(Error::InvalidSpec(
                        "vit decoder uses exactly 4 up-stages".into(),
                    ));
                }
                if self.skip_connections {
                    return Err(Error::InvalidSpec(
                        "vit path has no skip connections".into(),
                    ));
                }
            }
            EncoderKind::Unet => {
                if self.depth == 0 {
                    return Err(Error::InvalidSpec("unet needs at least one stage".into()));
                }
                if self.unet_channels.len() != self.depth {
                    return Err(Error::InvalidSpec(format!(
                        "unet channel schedule has {} entries for depth {}",
                        self.unet_channels.len(),
                        self.depth
                    )));
                }
                if self.unet_channels.iter().any(|&c| c == 0) {
                    return Err(Error::InvalidSpec("unet channels must be positive".into()));
                }
                if self.image_size % (1 << self.depth) != 0 || self.latent_grid() == 0 {
                    return Err(Error::InvalidSize(format!(
                        "image size {} cannot be halved {} times",
                        self.image_size, self.depth
                    )));
                }
                if self.decoder_stages != self.depth {
                    return Err(Error::InvalidSpec(
                        "unet decoder mirrors the encoder depth".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Weighting of the composite objectives. All weights are nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_cls_g: f64,
    pub lambda_adv: f64,
    pub lambda_gp: f64,
    pub lambda_cls_d: f64,
}

impl LossWeights {
    /// The discriminator's classification weight defaults to the
    /// generator's.
    pub fn new(lambda_rec: f64, lambda_cls_g: f64, lambda_adv: f64, lambda_gp: f64) -> Self {
        LossWeights {
            lambda_rec,
            lambda_cls_g,
            lambda_adv,
            lambda_gp,
            lambda_cls_d: lambda_cls_g,
        }
    }

    /// Weighting used for the CNN generator runs.
    pub fn cnn_defaults() -> Self {
        LossWeights::new(100.0, 10.0, 1.0, 10.0)
    }

    /// Weighting used for the transformer generator runs.
    pub fn vit_defaults() -> Self {
        LossWeights::new(100.0, 10.0, 10.0, 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_rec,
            self.lambda_cls_g,
            self.lambda_adv,
            self.lambda_gp,
            self.lambda_cls_d,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSpec(
                "loss weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// An attribute-editing request: the original binary attribute values and
/// the edit strength. Only length-1 vectors are exercised (one protected
/// attribute per trained model), but the type stays general.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEdit {
    pub original: Vec<u8>,
    pub alpha: f64,
}

impl AttributeEdit {
    /// Blended decoder targets for every attribute slot.
    pub fn targets(&self) -> Result<Vec<f64>> {
        self.original
            .iter()
            .map(|&a| blend_attribute(a, self.alpha))
            .collect()
    }
}

/// Interpolates a binary attribute toward its negation:
/// target = (1−α)·a + α·(1−a). α=0 keeps the attribute, α=1 negates it,
/// α=0.5 lands exactly between.
pub fn blend_attribute(a: u8, alpha: f64) -> Result<f64> {
    assert!(a <= 1, "attribute values are binary");
    if !alpha.is_finite() || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidAlpha(alpha));
    }
    let a = a as f64;
    Ok((1.0 - alpha) * a + alpha * (1.0 - a))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_hits_the_three_reference_points() {
        assert_eq!(blend_attribute(1, 0.0).unwrap(), 1.0);
        assert_eq!(blend_attribute(1, 1.0).unwrap(), 0.0);
        assert_eq!(blend_attribute(0, 0.5).unwrap(), 0.5);
        assert_eq!(blend_attribute(1, 0.5).unwrap(), 0.5);
    }

    #[test]
    fn blend_rejects_out_of_range_alpha() {
        for bad in [-0.1, 1.1, f64::NAN] {
            assert!(matches!(
                blend_attribute(1, bad),
                Err(Error::InvalidAlpha(_))
            ));
        }
    }

    #[test]
    fn full_negation_is_an_involution() {
        for a in [0u8, 1u8] {
            let negated = blend_attribute(a, 1.0).unwrap();
            let back = blend_attribute(negated as u8, 1.0).unwrap();
            assert_eq!(back, a as f64);
        }
    }

    #[test]
    fn spec_constructors_validate() {
        assert!(GeneratorSpec::vit(256).validate().is_ok());
        assert!(GeneratorSpec::unet(256).validate().is_ok());
    }

    #[test]
    fn spec_rejects_inconsistent_configurations() {
        let mut s = GeneratorSpec::vit(250);
        assert!(matches!(s.validate(), Err(Error::InvalidSize(_))));
        s.image_size = 256;
        s.skip_connections = true;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
        s.skip_connections = false;
        s.decoder_stages = 5;
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));

        let mut u = GeneratorSpec::unet(256);
        u.unet_channels.pop();
        assert!(matches!(u.validate(), Err(Error::InvalidSpec(_))));
        let mut u = GeneratorSpec::unet(48);
        // 48 is a multiple of 16 but cannot be halved five times.
        u.depth = 5;
        assert!(matches!(u.validate(), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn latent_geometry_follows_the_encoder_kind() {
        let v = GeneratorSpec::vit(256);
        assert_eq!(v.latent_grid(), 16);
        assert_eq!(v.latent_channels(), 384);
        let u = GeneratorSpec::unet(256);
        assert_eq!(u.latent_grid(), 8);
        assert_eq!(u.latent_channels(), 1024);
    }

    #[test]
    fn weight_presets_and_validation() {
        let c = LossWeights::cnn_defaults();
        assert_eq!(
            (c.lambda_rec, c.lambda_cls_g, c.lambda_adv, c.lambda_gp),
            (100.0, 10.0, 1.0, 10.0)
        );
        assert_eq!(c.lambda_cls_d, c.lambda_cls_g);
        let v = LossWeights::vit_defaults();
        assert_eq!(v.lambda_adv, 10.0);
        let mut bad = c;
        bad.lambda_gp = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn edit_targets_blend_every_slot() {
        let edit = AttributeEdit {
            original: vec![1],
            alpha: 0.25,
        };
        assert_eq!(edit.targets().unwrap(), vec![0.75]);
    }
}
