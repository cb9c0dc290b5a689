//! Single-file checkpoint archive for a trained neutralizer.
//!
//! Layout: 8-byte magic, little-endian u64 header length, a JSON header
//! (model spec, loss weights, training metadata, and an array directory),
//! then all parameter tensors as little-endian f32 — so a checkpoint is
//! self-describing and reloads without shape guesswork. Weights are stored
//! at f32: save→load→save→load is bit-stable even though the first load
//! rounds the training-time f64 values once.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::discriminator::Discriminator;
use super::generator::Generator;
use super::types::{GeneratorSpec, LossWeights};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"NZARCHV1";

/// Generator + critic weights with everything needed to rebuild them.
#[derive(Debug, Clone)]
pub struct NeutralizerCheckpoint {
    pub spec: GeneratorSpec,
    pub weights: LossWeights,
    pub seed: u64,
    pub epoch: usize,
    /// FNV-1a digest of the optimizer moment buffers at save time.
    pub optimizer_state_hash: u64,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in floats.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: GeneratorSpec,
    weights: LossWeights,
    seed: u64,
    epoch: usize,
    optimizer_state_hash: u64,
    disc_base_channels: usize,
    disc_stages: usize,
    arrays: Vec<ArrayEntry>,
}

/// FNV-1a over a stream of f64 bit patterns; used to fingerprint optimizer
/// state without storing it.
pub fn fnv1a_f64<'a, I: IntoIterator<Item = &'a f64>>(values: I) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in v.to_bits().to_le_bytes() {
            hash ^= byte as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    hash
}

impl NeutralizerCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        // named_params_mut needs &mut; a clone keeps the public API &self.
        let mut gen = self.generator.clone();
        let mut disc = self.discriminator.clone();
        let mut arrays = Vec::new();
        let mut payload: Vec<u8> = Vec::new();
        let mut offset = 0usize;
        let named = gen
            .named_params_mut()
            .into_iter()
            .map(|(n, p)| (format!("gen.{n}"), p))
            .chain(
                disc.named_params_mut()
                    .into_iter()
                    .map(|(n, p)| (format!("disc.{n}"), p)),
            );
        for (name, param) in named {
            let len = param.value.len();
            arrays.push(ArrayEntry {
                name,
                shape: param.value.shape().to_vec(),
                offset,
                len,
            });
            for &v in param.value.iter() {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
            offset += len;
        }
        let header = Header {
            format_version: 1,
            spec: self.spec.clone(),
            weights: self.weights,
            seed: self.seed,
            epoch: self.epoch,
            optimizer_state_hash: self.optimizer_state_hash,
            disc_base_channels: self.discriminator.base_channels(),
            disc_stages: self.discriminator.stages(),
            arrays,
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::FormatError(format!("checkpoint header: {e}")))?;
        let mut file = fs::File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
        file.write_all(&header_bytes)?;
        file.write_all(&payload)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = fs::File::open(path)?;
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)
            .map_err(|_| Error::FormatError("checkpoint shorter than its magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::FormatError(format!(
                "bad checkpoint magic {magic:?}"
            )));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)
            .map_err(|_| Error::FormatError("checkpoint missing header length".into()))?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_bytes = vec![0u8; header_len];
        file.read_exact(&mut header_bytes)
            .map_err(|_| Error::FormatError("checkpoint header truncated".into()))?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::FormatError(format!("checkpoint header: {e}")))?;
        if header.format_version != 1 {
            return Err(Error::FormatError(format!(
                "unsupported checkpoint format version {}",
                header.format_version
            )));
        }
        let total: usize = header.arrays.iter().map(|a| a.len).sum();
        let mut payload = vec![0u8; total * 4];
        file.read_exact(&mut payload)
            .map_err(|_| Error::FormatError("checkpoint payload truncated".into()))?;

        let mut generator = Generator::new(header.spec.clone(), 0)?;
        let mut discriminator = Discriminator::new(
            header.spec.image_size,
            header.disc_base_channels,
            header.disc_stages,
            0,
        )?;
        let mut by_name: std::collections::HashMap<String, &ArrayEntry> = header
            .arrays
            .iter()
            .map(|a| (a.name.clone(), a))
            .collect();
        {
            let named = generator
                .named_params_mut()
                .into_iter()
                .map(|(n, p)| (format!("gen.{n}"), p))
                .chain(
                    discriminator
                        .named_params_mut()
                        .into_iter()
                        .map(|(n, p)| (format!("disc.{n}"), p)),
                );
            for (name, param) in named {
                let entry = by_name.remove(&name).ok_or_else(|| {
                    Error::FormatError(format!("checkpoint is missing tensor {name}"))
                })?;
                if entry.shape != param.value.shape() {
                    return Err(Error::FormatError(format!(
                        "tensor {name}: stored shape {:?} vs model shape {:?}",
                        entry.shape,
                        param.value.shape()
                    )));
                }
                for (i, v) in param.value.iter_mut().enumerate() {
                    let at = (entry.offset + i) * 4;
                    let bits: [u8; 4] = payload[at..at + 4].try_into().unwrap();
                    *v = f32::from_le_bytes(bits) as f64;
                }
            }
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::FormatError(format!(
                "checkpoint contains unknown tensor {extra}"
            )));
        }
        Ok(NeutralizerCheckpoint {
            spec: header.spec,
            weights: header.weights,
            seed: header.seed,
            epoch: header.epoch,
            optimizer_state_hash: header.optimizer_state_hash,
            generator,
            discriminator,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neutralizer::types::EncoderKind;
    use ndarray::Array4;

    fn tiny_checkpoint() -> NeutralizerCheckpoint {
        let spec = GeneratorSpec {
            encoder_kind: EncoderKind::Vit,
            image_size: 16,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            decoder_stages: 4,
            skip_connections: false,
            unet_channels: vec![],
        };
        let generator = Generator::new(spec.clone(), 7).unwrap();
        let discriminator = Discriminator::new(16, 2, 2, 7).unwrap();
        NeutralizerCheckpoint {
            spec,
            weights: LossWeights::vit_defaults(),
            seed: 7,
            epoch: 3,
            optimizer_state_hash: fnv1a_f64([1.0, 2.0].iter()),
            generator,
            discriminator,
        }
    }

    #[test]
    fn round_trip_is_bit_stable_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let original = tiny_checkpoint();
        original.save(&p1).unwrap();
        let load1 = NeutralizerCheckpoint::load(&p1).unwrap();
        load1.save(&p2).unwrap();
        let load2 = NeutralizerCheckpoint::load(&p2).unwrap();

        let mut a = load1.clone();
        let mut b = load2.clone();
        for ((na, pa), (nb, pb)) in a
            .generator
            .named_params_mut()
            .into_iter()
            .zip(b.generator.named_params_mut())
        {
            assert_eq!(na, nb);
            assert_eq!(pa.value, pb.value, "tensor {na} drifted across reloads");
        }

        // Identical latents from the two reloads for the same input.
        let x = Array4::from_shape_fn((1, 1, 16, 16), |(_, _, i, j)| {
            ((i * 16 + j) as f64 / 255.0) * 2.0 - 1.0
        });
        let la = load1.generator.encode(&x).unwrap();
        let lb = load2.generator.encode(&x).unwrap();
        assert_eq!(la.grid, lb.grid);

        assert_eq!(load2.epoch, 3);
        assert_eq!(load2.seed, 7);
        assert_eq!(load2.spec, original.spec);
        assert_eq!(load2.weights, original.weights);
        assert_eq!(load2.optimizer_state_hash, original.optimizer_state_hash);
        assert_eq!(load2.discriminator.stages(), 2);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        tiny_checkpoint().save(&path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        std::fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            NeutralizerCheckpoint::load(&path),
            Err(Error::FormatError(_))
        ));

        std::fs::write(&path, &bytes[..bytes.len() - 13]).unwrap();
        assert!(matches!(
            NeutralizerCheckpoint::load(&path),
            Err(Error::FormatError(_))
        ));

        std::fs::write(&path, &bytes[..4]).unwrap();
        assert!(matches!(
            NeutralizerCheckpoint::load(&path),
            Err(Error::FormatError(_))
        ));
    }

    #[test]
    fn hash_is_order_sensitive_and_stable() {
        let a = fnv1a_f64([1.0, 2.0, 3.0].iter());
        let b = fnv1a_f64([1.0, 2.0, 3.0].iter());
        let c = fnv1a_f64([3.0, 2.0, 1.0].iter());
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(fnv1a_f64([].iter()), 0);
    }
}
