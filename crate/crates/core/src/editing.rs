//! Inference-only α-sweep generation and the on-disk edited-image container.
//!
//! A sweep runs one loaded neutralizer over a set of records at each edit
//! intensity α and collects the outputs as dense float32 stacks, one per α.
//! α = 0.0 never touches the generator: the original pixels are emitted
//! verbatim, so downstream audits measure leakage against the true
//! originals instead of conflating autoencoder error with editing effect.
//!
//! Layout on disk: `{attribute}/{split}/alpha_{α}.npy` plus a JSON index at
//! `{attribute}/index.json` listing every image in stack order.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, Array4, Axis, s};
use serde::{Deserialize, Serialize};

use crate::dataio::{Attribute, ImageRecord};
use crate::neutralizer::{blend_attribute, NeutralizerCheckpoint};
use crate::{Error, Result};

/// Images are pushed through the generator in chunks of this many.
const SWEEP_BATCH: usize = 16;

/// Identity and provenance of one row across every α-stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditedIndexEntry {
    pub image_id: String,
    pub source_split: String,
}

/// Per-α stacks of edited images with a shared row index.
#[derive(Debug, Clone)]
pub struct EditedImageSet {
    pub attribute: Attribute,
    /// Strictly increasing edit intensities; one stack each.
    pub alphas: Vec<f64>,
    /// One (N, 1, H, W) stack per α, rows aligned with `index`.
    pub arrays: Vec<Array4<f32>>,
    pub index: Vec<EditedIndexEntry>,
}

impl EditedImageSet {
    /// Rows of the α-th stack that belong to `split`, with their entries.
    pub fn split_rows(&self, split: &str) -> Vec<usize> {
        self.index
            .iter()
            .enumerate()
            .filter(|(_, e)| e.source_split == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_images(&self) -> usize {
        self.index.len()
    }

    /// Position of `alpha` in the sweep, comparing within 1e-9.
    pub fn alpha_position(&self, alpha: f64) -> Option<usize> {
        self.alphas.iter().position(|&a| (a - alpha).abs() < 1e-9)
    }
}

/// The eleven canonical edit intensities 0.0, 0.1, …, 1.0.
pub fn default_alphas() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::InvalidAlpha(f64::NAN));
    }
    for &a in alphas {
        if !(0.0..=1.0).contains(&a) || a.is_nan() {
            return Err(Error::InvalidAlpha(a));
        }
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidSpec(
            "alphas must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Runs the sweep: one stack per α over every record, in the given order.
/// `records` pairs each image with its source split name.
pub fn alpha_sweep(
    checkpoint: &NeutralizerCheckpoint,
    records: &[(&str, &ImageRecord)],
    attribute: Attribute,
    alphas: &[f64],
) -> Result<EditedImageSet> {
    validate_alphas(alphas)?;
    let size = checkpoint.spec.image_size;
    for (_, rec) in records {
        if rec.pixels.dim() != (size, size) {
            return Err(Error::ShapeError(format!(
                "image {} is {:?} but the checkpoint expects {size}×{size}",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
    }
    let n = records.len();
    let index: Vec<EditedIndexEntry> = records
        .iter()
        .map(|(split, rec)| EditedIndexEntry {
            image_id: rec.image_id.clone(),
            source_split: (*split).to_string(),
        })
        .collect();

    let mut arrays = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut stack = Array4::<f32>::zeros((n, 1, size, size));
        if alpha == 0.0 {
            // Bypass: the originals, bit for bit.
            for (row, (_, rec)) in records.iter().enumerate() {
                stack
                    .slice_mut(s![row, 0, .., ..])
                    .assign(&rec.pixels.view());
            }
        } else {
            for chunk_start in (0..n).step_by(SWEEP_BATCH) {
                let chunk = &records[chunk_start..(chunk_start + SWEEP_BATCH).min(n)];
                let b = chunk.len();
                let mut x = Array4::<f64>::zeros((b, 1, size, size));
                let mut targets = Array1::<f64>::zeros(b);
                for (bi, (_, rec)) in chunk.iter().enumerate() {
                    for i in 0..size {
                        for j in 0..size {
                            x[[bi, 0, i, j]] = rec.pixels[[i, j]] as f64;
                        }
                    }
                    targets[bi] = blend_attribute(rec.attribute(attribute), alpha)?;
                }
                let edited = checkpoint.generator.edit(&x, &targets)?;
                for bi in 0..b {
                    for i in 0..size {
                        for j in 0..size {
                            stack[[chunk_start + bi, 0, i, j]] = edited[[bi, 0, i, j]] as f32;
                        }
                    }
                }
            }
        }
        arrays.push(stack);
    }
    Ok(EditedImageSet {
        attribute,
        alphas: alphas.to_vec(),
        arrays,
        index,
    })
}

/// Stable filename for one α-stack: `alpha_0.0.npy` … `alpha_1.0.npy`.
pub fn alpha_file_name(alpha: f64) -> String {
    format!("alpha_{alpha:.1}.npy")
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    attribute: Attribute,
    alphas: Vec<f64>,
    entries: Vec<EditedIndexEntry>,
}

/// Writes `{dir}/{attribute}/{split}/alpha_*.npy` and
/// `{dir}/{attribute}/index.json`.
pub fn save_edited_set(set: &EditedImageSet, dir: &Path) -> Result<()> {
    let root = dir.join(set.attribute.name());
    std::fs::create_dir_all(&root)?;
    let splits: BTreeSet<&str> = set
        .index
        .iter()
        .map(|e| e.source_split.as_str())
        .collect();
    for split in &splits {
        let split_dir = root.join(split);
        std::fs::create_dir_all(&split_dir)?;
        let rows = set.split_rows(split);
        for (ai, &alpha) in set.alphas.iter().enumerate() {
            let stack = &set.arrays[ai];
            let (_, c, h, w) = stack.dim();
            let mut shard = Array4::<f32>::zeros((rows.len(), c, h, w));
            for (out_row, &src_row) in rows.iter().enumerate() {
                shard
                    .index_axis_mut(Axis(0), out_row)
                    .assign(&stack.index_axis(Axis(0), src_row));
            }
            crate::arrayfile::write_f32(
                &split_dir.join(alpha_file_name(alpha)),
                &shard.into_dyn(),
            )?;
        }
    }
    let index = IndexFile {
        attribute: set.attribute,
        alphas: set.alphas.clone(),
        entries: set.index.clone(),
    };
    let json = serde_json::to_string_pretty(&index)
        .map_err(|e| Error::FormatError(format!("edited-set index: {e}")))?;
    std::fs::write(root.join("index.json"), json)?;
    Ok(())
}

/// Reads a set previously written by [`save_edited_set`].
pub fn load_edited_set(dir: &Path, attribute: Attribute) -> Result<EditedImageSet> {
    let root = dir.join(attribute.name());
    let json = std::fs::read_to_string(root.join("index.json"))?;
    let index: IndexFile = serde_json::from_str(&json)
        .map_err(|e| Error::FormatError(format!("edited-set index: {e}")))?;
    if index.attribute != attribute {
        return Err(Error::FormatError(format!(
            "index is for attribute {}, requested {}",
            index.attribute, attribute
        )));
    }
    validate_alphas(&index.alphas)?;

    // Rows per split, in index order, to invert the sharding.
    let splits: BTreeSet<&str> = index
        .entries
        .iter()
        .map(|e| e.source_split.as_str())
        .collect();
    let n = index.entries.len();
    let mut arrays = Vec::with_capacity(index.alphas.len());
    for &alpha in &index.alphas {
        let mut stack: Option<Array4<f32>> = None;
        for split in &splits {
            let rows: Vec<usize> = index
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| e.source_split == *split)
                .map(|(i, _)| i)
                .collect();
            let path = root.join(split).join(alpha_file_name(alpha));
            let shard = crate::arrayfile::read_f32(&path)?;
            let shard = shard
                .into_dimensionality::<ndarray::Ix4>()
                .map_err(|_| Error::FormatError(format!("{} is not a 4-d stack", path.display())))?;
            if shard.dim().0 != rows.len() {
                return Err(Error::FormatError(format!(
                    "{} holds {} rows, index lists {}",
                    path.display(),
                    shard.dim().0,
                    rows.len()
                )));
            }
            let (_, c, h, w) = shard.dim();
            let stack = stack.get_or_insert_with(|| Array4::zeros((n, c, h, w)));
            if stack.dim().1 != c || stack.dim().2 != h || stack.dim().3 != w {
                return Err(Error::FormatError(format!(
                    "{} disagrees with earlier shards on image shape",
                    path.display()
                )));
            }
            for (shard_row, &index_row) in rows.iter().enumerate() {
                stack
                    .index_axis_mut(Axis(0), index_row)
                    .assign(&shard.index_axis(Axis(0), shard_row));
            }
        }
        arrays.push(stack.ok_or_else(|| {
            Error::FormatError("edited set has an empty index; nothing to load".into())
        })?);
    }
    Ok(EditedImageSet {
        attribute,
        alphas: index.alphas,
        arrays,
        index: index.entries,
    })
}
