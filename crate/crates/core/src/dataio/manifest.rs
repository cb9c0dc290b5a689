//! Manifest CSV parsing and dataset persistence.
//!
//! One canonical manifest schema serves raw and processed data alike:
//! `image,patient_id,sex,age,labels`, where `labels` is a pipe-separated
//! list of finding names from [`FINDINGS`](super::types::FINDINGS). A blank
//! list (or an `uncertain` token) maps to all-zero findings. Dataset
//! directories persist pixels as one dense `images.npy` stack in manifest
//! row order, next to the `manifest.csv`.

use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, Axis};

use super::preprocess::{bin_age, preprocess_image};
use super::types::{finding_index, ImageRecord, FINDINGS, NUM_FINDINGS};
use crate::arrayfile;
use crate::{Error, Result};

/// File name of the dense pixel stack inside a dataset directory.
pub const IMAGES_FILE: &str = "images.npy";
/// File name of the manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.csv";

/// One parsed manifest row; `image` is either a relative image path (raw
/// manifests) or a bare image id (processed datasets).
#[derive(Debug, Clone)]
pub struct ManifestRow {
    pub image: String,
    pub patient_id: String,
    pub sex: u8,
    pub age: f64,
    pub findings: [u8; NUM_FINDINGS],
}

#[derive(serde::Deserialize)]
struct RawRow {
    image: String,
    patient_id: String,
    sex: String,
    age: f64,
    labels: String,
}

fn parse_sex(raw: &str, line: usize) -> Result<u8> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "m" | "male" => Ok(1),
        "0" | "f" | "female" => Ok(0),
        other => Err(Error::InvalidManifest(format!(
            "line {line}: sex {other:?} (expected 0/1 or M/F)"
        ))),
    }
}

fn parse_labels(raw: &str, line: usize) -> Result<[u8; NUM_FINDINGS]> {
    let mut findings = [0u8; NUM_FINDINGS];
    for token in raw.split('|') {
        let token = token.trim();
        // Blank and explicitly uncertain labels count as absent.
        if token.is_empty() || token.eq_ignore_ascii_case("uncertain") {
            continue;
        }
        match finding_index(token) {
            Some(idx) => findings[idx] = 1,
            None => {
                return Err(Error::InvalidManifest(format!(
                    "line {line}: unknown finding {token:?}"
                )))
            }
        }
    }
    Ok(findings)
}

/// Read and validate a manifest CSV.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        let expect = ["image", "patient_id", "sex", "age", "labels"];
        let got: Vec<&str> = headers.iter().collect();
        if got != expect {
            return Err(Error::InvalidManifest(format!(
                "{}: header {got:?}, expected {expect:?}",
                path.display()
            )));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.deserialize::<RawRow>().enumerate() {
        let line = i + 2; // header is line 1
        let raw = record.map_err(|e| {
            Error::InvalidManifest(format!("{}: line {line}: {e}", path.display()))
        })?;
        rows.push(ManifestRow {
            image: raw.image,
            patient_id: raw.patient_id,
            sex: parse_sex(&raw.sex, line)?,
            age: raw.age,
            findings: parse_labels(&raw.labels, line)?,
        });
    }
    Ok(rows)
}

/// Load an image file (PNG/JPG) as an 8-bit grayscale grid.
pub fn load_gray_image(path: &Path) -> Result<Array2<u8>> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = img.dimensions();
    Array2::from_shape_vec((h as usize, w as usize), img.into_raw())
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))
}

/// Ingest a raw manifest: load each referenced image (relative to the
/// manifest's directory), preprocess to `target_size`, and bin ages.
pub fn load_raw_records(manifest: &Path, target_size: usize) -> Result<Vec<ImageRecord>> {
    let rows = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        let path = base.join(&row.image);
        let raw = load_gray_image(&path)?;
        let pixels = preprocess_image(&raw, target_size)?;
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

fn findings_to_labels(findings: &[u8; NUM_FINDINGS]) -> String {
    let names: Vec<&str> = findings
        .iter()
        .enumerate()
        .filter(|&(_, &bit)| bit == 1)
        .map(|(i, _)| FINDINGS[i])
        .collect();
    names.join("|")
}

/// Persist records as a dataset directory: `images.npy` (N×H×W, f32) plus
/// `manifest.csv` in matching row order.
///
/// Binned ages are written back as representative years (70 for the older
/// bin, 40 otherwise) so re-binning on load reproduces the same bit.
pub fn save_dataset(dir: &Path, records: &[ImageRecord]) -> Result<()> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, w) = records[0].pixels.dim();
    let mut stack = Array3::<f32>::zeros((records.len(), h, w));
    for (i, rec) in records.iter().enumerate() {
        if rec.pixels.dim() != (h, w) {
            return Err(Error::ShapeError(format!(
                "record {} has shape {:?}, expected ({h}, {w})",
                rec.image_id,
                rec.pixels.dim()
            )));
        }
        stack.index_axis_mut(Axis(0), i).assign(&rec.pixels);
    }
    std::fs::create_dir_all(dir)?;
    arrayfile::write_f32(&dir.join(IMAGES_FILE), &stack.into_dyn())?;

    let mut writer = csv::Writer::from_path(dir.join(MANIFEST_FILE))?;
    writer.write_record(["image", "patient_id", "sex", "age", "labels"])?;
    for rec in records {
        let age = if rec.age_bin == 1 { 70.0 } else { 40.0 };
        writer.write_record([
            rec.image_id.as_str(),
            rec.patient_id.as_str(),
            &rec.sex.to_string(),
            &format!("{age}"),
            &findings_to_labels(&rec.findings),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Load a dataset directory written by [`save_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<ImageRecord>> {
    let rows = read_manifest(&dir.join(MANIFEST_FILE))?;
    let stack: ArrayD<f32> = arrayfile::read_f32(&dir.join(IMAGES_FILE))?;
    if stack.ndim() != 3 {
        return Err(Error::ShapeError(format!(
            "{}: expected a 3-D image stack, got {:?}",
            dir.join(IMAGES_FILE).display(),
            stack.shape()
        )));
    }
    if stack.shape()[0] != rows.len() {
        return Err(Error::InvalidManifest(format!(
            "{}: manifest has {} rows but stack holds {} images",
            dir.display(),
            rows.len(),
            stack.shape()[0]
        )));
    }
    let stack = stack
        .into_dimensionality::<ndarray::Ix3>()
        .expect("ndim checked above");
    let mut records = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let pixels = stack.index_axis(Axis(0), i).to_owned();
        if pixels.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidImage(format!(
                "image {} has pixels outside [-1, 1]",
                row.image
            )));
        }
        records.push(ImageRecord {
            image_id: row.image,
            patient_id: row.patient_id,
            pixels,
            sex: row.sex,
            age_bin: bin_age(row.age)?,
            findings: row.findings,
        });
    }
    Ok(records)
}
