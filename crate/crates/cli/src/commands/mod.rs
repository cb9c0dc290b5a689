//! Subcommand implementations and the shared run context.

pub mod analyze;
pub mod classify;
pub mod pipeline;

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Axis;

use neutralyze_core::classifiers::JudgeCheckpoint;
use neutralyze_core::dataio::{
    load_dataset, split_by_patient, Attribute, DatasetSplit, ImageRecord, MANIFEST_FILE,
};
use neutralyze_core::editing::{load_edited_set, EditedImageSet, EditedIndexEntry};
use neutralyze_core::neutralizer::NeutralizerCheckpoint;

use crate::config::{config_hash, RunConfig};
use crate::errors::{CliError, CliResult};
use crate::runinfo::write_run_manifest;

/// Everything a subcommand needs: the resolved configuration, the run
/// directory, the configuration hash, and the start time for wall-clock
/// accounting.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub hash: String,
    pub started: Instant,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Ctx {
        let out = cfg.run.output_dir.clone();
        let hash = config_hash(&cfg);
        Ctx {
            cfg,
            out,
            hash,
            started: Instant::now(),
        }
    }

    pub fn attribute(&self) -> Attribute {
        self.cfg.run.attribute
    }

    /// Writes this subcommand's run manifest listing `artifacts`.
    pub fn finish(
        &self,
        name: &str,
        parameters: serde_json::Value,
        artifacts: &[PathBuf],
    ) -> CliResult<()> {
        write_run_manifest(
            &self.out,
            name,
            &self.hash,
            self.cfg.run.seed,
            self.started,
            parameters,
            artifacts,
        )?;
        Ok(())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    /// Loads the run's dataset; exit 3 if no stage has produced one yet.
    pub fn dataset(&self) -> CliResult<Vec<ImageRecord>> {
        let dir = self.dataset_dir();
        if !dir.join(MANIFEST_FILE).exists() {
            return Err(CliError::missing(
                "dataset",
                dir.join(MANIFEST_FILE),
                "synth (or preprocess)",
            ));
        }
        Ok(load_dataset(&dir)?)
    }

    /// The patient-disjoint split every training and evaluation stage
    /// shares; deterministic in the run seed, so all subcommands agree on
    /// membership.
    pub fn split(&self, records: &[ImageRecord]) -> CliResult<DatasetSplit> {
        let [r1, r2, r3] = self.cfg.split.ratios;
        Ok(split_by_patient(records, (r1, r2, r3), self.cfg.run.seed)?)
    }

    pub fn neutralizer_path(&self) -> PathBuf {
        self.out.join("neutralizer").join("checkpoint.bin")
    }

    pub fn neutralizer(&self) -> CliResult<NeutralizerCheckpoint> {
        let path = self.neutralizer_path();
        if !path.exists() {
            return Err(CliError::missing(
                "neutralizer checkpoint",
                path,
                "train-neutralizer",
            ));
        }
        Ok(NeutralizerCheckpoint::load(&path)?)
    }

    pub fn edited_dir(&self) -> PathBuf {
        self.out.join("edited")
    }

    pub fn edited(&self) -> CliResult<EditedImageSet> {
        let index = self
            .edited_dir()
            .join(self.attribute().name())
            .join("index.json");
        if !index.exists() {
            return Err(CliError::missing("edited image set", index, "generate"));
        }
        Ok(load_edited_set(&self.edited_dir(), self.attribute())?)
    }

    pub fn judge_path(&self) -> PathBuf {
        self.out.join("judge").join("judge.bin")
    }

    pub fn judge(&self) -> CliResult<JudgeCheckpoint> {
        let path = self.judge_path();
        if !path.exists() {
            return Err(CliError::missing("judge checkpoint", path, "train-judge"));
        }
        Ok(JudgeCheckpoint::load(&path)?)
    }

    pub fn ddm_dir(&self, label: &str) -> PathBuf {
        self.out.join("ddm").join(label)
    }
}

/// Subset of an edited set, preserving α stacks and row alignment.
pub fn filter_rows(set: &EditedImageSet, rows: &[usize]) -> EditedImageSet {
    EditedImageSet {
        attribute: set.attribute,
        alphas: set.alphas.clone(),
        arrays: set
            .arrays
            .iter()
            .map(|a| a.select(Axis(0), rows))
            .collect(),
        index: rows
            .iter()
            .map(|&i| EditedIndexEntry {
                image_id: set.index[i].image_id.clone(),
                source_split: set.index[i].source_split.clone(),
            })
            .collect(),
    }
}

/// True attribute bits for every row of `set`, looked up in the dataset.
pub fn attribute_labels(
    set: &EditedImageSet,
    records: &[ImageRecord],
    attr: Attribute,
) -> CliResult<Vec<u8>> {
    let by_id: std::collections::HashMap<&str, &ImageRecord> = records
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();
    set.index
        .iter()
        .map(|e| {
            by_id
                .get(e.image_id.as_str())
                .map(|r| r.attribute(attr))
                .ok_or_else(|| {
                    CliError::missing(
                        &format!("dataset row for edited image {}", e.image_id),
                        PathBuf::from("dataset"),
                        "generate",
                    )
                })
        })
        .collect()
}

/// Writes a CSV with the given header and pre-rendered string rows.
pub fn write_csv(path: &std::path::Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Empty cell for a null metric, shortest round-trip decimal otherwise.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
