//! Attribute judge, disease diagnosis model, and debiasing strategies.
//!
//! Both classifiers share the same small convolutional backbone and
//! training harness: AdamW on binary cross-entropy variants, seeded
//! shuffling, single-file weight archives. The judge audits how much
//! protected-attribute signal survives image editing; the disease model is
//! the downstream task whose subgroup fairness the editing is meant to
//! improve.

mod archive;
mod backbone;
mod ddm;
mod debias;
mod judge;

pub use backbone::CnnBackbone;
pub use ddm::{
    ensemble_probs, evaluate_ddm, positive_class_weights, train_ddm, DdmCheckpoint, DdmHyper,
    DdmReport, EnsembleMode, FindingReport, TrainStrategy, MAX_POS_WEIGHT, MAX_SNAPSHOTS,
};
pub use debias::{
    balanced_resample, fairness_summary, mixup_batch, sample_mixup_lambda, subgroup_fairness,
    FairnessReport, FindingFairness,
};
pub use judge::{
    attribute_column, evaluate_leakage, train_judge, train_judge_with_backbone, AugmentConfig,
    JudgeCheckpoint, JudgeHyper, LeakageReport, LeakageRow,
};

/// One optimizer step's scalar loss, tagged by position in the run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TrainRow {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}
