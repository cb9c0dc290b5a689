//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // -- data ingestion / preprocessing --
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid size: {0}")]
    InvalidSize(String),
    #[error("invalid age: {0}")]
    InvalidAge(f64),
    #[error("split ratios must sum to 1: {0}")]
    InvalidRatios(String),
    #[error("manifest error: {0}")]
    InvalidManifest(String),

    // -- cohort statistics --
    #[error("expected counts must all be positive")]
    DegenerateExpected,
    #[error("empty sample: n must be >= 1")]
    EmptySample,
    #[error("contingency table has zero grand total")]
    EmptyTable,

    // -- editing / model geometry --
    #[error("invalid model configuration: {0}")]
    InvalidSpec(String),
    #[error("alpha must lie in [0,1], got {0}")]
    InvalidAlpha(f64),
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("numerical error: {0}")]
    NumericalError(String),

    // -- training --
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        /// Weights from the last epoch whose losses were all finite.
        last_checkpoint: Box<crate::neutralizer::NeutralizerCheckpoint>,
    },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    // -- containers / files --
    #[error("format error: {0}")]
    FormatError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    // -- metrics --
    #[error("AUC undefined: both classes must be present")]
    UndefinedAuc,
    #[error("PR-AUC undefined: no positive labels")]
    UndefinedPrAuc,
    #[error("patch {patch} larger than image {h}x{w}")]
    PatchTooLarge { patch: usize, h: usize, w: usize },

    // -- statistics --
    #[error("correlation undefined: zero variance")]
    UndefinedCorrelation,
    #[error("p-value outside [0,1]: {0}")]
    InvalidP(f64),
    #[error("bootstrap resampling exhausted after {0} attempts")]
    ResamplingExhausted(usize),
    #[error("Friedman test needs >= 3 methods, got {0}")]
    TooFewMethods(usize),
    #[error("Nemenyi critical values tabulated only for k <= 10, got {0}")]
    UnsupportedK(usize),

    // -- fairness / debiasing --
    #[error("group is empty")]
    EmptyGroup,
    #[error("fairness undefined: fewer than 2 groups with both classes")]
    FairnessUndefined,

    // -- explanation --
    #[error("invalid Grad-CAM layer: {0}")]
    InvalidLayer(String),
}
