//! Dataset ingestion, preprocessing, splitting, cohort statistics, and the
//! deterministic synthetic benchmark set.

mod cohort;
mod manifest;
mod preprocess;
mod split;
mod synthetic;
mod types;

pub use cohort::{chi_squared_gof, cohort_stats, cramers_v, wilson_interval};
pub use manifest::{
    load_dataset, load_gray_image, load_raw_records, read_manifest, save_dataset, ManifestRow,
    IMAGES_FILE, MANIFEST_FILE,
};
pub use preprocess::{bin_age, preprocess_image};
pub use split::split_by_patient;
pub use synthetic::{finding_prevalence, make_synthetic_dataset};
pub use types::{
    finding_index, Attribute, CohortStats, DatasetSplit, ImageRecord, FINDINGS, NUM_FINDINGS,
};
