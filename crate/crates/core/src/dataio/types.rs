//! Core dataset types shared across the pipeline.

use ndarray::Array2;

/// Number of finding labels in the vocabulary.
pub const NUM_FINDINGS: usize = 15;

/// Finding-label vocabulary: the standard NIH chest X-ray label set —
/// fourteen pathologies in alphabetical order, with the explicit
/// "No Finding" label at the final index. Manifest `labels` columns and
/// `ImageRecord::findings` bit vectors are both indexed by this order.
pub const FINDINGS: [&str; NUM_FINDINGS] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Effusion",
    "Emphysema",
    "Fibrosis",
    "Hernia",
    "Infiltration",
    "Mass",
    "Nodule",
    "Pleural_Thickening",
    "Pneumonia",
    "Pneumothorax",
    "No Finding",
];

/// Index of a finding name in [`FINDINGS`], case-sensitive.
pub fn finding_index(name: &str) -> Option<usize> {
    FINDINGS.iter().position(|&f| f == name)
}

/// Protected attribute an image can be grouped or edited by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    /// Patient sex; bit 1 = male.
    Sex,
    /// Age bin; bit 1 = 60 years or older.
    Age,
}

impl Attribute {
    /// Stable lowercase name used in file layouts and reports.
    pub fn name(self) -> &'static str {
        match self {
            Attribute::Sex => "sex",
            Attribute::Age => "age",
        }
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Attribute {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sex" => Ok(Attribute::Sex),
            "age" => Ok(Attribute::Age),
            other => Err(format!("unknown attribute {other:?} (expected sex or age)")),
        }
    }
}

/// One image with its metadata, fully preprocessed: pixels are an H×W grid
/// in [-1, 1], attributes are binary, findings follow [`FINDINGS`].
#[derive(Debug, Clone)]
pub struct ImageRecord {
    /// Stable identifier (file stem for real data, generated id for synthetic).
    pub image_id: String,
    /// Groups images for patient-disjoint splitting.
    pub patient_id: String,
    /// H×W pixel grid, every value in [-1, 1].
    pub pixels: Array2<f32>,
    /// 1 = male, 0 = female.
    pub sex: u8,
    /// 1 = age ≥ 60 years, 0 = younger.
    pub age_bin: u8,
    /// Multi-hot finding labels, indexed by [`FINDINGS`].
    pub findings: [u8; NUM_FINDINGS],
}

impl ImageRecord {
    /// The value of a protected attribute as a bit.
    pub fn attribute(&self, attr: Attribute) -> u8 {
        match attr {
            Attribute::Sex => self.sex,
            Attribute::Age => self.age_bin,
        }
    }
}

/// Patient-disjoint train/validation/test partition.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ImageRecord>,
    pub val: Vec<ImageRecord>,
    pub test: Vec<ImageRecord>,
    /// Seed the shuffle was derived from; kept for provenance.
    pub seed: u64,
}

/// Descriptive statistics for one protected attribute over a cohort.
#[derive(Debug, Clone, serde::Serialize)]
pub struct CohortStats {
    /// Image counts per attribute bin, index 0 = bin 0, index 1 = bin 1.
    pub counts: Vec<u64>,
    /// Goodness-of-fit χ² of the observed bin counts against a balanced split.
    pub chi2: f64,
    /// Upper-tail p-value of `chi2`.
    pub p_value: f64,
    /// Wilson 95% interval for the bin-1 proportion, lower bound.
    pub wilson_lo: f64,
    /// Wilson 95% interval for the bin-1 proportion, upper bound.
    pub wilson_hi: f64,
    /// Cramér's V between sex and age bins over the same cohort.
    pub cramers_v: f64,
}
