//! Hypothesis tests and correlation machinery for model comparison.

mod bootstrap;
mod delong;
mod fdr;
mod friedman;
mod pearson;
mod types;

pub use bootstrap::bootstrap_paired;
pub use delong::delong_test;
pub use fdr::benjamini_hochberg;
pub use friedman::{friedman, nemenyi, NemenyiResult};
pub use pearson::pearson_r;
pub use types::{RankTable, TestMethod, TestResult};
