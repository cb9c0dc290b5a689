//! Attribute-neutral chest X-ray debiasing at desk scale.
//!
//! An attribute-editing generative model (CNN-U-Net or Vision-Transformer
//! encoder) removes protected-attribute cues (sex, age) from radiographs at a
//! controllable edit intensity, an independent judge classifier audits the
//! residual attribute leakage, and a multi-label diagnosis model is trained
//! and scored for subgroup fairness against mixup and balanced-sampling
//! baselines. A full hypothesis-test battery (DeLong, Benjamini-Hochberg,
//! paired bootstrap, Friedman, Nemenyi) backs the comparisons.
//!
//! Everything runs deterministically on CPU against a bundled synthetic
//! dataset; reference result tables from the full-scale study ship as
//! versioned fixtures under `fixtures/`.

pub mod arrayfile;
pub mod classifiers;
pub mod dataio;
pub mod editing;
pub mod error;
pub mod explain;
pub mod fixtures;
pub mod imgutil;
pub mod metrics;
pub mod neutralizer;
pub mod nn;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
