//! Training-time debiasing strategies and subgroup fairness scoring.
//!
//! Three levers against attribute shortcuts in a disease classifier:
//! blending samples across protected groups (in pixel or feature space),
//! downsampling the majority group, and — after training — auditing
//! per-group AUC spread.

use ndarray::{Array2, Array4};
use rand::seq::SliceRandom;
use rand_distr::{Beta, Distribution};

use crate::dataio::{Attribute, ImageRecord};
use crate::metrics::auc;
use crate::rng::stream_rng;
use crate::{Error, Result};

const BALANCE_SALT: u64 = 0x42_41_4c_30; // "BAL0"

/// Convex blend of two equally shaped batches: `λ·a + (1−λ)·b` applied to
/// images and labels alike, so soft labels carry the mixing ratio exactly.
pub fn mixup_batch(
    x_a: &Array4<f64>,
    y_a: &Array2<f64>,
    x_b: &Array4<f64>,
    y_b: &Array2<f64>,
    lambda: f64,
) -> Result<(Array4<f64>, Array2<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidAlpha(lambda));
    }
    if x_a.dim() != x_b.dim() || y_a.dim() != y_b.dim() || x_a.dim().0 != y_a.dim().0 {
        return Err(Error::ShapeError(format!(
            "mixup needs matching batches, got images {:?} vs {:?}, labels {:?} vs {:?}",
            x_a.dim(),
            x_b.dim(),
            y_a.dim(),
            y_b.dim()
        )));
    }
    let x = lambda * x_a + (1.0 - lambda) * x_b;
    let y = lambda * y_a + (1.0 - lambda) * y_b;
    Ok((x, y))
}

/// Per-batch mixing coefficient λ ~ Beta(β, β).
pub fn sample_mixup_lambda(beta_param: f64, rng: &mut impl rand::Rng) -> Result<f64> {
    if !(beta_param > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "mixup beta parameter must be positive, got {beta_param}"
        )));
    }
    let dist = Beta::new(beta_param, beta_param)
        .map_err(|e| Error::InvalidSpec(format!("beta distribution: {e}")))?;
    Ok(dist.sample(rng))
}

/// Downsamples the majority group of `attr` to the minority group's size,
/// uniformly without replacement. Every minority record survives, nothing
/// is duplicated, and the surviving records keep their original order.
pub fn balanced_resample(
    records: &[ImageRecord],
    attr: Attribute,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    let ones: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].attribute(attr) == 1)
        .collect();
    let zeros: Vec<usize> = (0..records.len())
        .filter(|&i| records[i].attribute(attr) == 0)
        .collect();
    if ones.is_empty() || zeros.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let (minority, majority) = if ones.len() <= zeros.len() {
        (&ones, &zeros)
    } else {
        (&zeros, &ones)
    };
    let mut keep: Vec<bool> = vec![false; records.len()];
    for &i in minority {
        keep[i] = true;
    }
    let mut pool = majority.clone();
    pool.shuffle(&mut stream_rng(seed, BALANCE_SALT));
    for &i in pool.iter().take(minority.len()) {
        keep[i] = true;
    }
    Ok(records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect())
}

/// Spread statistics over a set of per-group AUCs: worst case, best-minus-
/// worst gap, and the sample standard deviation.
pub fn fairness_summary(aucs: &[f64]) -> (f64, f64, f64) {
    let min = aucs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = aucs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (aucs.len() - 1) as f64;
    (min, max - min, var.sqrt())
}

/// Fairness breakdown for one label column.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FindingFairness {
    pub index: usize,
    /// (group id, AUC) for every group where both classes were present.
    pub group_aucs: Vec<(u8, f64)>,
    pub min_auc: Option<f64>,
    pub gap: Option<f64>,
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FairnessReport {
    pub findings: Vec<FindingFairness>,
    pub median_min_auc: f64,
    pub median_gap: f64,
    pub median_sd: f64,
    pub warnings: Vec<String>,
}

fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-group AUC spread for every label column, plus medians over the
/// columns that could be scored.
///
/// A group contributes to a column only when it contains both classes
/// there; columns with fewer than two scoreable groups are reported with
/// null statistics and a warning. If no column has two scoreable groups
/// the whole report is undefined.
pub fn subgroup_fairness(
    probs: &Array2<f64>,
    labels: &Array2<u8>,
    group_bits: &[u8],
) -> Result<FairnessReport> {
    let (n, n_findings) = probs.dim();
    if labels.dim() != (n, n_findings) || group_bits.len() != n {
        return Err(Error::ShapeError(format!(
            "probs {:?}, labels {:?}, groups {} rows disagree",
            probs.dim(),
            labels.dim(),
            group_bits.len()
        )));
    }
    let mut group_ids: Vec<u8> = group_bits.to_vec();
    group_ids.sort_unstable();
    group_ids.dedup();
    if group_ids.len() < 2 {
        return Err(Error::FairnessUndefined);
    }

    let mut findings = Vec::with_capacity(n_findings);
    let mut warnings = Vec::new();
    let mut mins = Vec::new();
    let mut gaps = Vec::new();
    let mut sds = Vec::new();
    for f in 0..n_findings {
        let mut group_aucs = Vec::new();
        for &g in &group_ids {
            let scores: Vec<f64> = (0..n)
                .filter(|&i| group_bits[i] == g)
                .map(|i| probs[[i, f]])
                .collect();
            let bits: Vec<u8> = (0..n)
                .filter(|&i| group_bits[i] == g)
                .map(|i| labels[[i, f]])
                .collect();
            match auc(&scores, &bits) {
                Ok(a) => group_aucs.push((g, a)),
                Err(Error::UndefinedAuc) => warnings.push(format!(
                    "column {f}: group {g} has a single class and was excluded"
                )),
                Err(e) => return Err(e),
            }
        }
        if group_aucs.len() >= 2 {
            let values: Vec<f64> = group_aucs.iter().map(|&(_, a)| a).collect();
            let (min, gap, sd) = fairness_summary(&values);
            mins.push(min);
            gaps.push(gap);
            sds.push(sd);
            findings.push(FindingFairness {
                index: f,
                group_aucs,
                min_auc: Some(min),
                gap: Some(gap),
                sd: Some(sd),
            });
        } else {
            warnings.push(format!(
                "column {f}: fewer than two scoreable groups, statistics undefined"
            ));
            findings.push(FindingFairness {
                index: f,
                group_aucs,
                min_auc: None,
                gap: None,
                sd: None,
            });
        }
    }
    if mins.is_empty() {
        return Err(Error::FairnessUndefined);
    }
    Ok(FairnessReport {
        findings,
        median_min_auc: median(&mut mins),
        median_gap: median(&mut gaps),
        median_sd: median(&mut sds),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::make_synthetic_dataset;
    use ndarray::{arr2, Array2};

    #[test]
    fn mixup_endpoints_and_midpoint_are_exact() {
        let x_a = Array4::from_elem((2, 1, 4, 4), 0.2);
        let x_b = Array4::from_elem((2, 1, 4, 4), 0.6);
        let y_a = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let y_b = arr2(&[[0.0, 0.0], [1.0, 1.0]]);

        let (x, y) = mixup_batch(&x_a, &y_a, &x_b, &y_b, 1.0).unwrap();
        assert_eq!(x, x_a);
        assert_eq!(y, y_a);

        let (x, y) = mixup_batch(&x_a, &y_a, &x_b, &y_b, 0.0).unwrap();
        assert_eq!(x, x_b);
        assert_eq!(y, y_b);

        let (x, y) = mixup_batch(&x_a, &y_a, &x_b, &y_b, 0.5).unwrap();
        assert!(x.iter().all(|&v| (v - 0.4).abs() < 1e-15));
        assert_eq!(y, arr2(&[[0.5, 0.0], [0.5, 1.0]]));
    }

    #[test]
    fn mixup_rejects_mismatches_and_bad_lambda() {
        let x_a = Array4::<f64>::zeros((2, 1, 4, 4));
        let x_b = Array4::<f64>::zeros((3, 1, 4, 4));
        let y = Array2::<f64>::zeros((2, 2));
        assert!(matches!(
            mixup_batch(&x_a, &y, &x_b, &y, 0.5),
            Err(Error::ShapeError(_))
        ));
        assert!(matches!(
            mixup_batch(&x_a, &y, &x_a, &y, 1.5),
            Err(Error::InvalidAlpha(_))
        ));
    }

    #[test]
    fn mixup_lambda_lives_in_unit_interval() {
        let mut rng = crate::rng::stream_rng(1, 2);
        for _ in 0..200 {
            let l = sample_mixup_lambda(0.2, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&l));
        }
        assert!(sample_mixup_lambda(0.0, &mut rng).is_err());
    }

    #[test]
    fn balanced_resample_matches_minority_and_keeps_it_whole() {
        let records = make_synthetic_dataset(300, 16, 3).unwrap();
        let n_male = records.iter().filter(|r| r.sex == 1).count();
        let n_female = records.len() - n_male;
        let minority = n_male.min(n_female);

        let out = balanced_resample(&records, Attribute::Sex, 0).unwrap();
        assert_eq!(out.len(), 2 * minority);
        let kept_m = out.iter().filter(|r| r.sex == 1).count();
        assert_eq!(kept_m, minority);
        assert_eq!(out.len() - kept_m, minority);

        // Every minority record survives and nothing repeats.
        let minority_bit = u8::from(n_male < n_female);
        let wanted: std::collections::BTreeSet<&str> = records
            .iter()
            .filter(|r| r.sex == minority_bit)
            .map(|r| r.image_id.as_str())
            .collect();
        let kept: std::collections::BTreeSet<&str> =
            out.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(kept.len(), out.len(), "a record was duplicated");
        assert!(wanted.iter().all(|id| kept.contains(id)));

        // Deterministic per seed, different across seeds (usually).
        let again = balanced_resample(&records, Attribute::Sex, 0).unwrap();
        let ids: Vec<&str> = out.iter().map(|r| r.image_id.as_str()).collect();
        let ids_again: Vec<&str> = again.iter().map(|r| r.image_id.as_str()).collect();
        assert_eq!(ids, ids_again);
        let other = balanced_resample(&records, Attribute::Sex, 1).unwrap();
        let ids_other: Vec<&str> = other.iter().map(|r| r.image_id.as_str()).collect();
        assert_ne!(ids, ids_other);
    }

    #[test]
    fn balanced_resample_leaves_equal_groups_alone_and_rejects_empty() {
        let mut records = make_synthetic_dataset(20, 16, 5).unwrap();
        for (i, r) in records.iter_mut().enumerate() {
            r.sex = (i % 2) as u8;
        }
        let out = balanced_resample(&records, Attribute::Sex, 0).unwrap();
        assert_eq!(out.len(), 20);

        for r in records.iter_mut() {
            r.sex = 1;
        }
        assert!(matches!(
            balanced_resample(&records, Attribute::Sex, 0),
            Err(Error::EmptyGroup)
        ));
    }

    #[test]
    fn fairness_summary_hand_case() {
        let (min, gap, sd) = fairness_summary(&[0.8, 0.7, 0.75]);
        assert!((min - 0.7).abs() < 1e-12);
        assert!((gap - 0.1).abs() < 1e-12);
        assert!((sd - 0.05).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_have_zero_spread() {
        // Two groups that are exact copies of one another: same scores,
        // same labels → equal AUCs, so gap and sd vanish.
        let scores = [0.9, 0.2, 0.7, 0.4];
        let bits = [1u8, 0, 1, 0];
        let mut probs = Array2::zeros((8, 1));
        let mut labels = Array2::zeros((8, 1));
        let mut groups = vec![0u8; 8];
        for i in 0..8 {
            probs[[i, 0]] = scores[i % 4];
            labels[[i, 0]] = bits[i % 4];
            groups[i] = (i / 4) as u8;
        }
        let report = subgroup_fairness(&probs, &labels, &groups).unwrap();
        assert_eq!(report.findings[0].group_aucs.len(), 2);
        assert!(report.median_gap.abs() < 1e-12);
        assert!(report.median_sd.abs() < 1e-12);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn single_class_groups_are_excluded_with_warning() {
        // Column 0: both groups scoreable. Column 1: group 1 is all-positive
        // there, so only group 0 remains → column undefined.
        let probs = arr2(&[
            [0.9, 0.8],
            [0.1, 0.3],
            [0.8, 0.6],
            [0.3, 0.9],
            [0.7, 0.2],
            [0.2, 0.4],
        ]);
        let labels = arr2(&[[1u8, 1], [0, 0], [1, 1], [0, 1], [1, 1], [0, 1]]);
        let groups = [0u8, 0, 0, 1, 1, 1];
        let report = subgroup_fairness(&probs, &labels, &groups).unwrap();
        assert!(report.findings[0].min_auc.is_some());
        assert!(report.findings[1].min_auc.is_none());
        assert_eq!(report.findings[1].group_aucs.len(), 1);
        assert!(!report.warnings.is_empty());

        // Medians come from the defined column alone.
        assert_eq!(report.median_min_auc, report.findings[0].min_auc.unwrap());
    }

    #[test]
    fn no_scoreable_column_is_undefined() {
        let probs = arr2(&[[0.9], [0.1], [0.8], [0.4]]);
        let labels = arr2(&[[1u8], [1], [0], [0]]);
        // Group 0 all-positive, group 1 all-negative.
        let groups = [0u8, 0, 1, 1];
        assert!(matches!(
            subgroup_fairness(&probs, &labels, &groups),
            Err(Error::FairnessUndefined)
        ));
        // A single group is just as undefined.
        let one_group = [0u8, 0, 0, 0];
        assert!(matches!(
            subgroup_fairness(&probs, &labels, &one_group),
            Err(Error::FairnessUndefined)
        ));
    }
}
