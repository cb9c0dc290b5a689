//! Ranking and threshold metrics for binary classifiers.

use crate::{Error, Result};

fn validate(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericalError("non-finite score".into()));
    }
    debug_assert!(labels.iter().all(|&l| l <= 1), "labels must be 0/1");
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((n_pos, labels.len() - n_pos))
}

/// Area under the ROC curve via the Mann–Whitney U statistic with midranks,
/// crediting ties between a positive and a negative score 0.5.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let ranks = midranks(scores);
    let rank_sum_pos: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|&(_, &l)| l == 1)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum_pos - (n_pos as f64 * (n_pos as f64 + 1.0)) / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// 1-based midranks: tied values share the average of their rank range.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) hold ties; their shared midrank is the
        // mean of 1-based ranks i+1 ..= j+1.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    ranks
}

/// A full ROC curve: one point per distinct score threshold, plus the
/// all-negative anchor at threshold +∞.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// Decision thresholds, descending; predictions are `score ≥ threshold`.
    pub thresholds: Vec<f64>,
    /// False-positive rate at each threshold, nondecreasing.
    pub fpr: Vec<f64>,
    /// True-positive rate at each threshold, nondecreasing.
    pub tpr: Vec<f64>,
    /// Trapezoidal area; equals [`auc`] for the same inputs.
    pub auc: f64,
}

/// Compute the ROC curve by sweeping the threshold over distinct scores.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // Consume the whole tie group before emitting a point.
        while i < order.len() && scores[order[i]] == threshold {
            match labels[order[i]] {
                1 => tp += 1,
                _ => fp += 1,
            }
            i += 1;
        }
        thresholds.push(threshold);
        fpr.push(fp as f64 / n_neg as f64);
        tpr.push(tp as f64 / n_pos as f64);
    }

    let mut area = 0.0;
    for k in 1..fpr.len() {
        area += (fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2.0;
    }
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc: area,
    })
}

/// Thresholded classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ConfusionMetrics {
    pub acc: f64,
    pub sen: f64,
    pub spe: f64,
    pub f1: f64,
}

/// Accuracy, sensitivity, specificity, and F1 at a fixed threshold
/// (prediction = `score ≥ threshold`).
///
/// Ratios with a zero denominator — no positives for SEN, no negatives for
/// SPE, zero precision+recall for F1 — are reported as 0.
pub fn confusion_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> ConfusionMetrics {
    assert_eq!(scores.len(), labels.len());
    let (mut tp, mut fp, mut tn, mut fn_) = (0.0, 0.0, 0.0, 0.0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fn_ += 1.0,
        }
    }
    let total = tp + fp + tn + fn_;
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let sen = ratio(tp, tp + fn_);
    let precision = ratio(tp, tp + fp);
    let f1 = if precision + sen > 0.0 {
        2.0 * precision * sen / (precision + sen)
    } else {
        0.0
    };
    ConfusionMetrics {
        acc: ratio(tp + tn, total),
        sen,
        spe: ratio(tn, tn + fp),
        f1,
    }
}

/// Area under the precision-recall curve by interpolation-free step
/// integration (average precision): Σ (Rₖ − Rₖ₋₁)·Pₖ over descending
/// score thresholds, tie groups consumed whole.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, _) = validate(scores, labels)?;
    if n_pos == 0 {
        return Err(Error::UndefinedPrAuc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut area = 0.0;
    let (mut tp, mut predicted) = (0.0f64, 0.0f64);
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            predicted += 1.0;
            if labels[order[i]] == 1 {
                tp += 1.0;
            }
            i += 1;
        }
        let recall = tp / n_pos as f64;
        let precision = tp / predicted;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// O(n²) pair-counting oracle with 0.5 tie credit.
    fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for (i, (&sp, &lp)) in scores.iter().zip(labels).enumerate() {
            if lp != 1 {
                continue;
            }
            for (j, (&sn, &ln)) in scores.iter().zip(labels).enumerate() {
                if ln != 0 || i == j {
                    continue;
                }
                pairs += 1.0;
                if sp > sn {
                    wins += 1.0;
                } else if sp == sn {
                    wins += 0.5;
                }
            }
        }
        wins / pairs
    }

    /// Naive threshold-enumeration oracle for average precision.
    fn pr_auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l == 1).count() as f64;
        let mut area = 0.0;
        let mut prev_recall = 0.0;
        for &t in &thresholds {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|&(&s, &l)| s >= t && l == 1)
                .count() as f64;
            let predicted = scores.iter().filter(|&&s| s >= t).count() as f64;
            let recall = tp / n_pos;
            area += (recall - prev_recall) * (tp / predicted);
            prev_recall = recall;
        }
        area
    }

    #[test]
    fn auc_four_sample_case() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0, 0, 1, 1];
        assert!((auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auc_separation_and_ties() {
        let scores = [0.1, 0.2, 0.8, 0.9];
        let labels = [0, 0, 1, 1];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);

        let flat = [0.5; 6];
        let labels = [0, 1, 0, 1, 0, 1];
        assert_eq!(auc(&flat, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_requires_both_classes() {
        assert!(matches!(
            auc(&[0.1, 0.2], &[1, 1]),
            Err(Error::UndefinedAuc)
        ));
        assert!(matches!(
            auc(&[0.1, 0.2], &[0, 0]),
            Err(Error::UndefinedAuc)
        ));
    }

    #[test]
    fn auc_complement_for_tie_free_scores() {
        let mut rng = crate::rng::stream_rng(1, 0);
        for _ in 0..50 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let mut labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let lhs = auc(&scores, &labels).unwrap() + auc(&neg, &labels).unwrap();
            assert!((lhs - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transforms() {
        let mut rng = crate::rng::stream_rng(2, 0);
        for _ in 0..50 {
            let n = rng.random_range(4..40);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let base = auc(&scores, &labels).unwrap();
            // Strictly monotone maps with random parameters.
            let a: f64 = rng.random_range(0.1..5.0);
            let b: f64 = rng.random_range(-2.0..2.0);
            let affine: Vec<f64> = scores.iter().map(|&s| a * s + b).collect();
            let expit: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-s).exp())).collect();
            let cube: Vec<f64> = scores.iter().map(|&s| s.powi(3)).collect();
            for mapped in [affine, expit, cube] {
                assert!((auc(&mapped, &labels).unwrap() - base).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn auc_matches_pair_counting_oracle() {
        let mut rng = crate::rng::stream_rng(3, 0);
        for _ in 0..200 {
            let n = rng.random_range(4..=50);
            // Quantized scores so ties actually occur.
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..10) as f64) / 10.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let fast = auc(&scores, &labels).unwrap();
            let slow = auc_oracle(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12, "fast {fast} vs oracle {slow}");
        }
    }

    #[test]
    fn roc_curve_monotone_and_consistent_with_auc() {
        let mut rng = crate::rng::stream_rng(4, 0);
        for _ in 0..50 {
            let n = rng.random_range(4..60);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..8) as f64) / 8.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            labels[1] = 0;
            let curve = roc_curve(&scores, &labels).unwrap();
            assert_eq!(curve.fpr[0], 0.0);
            assert_eq!(curve.tpr[0], 0.0);
            assert_eq!(*curve.fpr.last().unwrap(), 1.0);
            assert_eq!(*curve.tpr.last().unwrap(), 1.0);
            for k in 1..curve.fpr.len() {
                assert!(curve.fpr[k] >= curve.fpr[k - 1]);
                assert!(curve.tpr[k] >= curve.tpr[k - 1]);
            }
            let rank_auc = auc(&scores, &labels).unwrap();
            assert!((curve.auc - rank_auc).abs() < 1e-12);
        }
    }

    #[test]
    fn confusion_trivial_cases() {
        let labels = [0u8, 0, 1, 1];
        let perfect: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
        let m = confusion_metrics(&perfect, &labels, 0.5);
        assert_eq!((m.acc, m.sen, m.spe, m.f1), (1.0, 1.0, 1.0, 1.0));

        let inverted: Vec<f64> = labels.iter().map(|&l| 1.0 - l as f64).collect();
        let m = confusion_metrics(&inverted, &labels, 0.5);
        assert_eq!(m.sen, 0.0);
        assert_eq!(m.spe, 0.0);
    }

    #[test]
    fn confusion_hand_case() {
        // TP=3, FP=1, FN=1, TN=5.
        let scores = [0.9, 0.9, 0.9, 0.1, 0.9, 0.1, 0.1, 0.1, 0.1, 0.1];
        let labels = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let m = confusion_metrics(&scores, &labels, 0.5);
        assert!((m.acc - 0.8).abs() < 1e-12);
        assert!((m.sen - 0.75).abs() < 1e-12);
        assert!((m.spe - 5.0 / 6.0).abs() < 1e-12);
        assert!((m.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn pr_auc_cases() {
        let labels = [0u8, 0, 1, 1];
        let perfect = [0.1, 0.2, 0.8, 0.9];
        assert!((pr_auc(&perfect, &labels).unwrap() - 1.0).abs() < 1e-12);

        let flat = [0.3; 5];
        let labels5 = [1u8, 0, 1, 0, 0];
        assert!((pr_auc(&flat, &labels5).unwrap() - 0.4).abs() < 1e-12);

        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [0u8, 0, 1, 1];
        assert!((pr_auc(&scores, &labels).unwrap() - (0.5 + 1.0 / 3.0)).abs() < 1e-12);

        assert!(matches!(
            pr_auc(&[0.1, 0.2], &[0, 0]),
            Err(Error::UndefinedPrAuc)
        ));
    }

    #[test]
    fn pr_auc_matches_threshold_enumeration_oracle() {
        let mut rng = crate::rng::stream_rng(5, 0);
        for _ in 0..100 {
            let n = rng.random_range(3..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.random_range(0..6) as f64) / 6.0)
                .collect();
            let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
            labels[0] = 1;
            let fast = pr_auc(&scores, &labels).unwrap();
            let slow = pr_auc_oracle(&scores, &labels);
            assert!((fast - slow).abs() < 1e-12);
        }
    }
}
