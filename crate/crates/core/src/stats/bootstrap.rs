//! Paired image-level bootstrap with a sign test around zero.

use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

use super::types::{TestMethod, TestResult};
use crate::rng::{derive_seed, stream_rng};
use crate::{Error, Result};

/// Salt separating bootstrap RNG streams from other seed consumers.
const BOOT_SALT: u64 = 0x42_4f_4f_54; // "BOOT"

/// Linear-interpolation percentile of a sorted sample (numpy's default).
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Paired bootstrap comparison of two prediction vectors under `metric`.
///
/// Each of `n_boot` resamples draws image indices with replacement —
/// identically for both models — and records Δ = metric(a) − metric(b).
/// The estimate is the mean Δ, the CI the percentile 2.5/97.5 span, and
/// the p-value a two-sided sign test on the Δ signs with zeros split
/// evenly between the two signs (alternating assignment). Resamples where
/// the metric is undefined (e.g. a single-class draw) are redrawn, up to
/// 10·n_boot total attempts.
pub fn bootstrap_paired<F>(
    metric: F,
    preds_a: &[f64],
    preds_b: &[f64],
    labels: &[u8],
    n_boot: usize,
    seed: u64,
) -> Result<TestResult>
where
    F: Fn(&[f64], &[u8]) -> Result<f64>,
{
    if preds_a.len() != labels.len() || preds_b.len() != labels.len() || labels.is_empty() {
        return Err(Error::ShapeError(format!(
            "paired inputs must align: {} / {} preds vs {} labels",
            preds_a.len(),
            preds_b.len(),
            labels.len()
        )));
    }
    assert!(n_boot >= 100, "n_boot must be ≥ 100, got {n_boot}");
    let n = labels.len();
    let base = derive_seed(seed, BOOT_SALT);
    let max_attempts = 10 * n_boot;

    let mut deltas = Vec::with_capacity(n_boot);
    let mut attempts = 0usize;
    let mut sample_a = vec![0.0; n];
    let mut sample_b = vec![0.0; n];
    let mut sample_l = vec![0u8; n];
    while deltas.len() < n_boot {
        if attempts >= max_attempts {
            return Err(Error::ResamplingExhausted(attempts));
        }
        let mut rng = stream_rng(base, attempts as u64);
        attempts += 1;
        for slot in 0..n {
            let idx = rng.random_range(0..n);
            sample_a[slot] = preds_a[idx];
            sample_b[slot] = preds_b[idx];
            sample_l[slot] = labels[idx];
        }
        let ma = metric(&sample_a, &sample_l);
        let mb = metric(&sample_b, &sample_l);
        match (ma, mb) {
            (Ok(a), Ok(b)) => deltas.push(a - b),
            // Undefined on this draw — redraw with the next stream.
            _ => continue,
        }
    }

    let estimate = deltas.iter().sum::<f64>() / n_boot as f64;
    let mut sorted = deltas.clone();
    sorted.sort_by(f64::total_cmp);
    let ci_lo = percentile(&sorted, 0.025);
    let ci_hi = percentile(&sorted, 0.975);

    // Sign test: zeros alternate between the positive and negative side so
    // an all-zero run stays maximally non-significant.
    let (mut n_pos, mut n_neg) = (0u64, 0u64);
    let mut next_zero_positive = true;
    for &d in &deltas {
        if d > 0.0 {
            n_pos += 1;
        } else if d < 0.0 {
            n_neg += 1;
        } else if next_zero_positive {
            n_pos += 1;
            next_zero_positive = false;
        } else {
            n_neg += 1;
            next_zero_positive = true;
        }
    }
    let total = n_pos + n_neg;
    let k = n_pos.min(n_neg);
    let binom = Binomial::new(0.5, total).expect("valid binomial");
    let p_value = (2.0 * binom.cdf(k)).clamp(0.0, 1.0);

    Ok(TestResult {
        estimate,
        ci_lo,
        ci_hi,
        p_value,
        n,
        method: TestMethod::BootstrapSign,
        degenerate_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use rand::Rng;

    fn auc_metric(scores: &[f64], labels: &[u8]) -> Result<f64> {
        auc(scores, labels)
    }

    #[test]
    fn identical_predictions_are_null() {
        let preds: Vec<f64> = (0..40).map(|i| i as f64 / 40.0).collect();
        let labels: Vec<u8> = (0..40).map(|i| (i % 2) as u8).collect();
        let res = bootstrap_paired(auc_metric, &preds, &preds, &labels, 200, 0).unwrap();
        assert_eq!(res.estimate, 0.0);
        assert_eq!(res.p_value, 1.0);
        assert_eq!(res.ci_lo, 0.0);
        assert_eq!(res.ci_hi, 0.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = crate::rng::stream_rng(30, 0);
        let labels: Vec<u8> = (0..60).map(|i| (i % 2) as u8).collect();
        let a: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 + rng.random::<f64>())
            .collect();
        let b: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let r1 = bootstrap_paired(auc_metric, &a, &b, &labels, 300, 7).unwrap();
        let r2 = bootstrap_paired(auc_metric, &a, &b, &labels, 300, 7).unwrap();
        assert_eq!(r1.ci_lo, r2.ci_lo);
        assert_eq!(r1.ci_hi, r2.ci_hi);
        assert_eq!(r1.estimate, r2.estimate);
        let r3 = bootstrap_paired(auc_metric, &a, &b, &labels, 300, 8).unwrap();
        assert_ne!(r1.estimate, r3.estimate);
    }

    #[test]
    fn detects_consistent_improvement() {
        let mut rng = crate::rng::stream_rng(31, 0);
        let labels: Vec<u8> = (0..80).map(|i| (i % 2) as u8).collect();
        let a: Vec<f64> = labels
            .iter()
            .map(|&l| 2.0 * l as f64 + rng.random::<f64>())
            .collect();
        let b: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let res = bootstrap_paired(auc_metric, &a, &b, &labels, 500, 0).unwrap();
        assert!(res.estimate > 0.2);
        assert!(res.p_value < 1e-6);
        assert!(res.ci_lo > 0.0);
    }

    #[test]
    fn ci_contains_estimate_for_seeded_problems() {
        let mut rng = crate::rng::stream_rng(32, 0);
        let mut misses = 0;
        for seed in 0..100u64 {
            let n = rng.random_range(30..80);
            let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let a: Vec<f64> = labels
                .iter()
                .map(|&l| l as f64 * rng.random_range(0.0..1.5) + rng.random::<f64>())
                .collect();
            let b: Vec<f64> = labels
                .iter()
                .map(|&l| l as f64 * rng.random_range(0.0..1.5) + rng.random::<f64>())
                .collect();
            let res = bootstrap_paired(auc_metric, &a, &b, &labels, 200, seed).unwrap();
            if res.estimate < res.ci_lo || res.estimate > res.ci_hi {
                misses += 1;
            }
        }
        assert!(misses <= 1, "estimate outside CI in {misses}/100 problems");
    }

    #[test]
    fn exhaustion_when_metric_never_defined() {
        let labels = vec![1u8; 20]; // single class: AUC undefined on every draw
        let preds: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let err = bootstrap_paired(auc_metric, &preds, &preds, &labels, 100, 0).unwrap_err();
        assert!(matches!(err, Error::ResamplingExhausted(1000)));
    }
}
