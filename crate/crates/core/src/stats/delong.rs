//! Paired two-sided DeLong test for the difference of two AUCs.

use statrs::distribution::{ContinuousCDF, Normal};

use super::types::{TestMethod, TestResult};
use crate::metrics::midranks;
use crate::{Error, Result};

/// Structural components of one model's AUC: per-positive (V10) and
/// per-negative (V01) placement values, via the fast midrank formulation.
fn structural_components(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>, f64) {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|&(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|&(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    let m = pos.len();
    let n = neg.len();

    let tx = midranks(&pos);
    let ty = midranks(&neg);
    let mut combined = pos.clone();
    combined.extend_from_slice(&neg);
    let tz = midranks(&combined);

    let v10: Vec<f64> = (0..m).map(|i| (tz[i] - tx[i]) / n as f64).collect();
    let v01: Vec<f64> = (0..n).map(|j| 1.0 - (tz[m + j] - ty[j]) / m as f64).collect();
    let auc = (tz[..m].iter().sum::<f64>() - m as f64 * (m as f64 + 1.0) / 2.0)
        / (m as f64 * n as f64);
    (v10, v01, auc)
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Two-sided DeLong test for ΔAUC = auc(a) − auc(b) on paired scores.
///
/// The variance is computed from the structural components of the
/// *difference* (equivalent to the usual covariance expansion but
/// nonnegative by construction); CI and p-value use the normal
/// approximation. When the variance collapses to zero the p-value is
/// pinned (1 for Δ = 0, else 0) and `degenerate_variance` is set.
pub fn delong_test(scores_a: &[f64], scores_b: &[f64], labels: &[u8]) -> Result<TestResult> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(Error::ShapeError(format!(
            "paired inputs must align: {} / {} scores vs {} labels",
            scores_a.len(),
            scores_b.len(),
            labels.len()
        )));
    }
    let m = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() - m;
    if m == 0 || n == 0 {
        return Err(Error::UndefinedAuc);
    }

    let (v10_a, v01_a, auc_a) = structural_components(scores_a, labels);
    let (v10_b, v01_b, auc_b) = structural_components(scores_b, labels);
    let estimate = auc_a - auc_b;

    let d10: Vec<f64> = v10_a.iter().zip(&v10_b).map(|(a, b)| a - b).collect();
    let d01: Vec<f64> = v01_a.iter().zip(&v01_b).map(|(a, b)| a - b).collect();
    let variance = sample_variance(&d10) / m as f64 + sample_variance(&d01) / n as f64;

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z975 = normal.inverse_cdf(0.975);
    if variance <= 0.0 {
        return Ok(TestResult {
            estimate,
            ci_lo: estimate,
            ci_hi: estimate,
            p_value: if estimate == 0.0 { 1.0 } else { 0.0 },
            n: labels.len(),
            method: TestMethod::DeLong,
            degenerate_variance: true,
        });
    }
    let se = variance.sqrt();
    let z = estimate / se;
    let p_value = (2.0 * normal.sf(z.abs())).clamp(0.0, 1.0);
    Ok(TestResult {
        estimate,
        ci_lo: estimate - z975 * se,
        ci_hi: estimate + z975 * se,
        p_value,
        n: labels.len(),
        method: TestMethod::DeLong,
        degenerate_variance: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auc;
    use rand::Rng;
    use rand_distr::{Distribution, Normal as NormalDist};

    fn random_instance(rng: &mut impl Rng, n: usize) -> (Vec<f64>, Vec<f64>, Vec<u8>) {
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let noise = NormalDist::new(0.0, 1.0).unwrap();
        let a: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 * rng.random_range(0.0..2.0) + noise.sample(rng))
            .collect();
        let b: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 * rng.random_range(0.0..2.0) + noise.sample(rng))
            .collect();
        (a, b, labels)
    }

    #[test]
    fn identical_scores_give_zero_delta_p_one() {
        let scores = [0.1, 0.9, 0.3, 0.7, 0.5];
        let labels = [0, 1, 0, 1, 1];
        let res = delong_test(&scores, &scores, &labels).unwrap();
        assert_eq!(res.estimate, 0.0);
        assert_eq!(res.p_value, 1.0);
        assert!(res.degenerate_variance);
    }

    #[test]
    fn estimate_equals_auc_difference() {
        let mut rng = crate::rng::stream_rng(10, 0);
        for _ in 0..100 {
            let n = rng.random_range(6..80);
            let (a, b, labels) = random_instance(&mut rng, n);
            let res = delong_test(&a, &b, &labels).unwrap();
            let direct = auc(&a, &labels).unwrap() - auc(&b, &labels).unwrap();
            assert!(
                (res.estimate - direct).abs() < 1e-12,
                "{} vs {direct}",
                res.estimate
            );
            assert!(res.ci_lo <= res.estimate && res.estimate <= res.ci_hi);
        }
    }

    #[test]
    fn variance_never_negative() {
        let mut rng = crate::rng::stream_rng(11, 0);
        for _ in 0..1000 {
            let n = rng.random_range(4..40);
            let (a, b, labels) = random_instance(&mut rng, n);
            let res = delong_test(&a, &b, &labels).unwrap();
            // A finite CI means the variance was nonnegative.
            assert!(res.ci_lo.is_finite() && res.ci_hi.is_finite());
            assert!(res.p_value >= 0.0 && res.p_value <= 1.0);
        }
    }

    #[test]
    fn null_rejection_rate_is_calibrated() {
        // Both models score the same latent signal plus independent noise:
        // ΔAUC has mean zero, so the rejection rate at level 0.05 should be
        // ≈ 5%. Ten batches of 100 null datasets keep a single unlucky
        // batch from dominating: the pooled rate must sit tight around
        // 0.05, and batch rates must mostly fall inside the wider window.
        let mut batch_in_window = 0;
        let mut total_rejections = 0;
        for stream in 0..10u64 {
            let mut rng = crate::rng::stream_rng(12, stream);
            let noise = NormalDist::new(0.0, 1.0).unwrap();
            let extra = NormalDist::new(0.0, 0.7).unwrap();
            let mut rejections = 0;
            for _ in 0..100 {
                let n = 500;
                let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
                let base: Vec<f64> = labels
                    .iter()
                    .map(|&l| l as f64 * 1.0 + noise.sample(&mut rng))
                    .collect();
                let a: Vec<f64> = base.iter().map(|&s| s + extra.sample(&mut rng)).collect();
                let b: Vec<f64> = base.iter().map(|&s| s + extra.sample(&mut rng)).collect();
                if delong_test(&a, &b, &labels).unwrap().p_value < 0.05 {
                    rejections += 1;
                }
            }
            total_rejections += rejections;
            if (2..=9).contains(&rejections) {
                batch_in_window += 1;
            }
        }
        let pooled = total_rejections as f64 / 1000.0;
        assert!(
            (0.035..=0.065).contains(&pooled),
            "pooled null rejection rate {pooled} far from 0.05"
        );
        assert!(
            batch_in_window >= 8,
            "only {batch_in_window}/10 batches inside [0.02, 0.09]"
        );
    }

    #[test]
    fn detects_a_real_difference() {
        let mut rng = crate::rng::stream_rng(13, 0);
        let noise = NormalDist::new(0.0, 0.5).unwrap();
        let n = 400;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        // Model a is strongly informative, model b is pure noise.
        let a: Vec<f64> = labels
            .iter()
            .map(|&l| l as f64 * 2.0 + noise.sample(&mut rng))
            .collect();
        let b: Vec<f64> = labels.iter().map(|_| noise.sample(&mut rng)).collect();
        let res = delong_test(&a, &b, &labels).unwrap();
        assert!(res.estimate > 0.3);
        assert!(res.p_value < 1e-6);
        assert!(!res.degenerate_variance);
    }

    #[test]
    fn one_class_is_undefined() {
        assert!(matches!(
            delong_test(&[0.1, 0.2], &[0.3, 0.4], &[1, 1]),
            Err(Error::UndefinedAuc)
        ));
    }
}
