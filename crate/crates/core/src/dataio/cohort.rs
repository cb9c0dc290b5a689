//! Cohort-level descriptive statistics: χ² goodness of fit, Wilson score
//! intervals, and Cramér's V association strength.

use ndarray::Array2;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::types::{Attribute, CohortStats, ImageRecord};
use crate::{Error, Result};

/// Pearson's χ² goodness-of-fit statistic and its upper-tail p-value.
///
/// `chi2 = Σ (oᵢ − eᵢ)² / eᵢ`, with k−1 degrees of freedom and no
/// continuity correction.
pub fn chi_squared_gof(observed: &[f64], expected: &[f64]) -> Result<(f64, f64)> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(Error::ShapeError(format!(
            "observed ({}) and expected ({}) must have equal length ≥ 2",
            observed.len(),
            expected.len()
        )));
    }
    if expected.iter().any(|&e| e <= 0.0) {
        return Err(Error::DegenerateExpected);
    }
    let chi2: f64 = observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| (o - e) * (o - e) / e)
        .sum();
    let dof = (observed.len() - 1) as f64;
    // Survival function of the χ² distribution = regularized upper
    // incomplete gamma; underflows to exactly 0 for huge statistics.
    let dist = ChiSquared::new(dof).expect("dof ≥ 1");
    let p = dist.sf(chi2).clamp(0.0, 1.0);
    Ok((chi2, p))
}

/// Wilson score interval for a binomial proportion `k/n`.
///
/// Bounds are exact at the edges: `k = 0` gives `lo = 0` and `k = n` gives
/// `hi = 1`.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    assert!(k <= n, "successes k = {k} exceed trials n = {n}");
    assert!(
        confidence > 0.0 && confidence < 1.0,
        "confidence must be in (0, 1)"
    );
    let z = Normal::new(0.0, 1.0)
        .expect("unit normal")
        .inverse_cdf(0.5 + confidence / 2.0);
    let n_f = n as f64;
    let p_hat = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p_hat + z2 / (2.0 * n_f)) / denom;
    let half = z * (p_hat * (1.0 - p_hat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    let mut lo = (center - half).clamp(0.0, 1.0);
    let mut hi = (center + half).clamp(0.0, 1.0);
    // The closed form collapses exactly at the boundaries; pin them so
    // floating-point rounding cannot produce e.g. lo = 1e-17 for k = 0.
    if k == 0 {
        lo = 0.0;
    }
    if k == n {
        hi = 1.0;
    }
    Ok((lo, hi))
}

/// Cramér's V for a contingency table: `sqrt(χ² / (N · (min(r,c) − 1)))`
/// with the uncorrected independence χ².
pub fn cramers_v(table: &Array2<f64>) -> Result<f64> {
    let (rows, cols) = table.dim();
    assert!(rows >= 2 && cols >= 2, "table must be at least 2×2");
    assert!(
        table.iter().all(|&v| v >= 0.0),
        "table counts must be nonnegative"
    );
    let n: f64 = table.sum();
    if n <= 0.0 {
        return Err(Error::EmptyTable);
    }
    let row_sums: Vec<f64> = (0..rows).map(|i| table.row(i).sum()).collect();
    let col_sums: Vec<f64> = (0..cols).map(|j| table.column(j).sum()).collect();
    let mut chi2 = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let e = row_sums[i] * col_sums[j] / n;
            // A zero marginal forces both expected and observed to zero;
            // such cells contribute nothing.
            if e > 0.0 {
                let d = table[[i, j]] - e;
                chi2 += d * d / e;
            }
        }
    }
    let v = (chi2 / (n * (rows.min(cols) as f64 - 1.0))).sqrt();
    Ok(v.clamp(0.0, 1.0))
}

/// Summarize one protected attribute over a cohort: bin counts, balance χ²,
/// Wilson interval for the bin-1 proportion, and the sex↔age Cramér's V.
pub fn cohort_stats(records: &[ImageRecord], attr: Attribute) -> Result<CohortStats> {
    if records.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = records.len() as u64;
    let k: u64 = records.iter().map(|r| r.attribute(attr) as u64).sum();
    let counts = vec![n - k, k];
    let half = n as f64 / 2.0;
    let (chi2, p_value) = chi_squared_gof(&[counts[0] as f64, counts[1] as f64], &[half, half])?;
    let (wilson_lo, wilson_hi) = wilson_interval(k, n, 0.95)?;

    let mut table = Array2::zeros((2, 2));
    for r in records {
        table[[r.sex as usize, r.age_bin as usize]] += 1.0;
    }
    // Association is undefined when one sex or age bin is empty; report 0
    // rather than failing the whole summary.
    let cramers_v = cramers_v(&table).unwrap_or(0.0);

    Ok(CohortStats {
        counts,
        chi2,
        p_value,
        wilson_lo,
        wilson_hi,
        cramers_v,
    })
}
