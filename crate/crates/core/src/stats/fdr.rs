//! Benjamini–Hochberg false-discovery-rate adjustment.

use crate::{Error, Result};

/// Step-up BH adjustment: returns adjusted p-values in the input order,
/// clipped to 1.
pub fn benjamini_hochberg(pvals: &[f64]) -> Result<Vec<f64>> {
    for &p in pvals {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(Error::InvalidP(p));
        }
    }
    let n = pvals.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));

    // Walk from the largest p down, enforcing monotonicity of the adjusted
    // sequence.
    let mut adjusted = vec![0.0; n];
    let mut running_min = 1.0f64;
    for rank in (0..n).rev() {
        let idx = order[rank];
        // Factor-first keeps scaled ≥ p under rounding (n/(rank+1) ≥ 1 and
        // f64 multiplication is monotone), so adjusted values dominate raw
        // ones exactly.
        let scaled = pvals[idx] * (n as f64 / (rank as f64 + 1.0));
        running_min = running_min.min(scaled).min(1.0);
        adjusted[idx] = running_min;
    }
    Ok(adjusted)
}
