//! Friedman rank test and Nemenyi post-hoc critical differences.

use ndarray::Array2;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::types::RankTable;
use crate::{Error, Result};

/// Friedman χ²_F over a rank table:
/// `χ²_F = 12/(n·k·(k+1)) · Σ R_j² − 3n(k+1)` with rank sums R_j and
/// average ranks on ties (no tie correction), p from χ² with k−1 dof.
pub fn friedman(table: &RankTable) -> Result<(f64, f64)> {
    let k = table.n_methods();
    let n = table.n_tasks();
    if k < 3 {
        return Err(Error::TooFewMethods(k));
    }
    if n < 2 {
        return Err(Error::ShapeError(format!(
            "friedman needs ≥ 2 tasks, got {n}"
        )));
    }
    let kf = k as f64;
    let nf = n as f64;
    let sum_r2: f64 = (0..k)
        .map(|m| {
            let r: f64 = table.ranks.row(m).sum();
            r * r
        })
        .sum();
    let chi2 = (12.0 / (nf * kf * (kf + 1.0)) * sum_r2 - 3.0 * nf * (kf + 1.0)).max(0.0);
    let dist = ChiSquared::new(kf - 1.0).expect("dof ≥ 2");
    let p = dist.sf(chi2).clamp(0.0, 1.0);
    Ok((chi2, p))
}

/// Studentized-range-derived q values for the Nemenyi test, k = 2..10.
/// Row 0: α = 0.05; row 1: α = 0.10.
const NEMENYI_Q: [[f64; 9]; 2] = [
    [1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031, 3.102, 3.164],
    [1.645, 2.052, 2.291, 2.459, 2.589, 2.693, 2.780, 2.855, 2.920],
];

/// Result of a Nemenyi post-hoc comparison.
#[derive(Debug, Clone)]
pub struct NemenyiResult {
    /// Critical difference: average-rank gaps larger than this are
    /// significant at the chosen level.
    pub cd: f64,
    /// Mean rank per method (same order as the table's methods).
    pub avg_ranks: Vec<f64>,
    /// Pairwise average-rank differences, antisymmetric:
    /// `rank_diff[i,j] = avg_ranks[i] − avg_ranks[j]`.
    pub rank_diff: Array2<f64>,
    /// `significant[i,j]` ⇔ |rank_diff[i,j]| > cd.
    pub significant: Array2<bool>,
}

impl NemenyiResult {
    /// Maximal groups of methods that are mutually non-separated: methods
    /// sorted by average rank, each clique a maximal index interval whose
    /// rank span is ≤ cd. Singleton groups are omitted.
    pub fn cliques(&self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.avg_ranks.len()).collect();
        order.sort_by(|&a, &b| self.avg_ranks[a].total_cmp(&self.avg_ranks[b]));
        let mut cliques: Vec<Vec<usize>> = Vec::new();
        for start in 0..order.len() {
            let mut end = start;
            while end + 1 < order.len()
                && self.avg_ranks[order[end + 1]] - self.avg_ranks[order[start]] <= self.cd
            {
                end += 1;
            }
            if end > start {
                let clique: Vec<usize> = order[start..=end].to_vec();
                // Keep only maximal intervals.
                let contained = cliques
                    .last()
                    .is_some_and(|prev: &Vec<usize>| clique.iter().all(|m| prev.contains(m)));
                if !contained {
                    cliques.push(clique);
                }
            }
        }
        cliques
    }
}

/// Nemenyi critical-difference comparison at level `alpha` (0.05 or 0.10).
pub fn nemenyi(table: &RankTable, alpha: f64) -> Result<NemenyiResult> {
    let k = table.n_methods();
    let n = table.n_tasks();
    if !(2..=10).contains(&k) {
        return Err(Error::UnsupportedK(k));
    }
    let row = if (alpha - 0.05).abs() < 1e-12 {
        0
    } else if (alpha - 0.10).abs() < 1e-12 {
        1
    } else {
        panic!("nemenyi q table covers alpha 0.05 and 0.10, got {alpha}");
    };
    let q = NEMENYI_Q[row][k - 2];
    let kf = k as f64;
    let cd = q * (kf * (kf + 1.0) / (6.0 * n as f64)).sqrt();

    let avg_ranks = table.average_ranks();
    let mut rank_diff = Array2::zeros((k, k));
    let mut significant = Array2::from_elem((k, k), false);
    for i in 0..k {
        for j in 0..k {
            let d = avg_ranks[i] - avg_ranks[j];
            rank_diff[[i, j]] = d;
            significant[[i, j]] = d.abs() > cd;
        }
    }
    Ok(NemenyiResult {
        cd,
        avg_ranks,
        rank_diff,
        significant,
    })
}
