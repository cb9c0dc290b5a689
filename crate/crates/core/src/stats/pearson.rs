//! Pearson correlation with a two-sided t-test.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Sample Pearson correlation between `x` and `y`, with a two-sided
/// p-value from the t-distribution with n−2 degrees of freedom.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(Error::ShapeError(format!(
            "pearson needs equal-length inputs of ≥ 3 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);

    let dof = n - 2.0;
    let denom = 1.0 - r * r;
    let p = if denom <= 0.0 {
        0.0 // |r| = 1: the t statistic diverges
    } else {
        let t = r * (dof / denom).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).expect("dof ≥ 1");
        (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
    };
    Ok((r, p))
}
