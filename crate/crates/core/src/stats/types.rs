//! Shared result types for hypothesis tests.

use ndarray::Array2;

use crate::{Error, Result};

/// Which procedure produced a [`TestResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    DeLong,
    BootstrapSign,
}

/// Point estimate with confidence interval and p-value.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TestResult {
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    /// Number of paired instances the test saw.
    pub n: usize,
    pub method: TestMethod,
    /// Set when the variance estimate collapsed to zero and the p-value was
    /// pinned instead of computed.
    pub degenerate_variance: bool,
}

/// Performance values for k methods across n tasks, with per-task ranks.
///
/// Values are stored methods-by-tasks; ranking happens within each task
/// (column), average ranks on ties, and **higher values rank better**
/// (rank 1 = best). Negate a lower-is-better metric before building the
/// table.
#[derive(Debug, Clone)]
pub struct RankTable {
    pub methods: Vec<String>,
    /// Shape (k methods, n tasks).
    pub values: Array2<f64>,
    /// Same shape; ranks within each task, ties averaged.
    pub ranks: Array2<f64>,
}

impl RankTable {
    /// Build a table from per-method names and a (methods × tasks) value
    /// matrix.
    pub fn new(methods: Vec<String>, values: Array2<f64>) -> Result<Self> {
        let (k, n_tasks) = values.dim();
        if methods.len() != k {
            return Err(Error::ShapeError(format!(
                "{} method names for {k} value rows",
                methods.len()
            )));
        }
        if k == 0 || n_tasks == 0 {
            return Err(Error::EmptyTable);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalError("non-finite performance value".into()));
        }
        let mut ranks = Array2::zeros((k, n_tasks));
        for t in 0..n_tasks {
            let column: Vec<f64> = (0..k).map(|m| values[[m, t]]).collect();
            // Rank within the task: negate so the highest value gets
            // midrank 1.
            let negated: Vec<f64> = column.iter().map(|v| -v).collect();
            let r = crate::metrics::midranks(&negated);
            for m in 0..k {
                ranks[[m, t]] = r[m];
            }
        }
        Ok(RankTable {
            methods,
            values,
            ranks,
        })
    }

    /// Number of methods (k).
    pub fn n_methods(&self) -> usize {
        self.values.nrows()
    }

    /// Number of tasks (n).
    pub fn n_tasks(&self) -> usize {
        self.values.ncols()
    }

    /// Mean rank per method across tasks.
    pub fn average_ranks(&self) -> Vec<f64> {
        let n = self.n_tasks() as f64;
        (0..self.n_methods())
            .map(|m| self.ranks.row(m).sum() / n)
            .collect()
    }
}
