//! Column-by-column comparison of result tables on a shared time grid.

use std::fmt;
use std::path::Path;

use crate::cli::runner::RESULTS_FILE;
use crate::cli::table::ResultTable;
use crate::{Error, Result};

/// Absolute slack added to the 3σ band so that deterministic channels
/// (zero standard error) compare equal up to round-off.
pub const ABS_TOLERANCE: f64 = 1e-9;
/// Relative tolerance for matching time stamps.
const TIME_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnReport {
    pub left: String,
    pub right: String,
    pub rows: usize,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// Largest `|Δ| / σ` over rows with nonzero combined error.
    pub max_sigma: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub columns: Vec<ColumnReport>,
    /// Time points present in only one table.
    pub unmatched_rows: usize,
}

impl CompareReport {
    pub fn all_passed(&self) -> bool {
        self.columns.iter().all(|c| c.passed)
    }

    pub fn get(&self, left: &str) -> Option<&ColumnReport> {
        self.columns.iter().find(|c| c.left == left)
    }
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<40} {:>6} {:>12} {:>12} {:>10}  3σ", "column", "rows", "max |Δ|", "mean |Δ|", "max Δ/σ")?;
        for c in &self.columns {
            let name = if c.left == c.right { c.left.clone() } else { format!("{} vs {}", c.left, c.right) };
            writeln!(
                f,
                "{:<40} {:>6} {:>12.4e} {:>12.4e} {:>10.3} {}",
                name,
                c.rows,
                c.max_abs,
                c.mean_abs,
                c.max_sigma,
                if c.passed { "pass" } else { "FAIL" }
            )?;
        }
        if self.unmatched_rows > 0 {
            writeln!(f, "{} time points without a partner were skipped", self.unmatched_rows)?;
        }
        Ok(())
    }
}

fn stderr_of<'a>(table: &'a ResultTable, column: &str) -> Option<&'a [f64]> {
    table.column(&format!("{column}_stderr"))
}

/// Pairs of row indices with matching time stamps.
fn align(a: &[f64], b: &[f64]) -> (Vec<(usize, usize)>, usize) {
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let tol = TIME_TOLERANCE * (1.0 + a[i].abs().max(b[j].abs()));
        if (a[i] - b[j]).abs() <= tol {
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    let unmatched = a.len() + b.len() - 2 * pairs.len();
    (pairs, unmatched)
}

fn compare_pair(
    a: &ResultTable,
    left: &str,
    b: &ResultTable,
    right: &str,
    pairs: &[(usize, usize)],
) -> Result<ColumnReport> {
    let x = a.column(left).ok_or_else(|| Error::InvalidParameter(format!("no column `{left}`")))?;
    let y = b.column(right).ok_or_else(|| Error::InvalidParameter(format!("no column `{right}`")))?;
    let sx = stderr_of(a, left);
    let sy = stderr_of(b, right);
    let mut max_abs = 0.0f64;
    let mut sum = 0.0;
    let mut max_sigma = 0.0f64;
    let mut passed = true;
    let mut rows = 0;
    for &(i, j) in pairs {
        let (u, v) = (x[i], y[j]);
        if u.is_nan() && v.is_nan() {
            continue;
        }
        rows += 1;
        let d = (u - v).abs();
        if d.is_nan() {
            passed = false;
            max_abs = f64::NAN;
            continue;
        }
        let se = |s: Option<&[f64]>, k: usize| s.map(|s| s[k]).filter(|s| s.is_finite()).unwrap_or(0.0);
        let sigma = se(sx, i).hypot(se(sy, j));
        if d > 3.0 * sigma + ABS_TOLERANCE {
            passed = false;
        }
        if sigma > 0.0 {
            max_sigma = max_sigma.max(d / sigma);
        }
        max_abs = max_abs.max(d);
        sum += d;
    }
    Ok(ColumnReport {
        left: left.to_string(),
        right: right.to_string(),
        rows,
        max_abs,
        mean_abs: if rows > 0 { sum / rows as f64 } else { 0.0 },
        max_sigma,
        passed,
    })
}

/// Compares explicit column pairs `(column of a, column of b)`.
pub fn compare_columns(a: &ResultTable, b: &ResultTable, pairs: &[(String, String)]) -> Result<CompareReport> {
    let (rows, unmatched_rows) = align(&a.times, &b.times);
    let columns = pairs
        .iter()
        .map(|(l, r)| compare_pair(a, l, b, r, &rows))
        .collect::<Result<_>>()?;
    Ok(CompareReport { columns, unmatched_rows })
}

/// Compares every value column the two tables share by name.
pub fn compare_tables(a: &ResultTable, b: &ResultTable) -> Result<CompareReport> {
    let pairs: Vec<(String, String)> = a
        .columns
        .iter()
        .map(|c| c.0.clone())
        .filter(|n| !n.ends_with("_stderr") && b.column(n).is_some())
        .map(|n| (n.clone(), n))
        .collect();
    compare_columns(a, b, &pairs)
}

/// Compares the results tables of two run directories; with `pairs`, only
/// those columns.
pub fn compare_dirs(a: &Path, b: &Path, pairs: &[(String, String)]) -> Result<CompareReport> {
    let ta = ResultTable::read_path(&a.join(RESULTS_FILE))?;
    let tb = ResultTable::read_path(&b.join(RESULTS_FILE))?;
    if pairs.is_empty() {
        compare_tables(&ta, &tb)
    } else {
        compare_columns(&ta, &tb, pairs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(times: &[f64], cols: &[(&str, &[f64])]) -> ResultTable {
        let mut t = ResultTable::new(times.to_vec());
        for (n, v) in cols {
            t.push(*n, v.to_vec()).unwrap();
        }
        t
    }

    #[test]
    fn identical_tables_report_zero() {
        let t = table(&[0.0, 1.0], &[("a_free", &[1.0, 2.0]), ("b", &[f64::NAN, 3.0])]);
        let r = compare_tables(&t, &t).unwrap();
        assert!(r.all_passed());
        assert!(r.columns.iter().all(|c| c.max_abs == 0.0 && c.mean_abs == 0.0));
    }

    #[test]
    fn deviation_is_judged_against_combined_error() {
        let a = table(&[0.0, 1.0], &[("q", &[0.0, 1.0]), ("q_stderr", &[0.0, 0.1])]);
        let b = table(&[0.0, 1.0], &[("q", &[0.0, 1.25]), ("q_stderr", &[0.0, 0.1])]);
        let r = compare_tables(&a, &b).unwrap();
        assert!(r.all_passed());
        assert!((r.columns[0].max_sigma - 0.25 / 0.02f64.sqrt()).abs() < 1e-9);
        let c = table(&[0.0, 1.0], &[("q", &[0.0, 1.5]), ("q_stderr", &[0.0, 0.1])]);
        assert!(!compare_tables(&a, &c).unwrap().all_passed());
    }

    #[test]
    fn rows_align_on_time() {
        let a = table(&[0.0, 0.5, 1.0], &[("q", &[0.0, 7.0, 1.0])]);
        let b = table(&[0.0, 1.0], &[("q", &[0.0, 1.0])]);
        let r = compare_tables(&a, &b).unwrap();
        assert!(r.all_passed());
        assert_eq!(r.unmatched_rows, 1);
        assert_eq!(r.columns[0].rows, 2);
    }

    #[test]
    fn explicit_pairs_within_one_table() {
        let a = table(&[0.0, 1.0], &[("q_free", &[0.0, 0.0]), ("q_constrained", &[0.0, 0.3]), ("q_constrained_stderr", &[0.0, 0.01])]);
        let r = compare_columns(&a, &a, &[("q_free".into(), "q_constrained".into())]).unwrap();
        assert!(!r.all_passed());
        assert!(compare_columns(&a, &a, &[("nope".into(), "q_free".into())]).is_err());
    }

    #[test]
    fn one_sided_nan_fails() {
        let a = table(&[0.0], &[("q", &[f64::NAN])]);
        let b = table(&[0.0], &[("q", &[1.0])]);
        assert!(!compare_tables(&a, &b).unwrap().all_passed());
    }
}
