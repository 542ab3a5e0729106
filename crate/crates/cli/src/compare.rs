//! Cross-checks reports of the same workload and summarizes query times per
//! delta size relative to a base mode.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{CliError, Result};
use crate::run::{Mode, RunReport};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    /// `point` for a measured delta size, `crossover` for an interpolated
    /// ratio of 1.
    pub row: String,
    pub delta_size: f64,
    pub mode: Mode,
    pub queries: usize,
    pub median_us: Option<f64>,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub base: Mode,
    pub rows: Vec<SummaryRow>,
}

impl Summary {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn crossover(&self, mode: Mode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.row == "crossover" && r.mode == mode)
            .map(|r| r.delta_size)
    }

    pub fn ratios(&self, mode: Mode) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.row == "point" && r.mode == mode)
            .map(|r| (r.delta_size, r.ratio))
            .collect()
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// First `x` where the piecewise-linear series through `points` reaches 1
/// from below. Points must be sorted by `x`.
pub fn crossover(points: &[(f64, f64)]) -> Option<f64> {
    if let Some(&(x, r)) = points.first() {
        if r >= 1.0 {
            return Some(x);
        }
    }
    points.windows(2).find_map(|w| {
        let ((x0, r0), (x1, r1)) = (w[0], w[1]);
        (r0 < 1.0 && r1 >= 1.0).then(|| x0 + (1.0 - r0) * (x1 - x0) / (r1 - r0))
    })
}

/// Rejects reports whose operations or query results differ.
pub fn check_consistent(reports: &[RunReport]) -> Result<()> {
    let Some(first) = reports.first() else {
        return Err(CliError::InvalidArgument("no reports to compare".into()));
    };
    for (i, other) in reports.iter().enumerate().skip(1) {
        if other.rows.len() != first.rows.len() {
            return Err(CliError::MismatchedWorkloads(format!(
                "report {i} has {} operations, report 0 has {}",
                other.rows.len(),
                first.rows.len()
            )));
        }
        for (a, b) in first.rows.iter().zip(&other.rows) {
            if a.kind != b.kind || a.delta_size != b.delta_size {
                return Err(CliError::MismatchedWorkloads(format!(
                    "operation {} is {} ({} rows) in report 0 but {} ({} rows) in report {i}",
                    a.index, a.kind, a.delta_size, b.kind, b.delta_size
                )));
            }
            if a.checksum != b.checksum {
                return Err(CliError::MismatchedWorkloads(format!(
                    "query {} returned different results: {} in {} and {} in {}",
                    a.index,
                    a.checksum.as_deref().unwrap_or("-"),
                    a.mode,
                    b.checksum.as_deref().unwrap_or("-"),
                    b.mode
                )));
            }
        }
    }
    Ok(())
}

/// Median query time per delta size for each report, divided by that of the
/// base report. The base is the FM report when there is one, else the first.
pub fn compare(reports: &[RunReport]) -> Result<Summary> {
    check_consistent(reports)?;
    let base = reports
        .iter()
        .position(|r| r.mode() == Some(Mode::Fm))
        .unwrap_or(0);
    let medians = |r: &RunReport| -> BTreeMap<u64, (usize, f64)> {
        let mut by_size: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for row in r.rows.iter().filter(|row| row.kind == "query") {
            by_size.entry(row.delta_size).or_default().push(row.wall_us as f64);
        }
        by_size
            .into_iter()
            .map(|(d, mut v)| (d, (v.len(), median(&mut v).expect("non-empty"))))
            .collect()
    };
    let base_medians = medians(&reports[base]);
    let base_mode = reports[base].mode().unwrap_or(Mode::Fm);
    let mut rows = Vec::new();
    for (i, report) in reports.iter().enumerate() {
        let Some(mode) = report.mode() else { continue };
        let mut points = Vec::new();
        for (d, (n, m)) in medians(report) {
            let b = base_medians[&d].1;
            let ratio = if b == 0.0 { if m == 0.0 { 1.0 } else { f64::INFINITY } } else { m / b };
            points.push((d as f64, ratio));
            rows.push(SummaryRow {
                row: "point".into(),
                delta_size: d as f64,
                mode,
                queries: n,
                median_us: Some(m),
                ratio,
            });
        }
        if i != base {
            if let Some(x) = crossover(&points) {
                rows.push(SummaryRow {
                    row: "crossover".into(),
                    delta_size: x,
                    mode,
                    queries: 0,
                    median_us: None,
                    ratio: 1.0,
                });
            }
        }
    }
    Ok(Summary { base: base_mode, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_the_crossing() {
        assert_eq!(crossover(&[(1.0, 0.5), (3.0, 1.5)]), Some(2.0));
        assert_eq!(crossover(&[(1.0, 0.5), (3.0, 0.9)]), None);
        assert_eq!(crossover(&[(1.0, 1.2)]), Some(1.0));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
