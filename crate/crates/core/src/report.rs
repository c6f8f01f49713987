//! CSV reports and the comparison summary.
//!
//! Column order is fixed:
//! - SAL: `grade,tau,epsilon,iterations,train_time_s,rse_train,rse_test`, then a
//!   `total_time` row carrying only `train_time_s`.
//! - SSG: `structure,alpha,epsilon,epoch,train_time_s,rse_train,rse_test`.
//! - compare: `method,threshold,reached,step,time_s`.
//!
//! Reals are written as `d.ddddde±x` (six significant digits); missing values
//! are empty fields.

use std::path::Path;

use crate::ssg::{SsgRecord, SsgReport};
use crate::trainer::{GradeRecord, TrainReport};
use crate::{Error, Result};

pub const SAL_HEADER: [&str; 7] = [
    "grade",
    "tau",
    "epsilon",
    "iterations",
    "train_time_s",
    "rse_train",
    "rse_test",
];
pub const SSG_HEADER: [&str; 7] = [
    "structure",
    "alpha",
    "epsilon",
    "epoch",
    "train_time_s",
    "rse_train",
    "rse_test",
];
pub const COMPARE_HEADER: [&str; 5] = ["method", "threshold", "reached", "step", "time_s"];

pub fn fmt_num(x: f64) -> String {
    format!("{x:.5e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_num).unwrap_or_default()
}

/// A row of one of the report tables.
pub trait ReportRow {
    fn header() -> &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

impl ReportRow for GradeRecord {
    fn header() -> &'static [&'static str] {
        &SAL_HEADER
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.grade.to_string(),
            fmt_num(self.tau),
            fmt_num(self.epsilon),
            self.iterations.to_string(),
            fmt_num(self.train_time_s),
            fmt_num(self.rse_train),
            fmt_opt(self.rse_test),
        ]
    }
}

impl ReportRow for SsgRecord {
    fn header() -> &'static [&'static str] {
        &SSG_HEADER
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.structure.clone(),
            fmt_num(self.alpha),
            fmt_num(self.epsilon),
            self.epoch.to_string(),
            fmt_num(self.train_time_s),
            fmt_num(self.rse_train),
            fmt_opt(self.rse_test),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub method: String,
    pub threshold: f64,
    /// Grade (SAL) or epoch (SSG) at which the threshold was first met.
    pub step: Option<usize>,
    pub time_s: Option<f64>,
}

impl ReportRow for CompareRow {
    fn header() -> &'static [&'static str] {
        &COMPARE_HEADER
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            fmt_num(self.threshold),
            if self.step.is_some() { "yes" } else { "no" }.into(),
            self.step.map(|s| s.to_string()).unwrap_or_default(),
            fmt_opt(self.time_s),
        ]
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            message: format!("{other:?}"),
        },
    }
}

fn write_records(
    path: &Path,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_csv<R: ReportRow>(rows: &[R], path: &Path) -> Result<()> {
    write_records(path, R::header(), rows.iter().map(ReportRow::fields))
}

/// Per-grade rows followed by the `total_time` row.
pub fn write_sal_csv(report: &TrainReport, path: &Path) -> Result<()> {
    let mut total = vec![String::new(); SAL_HEADER.len()];
    total[0] = "total_time".into();
    total[4] = fmt_num(report.total_time_s);
    write_records(
        path,
        &SAL_HEADER,
        report
            .records
            .iter()
            .map(ReportRow::fields)
            .chain(std::iter::once(total)),
    )
}

pub fn write_ssg_csv(report: &SsgReport, path: &Path) -> Result<()> {
    write_csv(&report.records, path)
}

pub fn compare_rows(
    sal: Option<&TrainReport>,
    ssg: Option<&SsgReport>,
    thresholds: &[f64],
) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    for &thr in thresholds {
        if let Some(r) = sal {
            let hit = r.time_to(thr);
            rows.push(CompareRow {
                method: "sal".into(),
                threshold: thr,
                step: hit.map(|h| h.0),
                time_s: hit.map(|h| h.1),
            });
        }
        if let Some(r) = ssg {
            let hit = r.time_to(thr);
            rows.push(CompareRow {
                method: "ssg".into(),
                threshold: thr,
                step: hit.map(|h| h.0),
                time_s: hit.map(|h| h.1),
            });
        }
    }
    rows
}

/// One line per threshold naming the faster method and the time ratio.
pub fn compare_summary(rows: &[CompareRow], thresholds: &[f64]) -> String {
    let mut out = String::new();
    for &thr in thresholds {
        let find = |m: &str| {
            rows.iter()
                .find(|r| r.method == m && r.threshold == thr)
                .and_then(|r| r.time_s)
        };
        let (sal, ssg) = (find("sal"), find("ssg"));
        let line = match (sal, ssg) {
            (Some(a), Some(b)) => {
                let (first, fast, slow) = if a <= b { ("SAL", a, b) } else { ("SSG", b, a) };
                let ratio = if fast > 0.0 {
                    format!("{:.2}x", slow / fast)
                } else {
                    "n/a".into()
                };
                format!(
                    "rse <= {}: {first} first (SAL {:.3}s, SSG {:.3}s, ratio {ratio})",
                    fmt_num(thr),
                    a,
                    b
                )
            }
            (Some(a), None) => format!("rse <= {}: only SAL reached it ({a:.3}s)", fmt_num(thr)),
            (None, Some(b)) => format!("rse <= {}: only SSG reached it ({b:.3}s)", fmt_num(thr)),
            (None, None) => format!("rse <= {}: neither method reached it", fmt_num(thr)),
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}
