//! Aggregates run records into leakage and parsimony figures per quadrant.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runner::{RunRecord, Status};

/// Disclosed in report headers.
pub const NOTES: &[&str] = &[
    "tokens are estimated as ceil(utf8 bytes / 4) on both arms",
    "synthetic corpus: generator and scanner rules are co-designed, so detection on it is complete by construction",
    "prompt shapes follow the published description of the dataset, not its exact text",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no result rows")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub samples: usize,
    pub secrets: usize,
    pub leaked: usize,
    /// `leaked / secrets`, 0 when there are no secrets.
    pub leakage_rate: f64,
    /// Mean per-sample `1 − guarded/baseline` tokens over completed rows.
    pub mean_reduction: f64,
    /// `Σ(baseline − guarded cost) / Σ baseline cost` over completed rows.
    pub opex_reduction: f64,
    pub blocked: usize,
    pub failed: usize,
    /// Every completed row was blocked, so the reduction is vacuous.
    pub all_blocked: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// One row per 2×2 quadrant present in the records.
    pub quadrants: Vec<GroupStats>,
    /// Grouped by profile and by secret kind.
    pub marginals: Vec<GroupStats>,
    pub blended: GroupStats,
    pub wall_ms_total: f64,
}

impl BenchReport {
    pub fn group(&self, name: &str) -> Option<&GroupStats> {
        self.quadrants
            .iter()
            .chain(&self.marginals)
            .chain(std::iter::once(&self.blended))
            .find(|g| g.group == name)
    }
}

pub fn group_stats(group: &str, rows: &[&RunRecord]) -> GroupStats {
    let secrets: usize = rows.iter().map(|r| r.secrets).sum();
    let leaked: usize = rows.iter().map(|r| r.leaked).sum();
    let done: Vec<&&RunRecord> = rows.iter().filter(|r| r.status != Status::Failed).collect();
    let blocked = rows.iter().filter(|r| r.status == Status::Blocked).count();
    let mean_reduction = if done.is_empty() {
        0.0
    } else {
        done.iter().map(|r| r.reduction()).sum::<f64>() / done.len() as f64
    };
    let base: f64 = done.iter().map(|r| r.baseline_cost).sum();
    let guarded: f64 = done.iter().map(|r| r.guarded_cost).sum();
    GroupStats {
        group: group.to_string(),
        samples: rows.len(),
        secrets,
        leaked,
        leakage_rate: if secrets == 0 {
            0.0
        } else {
            leaked as f64 / secrets as f64
        },
        mean_reduction,
        opex_reduction: if base > 0.0 {
            (base - guarded) / base
        } else {
            0.0
        },
        blocked,
        failed: rows.len() - done.len(),
        all_blocked: !done.is_empty() && blocked == done.len(),
    }
}

pub fn report(records: &[RunRecord]) -> Result<BenchReport, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let select = |f: &dyn Fn(&RunRecord) -> bool| -> Vec<&RunRecord> {
        records.iter().filter(|r| f(r)).collect()
    };
    let mut quadrant_names: Vec<&str> = records.iter().map(|r| r.quadrant.as_str()).collect();
    quadrant_names.sort_unstable();
    quadrant_names.dedup();
    let quadrants = quadrant_names
        .iter()
        .map(|q| group_stats(q, &select(&|r| r.quadrant == *q)))
        .collect();
    let mut marginals = Vec::new();
    for p in ["lazy", "expert"] {
        let rows = select(&|r| r.quadrant.split('/').next() == Some(p));
        if !rows.is_empty() {
            marginals.push(group_stats(p, &rows));
        }
    }
    for k in ["personal", "institutional"] {
        let rows = select(&|r| r.quadrant.split('/').nth(1) == Some(k));
        if !rows.is_empty() {
            marginals.push(group_stats(k, &rows));
        }
    }
    Ok(BenchReport {
        quadrants,
        marginals,
        blended: group_stats("all", &select(&|_| true)),
        wall_ms_total: records.iter().map(|r| r.wall_ms).sum(),
    })
}

#[derive(Serialize)]
struct QuadrantRow<'a> {
    quadrant: &'a str,
    samples: usize,
    secrets: usize,
    leaked: usize,
    leakage_rate: f64,
    mean_reduction: f64,
    opex_reduction: f64,
}

/// All groups, one row each. Wall-clock is left out so that reruns with
/// the same seed produce identical bytes.
pub fn write_report_csv<W: Write>(report: &BenchReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for g in report
        .quadrants
        .iter()
        .chain(&report.marginals)
        .chain(std::iter::once(&report.blended))
    {
        w.serialize(g)?;
    }
    w.flush()?;
    Ok(())
}

/// The four quadrant rows, for plotting.
pub fn write_quadrants_csv<W: Write>(report: &BenchReport, out: W) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(out);
    for g in &report.quadrants {
        w.serialize(QuadrantRow {
            quadrant: &g.group,
            samples: g.samples,
            secrets: g.secrets,
            leaked: g.leaked,
            leakage_rate: g.leakage_rate,
            mean_reduction: g.mean_reduction,
            opex_reduction: g.opex_reduction,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary, notes first.
pub fn summary(report: &BenchReport) -> String {
    let mut s = String::new();
    for n in NOTES {
        s.push_str(&format!("# {n}\n"));
    }
    s.push_str(&format!(
        "{:<22} {:>7} {:>7} {:>6} {:>8} {:>9} {:>8}\n",
        "group", "samples", "secrets", "leaked", "leak%", "reduct%", "opex%"
    ));
    for g in report
        .quadrants
        .iter()
        .chain(&report.marginals)
        .chain(std::iter::once(&report.blended))
    {
        s.push_str(&format!(
            "{:<22} {:>7} {:>7} {:>6} {:>8.2} {:>9.2} {:>8.2}{}\n",
            g.group,
            g.samples,
            g.secrets,
            g.leaked,
            g.leakage_rate * 100.0,
            g.mean_reduction * 100.0,
            g.opex_reduction * 100.0,
            if g.all_blocked { "  (all blocked)" } else { "" }
        ));
    }
    s.push_str(&format!(
        "wall-clock total {:.1} ms\n",
        report.wall_ms_total
    ));
    s
}
