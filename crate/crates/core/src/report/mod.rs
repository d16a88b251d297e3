//! Results grid, score distributions and quality-vs-stance correlations.

mod correlation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Explicitness;
use crate::humaneval::ConfigGroup;
use crate::pipeline::{AggregatedMetric, Approach};

pub use correlation::{
    correlate_per_sample, correlate_quality_vs_sc, sample_observations, write_correlation_csv, CorrelationRow, Granularity,
    SampleObservation,
};

pub const METRICS: [&str; 4] = ["SS", "BTSD", "HE", "SC"];
const REQUIRED: [&str; 2] = ["SS", "SC"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("row {row}: metric {metric} is missing")]
    MissingMetric { row: String, metric: &'static str },
    #[error("row {row}: {metric} = {value} is outside its range")]
    OutOfRange { row: String, metric: String, value: f64 },
    #[error("final score {0} is not on the 0 / 0.5 / 1 scale")]
    OffScale(f64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlagTally {
    pub truncated: usize,
    pub stance_fallback: usize,
    pub incomplete: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub dataset: String,
    pub explicitness: Explicitness,
    pub model_id: String,
    pub approach: Approach,
    /// Indexed like [`METRICS`].
    pub values: [Option<f64>; 4],
    /// Metrics on which this row is best within its (dataset, explicitness) setting.
    pub best: BTreeSet<&'static str>,
}

impl ReportRow {
    pub fn label(&self) -> String {
        format!("{} {} {} {}", self.dataset, self.explicitness, self.model_id, self.approach)
    }

    pub fn value(&self, metric: &str) -> Option<f64> {
        METRICS.iter().position(|m| *m == metric).and_then(|i| self.values[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub rows: Vec<ReportRow>,
    pub repetitions: u32,
    pub flags: FlagTally,
    pub manifest_hash: Option<String>,
}

fn in_range(metric: &str, v: f64) -> bool {
    match metric {
        "SS" => (-1.0 - 1e-9..=1.0 + 1e-9).contains(&v),
        "HE" => (0.0..=1.0).contains(&v),
        _ => (0.0..=100.0).contains(&v),
    }
}

/// Pivots averaged metrics into one row per (dataset, explicitness, model,
/// approach). SS and SC are required; BTSD and HE may be absent. Ties for
/// best are all flagged.
pub fn build_results_table(
    metrics: &[AggregatedMetric],
    repetitions: u32,
    flags: FlagTally,
    manifest_hash: Option<String>,
) -> Result<ScoreReport, ReportError> {
    type RowKey = (String, Explicitness, String, Approach);
    let mut cells: BTreeMap<RowKey, [Option<f64>; 4]> = BTreeMap::new();
    for m in metrics {
        let Some(i) = METRICS.iter().position(|x| *x == m.key.metric) else {
            continue;
        };
        let k = &m.key;
        let row = cells
            .entry((k.dataset.clone(), k.explicitness, k.model_id.clone(), k.approach))
            .or_default();
        row[i] = Some(m.mean);
    }
    let mut rows = Vec::with_capacity(cells.len());
    for ((dataset, explicitness, model_id, approach), values) in cells {
        let row = ReportRow { dataset, explicitness, model_id, approach, values, best: BTreeSet::new() };
        for metric in REQUIRED {
            if row.value(metric).is_none() {
                return Err(ReportError::MissingMetric { row: row.label(), metric });
            }
        }
        for (metric, v) in METRICS.iter().zip(values) {
            if let Some(v) = v.filter(|v| !in_range(metric, *v)) {
                return Err(ReportError::OutOfRange { row: row.label(), metric: metric.to_string(), value: v });
            }
        }
        rows.push(row);
    }
    let mut best: BTreeMap<(&str, Explicitness, usize), f64> = BTreeMap::new();
    for r in &rows {
        for (i, v) in r.values.iter().enumerate() {
            if let Some(v) = v {
                let e = best.entry((r.dataset.as_str(), r.explicitness, i)).or_insert(f64::NEG_INFINITY);
                *e = e.max(*v);
            }
        }
    }
    let flagged: Vec<BTreeSet<&'static str>> = rows
        .iter()
        .map(|r| {
            (0..4)
                .filter(|&i| r.values[i].is_some_and(|v| v == best[&(r.dataset.as_str(), r.explicitness, i)]))
                .map(|i| METRICS[i])
                .collect()
        })
        .collect();
    for (r, b) in rows.iter_mut().zip(flagged) {
        r.best = b;
    }
    Ok(ScoreReport { rows, repetitions, flags, manifest_hash })
}

fn fmt_metric(metric: &str, v: Option<f64>) -> String {
    match (metric, v) {
        (_, None) => String::new(),
        ("SS", Some(v)) => format!("{v:.4}"),
        ("HE", Some(v)) => format!("{v:.3}"),
        (_, Some(v)) => format!("{v:.2}"),
    }
}

/// CSV with one row per grid row; `best` lists the flagged metrics.
pub fn write_report_csv<W: Write>(writer: W, report: &ScoreReport) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "explicitness", "model_id", "approach", "SS", "BTSD", "HE", "SC", "best"])?;
    for r in &report.rows {
        let mut rec = vec![
            r.dataset.clone(),
            r.explicitness.as_str().to_string(),
            r.model_id.clone(),
            r.approach.as_str().to_string(),
        ];
        rec.extend(METRICS.iter().zip(r.values).map(|(m, v)| fmt_metric(m, v)));
        rec.push(r.best.iter().copied().collect::<Vec<_>>().join(";"));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text grid. Best values carry a trailing `*`.
pub fn render_grid(report: &ScoreReport) -> String {
    let header = ["dataset", "split", "model", "approach", "SS", "BTSD", "HE", "SC"];
    let mut lines: Vec<[String; 8]> = vec![header.map(String::from)];
    for r in &report.rows {
        let cell = |i: usize| {
            let mut s = fmt_metric(METRICS[i], r.values[i]);
            if s.is_empty() {
                s.push('-');
            } else if r.best.contains(METRICS[i]) {
                s.push('*');
            }
            s
        };
        lines.push([
            r.dataset.clone(),
            r.explicitness.as_str().to_string(),
            r.model_id.clone(),
            r.approach.as_str().to_string(),
            cell(0),
            cell(1),
            cell(2),
            cell(3),
        ]);
    }
    let widths: Vec<usize> = (0..8).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for l in &lines {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 4 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        writeln!(out, "{}", cells.join("  ").trim_end()).expect("string write");
    }
    let f = report.flags;
    writeln!(
        out,
        "\nrepetitions: {}  truncated: {}  stance fallbacks: {}  incomplete: {}",
        report.repetitions, f.truncated, f.stance_fallback, f.incomplete
    )
    .expect("string write");
    if let Some(h) = &report.manifest_hash {
        writeln!(out, "manifest: {h}").expect("string write");
    }
    out
}

/// Counts of final scores at 0, 0.5 and 1.
pub fn score_histogram(scores: &[f64]) -> Result<[usize; 3], ReportError> {
    let mut counts = [0; 3];
    for &s in scores {
        let i = crate::metrics::scale_index(s).ok_or(ReportError::OffScale(s))?;
        counts[i] += 1;
    }
    Ok(counts)
}

/// Histogram per configuration; a listed configuration with no scores gets
/// zero counts.
pub fn score_distribution(
    groups: &BTreeMap<ConfigGroup, Vec<f64>>,
) -> Result<BTreeMap<ConfigGroup, [usize; 3]>, ReportError> {
    groups.iter().map(|(g, v)| Ok((g.clone(), score_histogram(v)?))).collect()
}

pub fn write_distribution_csv<W: Write>(
    writer: W,
    dist: &BTreeMap<ConfigGroup, [usize; 3]>,
) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["model_id", "approach", "explicitness", "score_0", "score_0.5", "score_1"])?;
    for (g, c) in dist {
        w.write_record([
            g.model_id.clone(),
            g.approach.as_str().to_string(),
            g.explicitness.as_str().to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
