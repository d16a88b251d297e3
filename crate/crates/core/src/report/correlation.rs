use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::Serialize;

use super::ReportError;
use crate::corpus::{Dataset, Explicitness};
use crate::humaneval::{final_scores, AnnotationRecord, HumanEvalError, SealedKey};
use crate::metrics::{kendall_tau, MetricError};
use crate::pipeline::{AggregatedMetric, Approach, GeneratedResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One point per (model, approach): averaged quality vs SC.
    Configuration,
    /// One point per judged output: quality vs stance correctness (0/1).
    Sample,
}

impl Granularity {
    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Configuration => "configuration",
            Granularity::Sample => "sample",
        }
    }
}

#[derive(Debug)]
pub struct CorrelationRow {
    pub dataset: String,
    pub explicitness: Explicitness,
    pub quality: String,
    pub granularity: Granularity,
    pub n: usize,
    pub tau: Result<f64, MetricError>,
}

impl CorrelationRow {
    pub fn label(&self) -> String {
        format!("{} {} {} {}", self.dataset, self.explicitness, self.quality, self.granularity.as_str())
    }
}

/// Kendall tau between a quality metric (`BTSD` or `HE`) and SC across the
/// configurations of each (dataset, explicitness) cell.
pub fn correlate_quality_vs_sc(metrics: &[AggregatedMetric], quality: &str) -> Vec<CorrelationRow> {
    type Cell = (String, Explicitness);
    let mut pairs: BTreeMap<Cell, BTreeMap<(String, Approach), [Option<f64>; 2]>> = BTreeMap::new();
    for m in metrics {
        let slot = if m.key.metric == quality {
            0
        } else if m.key.metric == "SC" {
            1
        } else {
            continue;
        };
        pairs
            .entry((m.key.dataset.clone(), m.key.explicitness))
            .or_default()
            .entry((m.key.model_id.clone(), m.key.approach))
            .or_default()[slot] = Some(m.mean);
    }
    pairs
        .into_iter()
        .filter_map(|((dataset, explicitness), configs)| {
            let (q, sc): (Vec<f64>, Vec<f64>) =
                configs.into_values().filter_map(|[q, sc]| Some((q?, sc?))).unzip();
            (!q.is_empty()).then(|| CorrelationRow {
                dataset,
                explicitness,
                quality: quality.to_string(),
                granularity: Granularity::Configuration,
                n: q.len(),
                tau: kendall_tau(&q, &sc),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleObservation {
    pub dataset: String,
    pub explicitness: Explicitness,
    pub quality: f64,
    pub stance_correct: bool,
}

/// Per-output observations from human judgments: the final HE score of each
/// judged slot paired with whether that configuration's stance was right.
pub fn sample_observations(
    records: &[AnnotationRecord],
    key: &SealedKey,
    dataset: &Dataset,
    results: &[GeneratedResult],
) -> Result<Vec<SampleObservation>, HumanEvalError> {
    let index: HashMap<(&str, &str, Approach), &GeneratedResult> = results
        .iter()
        .filter(|r| r.repetition == key.repetition)
        .map(|r| ((r.sample_id.as_str(), r.model_id.as_str(), r.approach), r))
        .collect();
    final_scores(records)
        .into_iter()
        .map(|((sample_id, slot), score)| {
            let unknown = || HumanEvalError::UnknownSlot { sample_id: sample_id.clone(), slot: slot.clone() };
            let entry = key.lookup(&sample_id, &slot).ok_or_else(unknown)?;
            let sample = dataset.get(&sample_id).ok_or_else(unknown)?;
            let result = index.get(&(sample_id.as_str(), entry.model_id.as_str(), entry.approach)).ok_or_else(|| {
                HumanEvalError::MissingConfiguration {
                    sample_id: sample_id.clone(),
                    model_id: entry.model_id.clone(),
                    approach: entry.approach,
                    repetition: key.repetition,
                }
            })?;
            Ok(SampleObservation {
                dataset: dataset.name.name().to_string(),
                explicitness: sample.explicitness,
                quality: score,
                stance_correct: result.predicted_stance == sample.gold_stance,
            })
        })
        .collect()
}

pub fn correlate_per_sample(observations: &[SampleObservation], quality: &str) -> Vec<CorrelationRow> {
    let mut cells: BTreeMap<(String, Explicitness), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for o in observations {
        let (q, c) = cells.entry((o.dataset.clone(), o.explicitness)).or_default();
        q.push(o.quality);
        c.push(if o.stance_correct { 1.0 } else { 0.0 });
    }
    cells
        .into_iter()
        .map(|((dataset, explicitness), (q, c))| CorrelationRow {
            dataset,
            explicitness,
            quality: quality.to_string(),
            granularity: Granularity::Sample,
            n: q.len(),
            tau: kendall_tau(&q, &c),
        })
        .collect()
}

/// `dataset,explicitness,quality,granularity,n,tau,note`; undefined cells
/// leave `tau` empty and carry the reason in `note`.
pub fn write_correlation_csv<W: Write>(writer: W, rows: &[CorrelationRow]) -> Result<(), ReportError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["dataset", "explicitness", "quality", "granularity", "n", "tau", "note"])?;
    for r in rows {
        let (tau, note) = match &r.tau {
            Ok(t) => (format!("{t:.6}"), String::new()),
            Err(e) => (String::new(), e.to_string()),
        };
        w.write_record([
            r.dataset.clone(),
            r.explicitness.as_str().to_string(),
            r.quality.clone(),
            r.granularity.as_str().to_string(),
            r.n.to_string(),
            tau,
            note,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::MetricKey;

    fn agg(model: &str, metric: &str, mean: f64) -> AggregatedMetric {
        AggregatedMetric {
            key: MetricKey {
                dataset: "vast".into(),
                model_id: model.into(),
                approach: Approach::TgPlusSd,
                explicitness: Explicitness::NonExplicit,
                metric: metric.into(),
            },
            per_repetition: vec![mean],
            mean,
        }
    }

    fn metrics(pairs: &[(f64, f64)]) -> Vec<AggregatedMetric> {
        pairs
            .iter()
            .enumerate()
            .flat_map(|(i, (q, sc))| [agg(&format!("m{i}"), "BTSD", *q), agg(&format!("m{i}"), "SC", *sc)])
            .collect()
    }

    #[test]
    fn co_ranked_and_anti_ranked() {
        let rows = correlate_quality_vs_sc(&metrics(&[(1.0, 10.0), (2.0, 20.0), (3.0, 30.0)]), "BTSD");
        assert_eq!(rows.len(), 1);
        assert!((rows[0].tau.as_ref().unwrap() - 1.0).abs() < 1e-12);
        let rows = correlate_quality_vs_sc(&metrics(&[(1.0, 30.0), (2.0, 20.0), (3.0, 10.0)]), "BTSD");
        assert!((rows[0].tau.as_ref().unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_input_is_undefined_with_label() {
        let rows = correlate_quality_vs_sc(&metrics(&[(1.0, 10.0), (1.0, 20.0)]), "BTSD");
        assert!(rows[0].tau.is_err());
        let mut buf = Vec::new();
        write_correlation_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("vast,non-explicit,BTSD,configuration,2,,"));
    }

    #[test]
    fn per_sample_granularity() {
        let obs: Vec<SampleObservation> = [(1.0, true), (0.5, true), (0.0, false), (0.0, false)]
            .iter()
            .map(|&(quality, stance_correct)| SampleObservation {
                dataset: "tse".into(),
                explicitness: Explicitness::Explicit,
                quality,
                stance_correct,
            })
            .collect();
        let rows = correlate_per_sample(&obs, "HE");
        assert_eq!(rows[0].n, 4);
        assert!(rows[0].tau.as_ref().unwrap() > &0.8);
    }
}
