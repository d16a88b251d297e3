//! Human relevance judgments: anonymized task export, annotation storage,
//! majority aggregation and inter-annotator agreement.

mod server;
mod store;
mod tasks;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::{Dataset, Explicitness};
use crate::metrics::{fleiss_kappa, krippendorff_alpha, AlphaDistance, AnnotationMatrix, MetricError};
use crate::pipeline::Approach;

pub use server::{router, serve, AppState};
pub use store::{read_annotations, write_annotations, AnnotationStore, UpsertOutcome};
pub use tasks::{export_tasks, AnnotationTask, KeyEntry, SealedKey, TaskBundle, TaskSlot};

/// Annotator instructions shipped with the annotation server.
pub const GUIDELINES: &str = include_str!("../../assets/humaneval/guidelines.md");

#[derive(Debug, Error)]
pub enum HumanEvalError {
    #[error("sample {sample_id} has no result from {model_id} ({approach}) at repetition {repetition}")]
    MissingConfiguration { sample_id: String, model_id: String, approach: Approach, repetition: u32 },
    #[error("score {0} is not one of 0, 0.5, 1")]
    OffScale(f64),
    #[error("no ratings to aggregate")]
    NoRatings,
    #[error("unknown task slot {sample_id}/{slot}")]
    UnknownSlot { sample_id: String, slot: String },
    #[error("annotations row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("annotation store: {0}")]
    Store(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A relevance judgment on the 0 / 0.5 / 1 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RelevanceScore {
    NotRelated,
    Partial,
    Complete,
}

impl RelevanceScore {
    pub const ALL: [RelevanceScore; 3] =
        [RelevanceScore::NotRelated, RelevanceScore::Partial, RelevanceScore::Complete];

    pub fn value(self) -> f64 {
        match self {
            RelevanceScore::NotRelated => 0.0,
            RelevanceScore::Partial => 0.5,
            RelevanceScore::Complete => 1.0,
        }
    }
}

impl TryFrom<f64> for RelevanceScore {
    type Error = HumanEvalError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        RelevanceScore::ALL
            .into_iter()
            .find(|s| s.value() == v)
            .ok_or(HumanEvalError::OffScale(v))
    }
}

impl fmt::Display for RelevanceScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for RelevanceScore {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for RelevanceScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        RelevanceScore::try_from(v).map_err(serde::de::Error::custom)
    }
}

/// One annotator's score for one slot of one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub sample_id: String,
    pub slot: String,
    pub annotator_id: String,
    pub score: RelevanceScore,
    #[serde(default)]
    pub timestamp: String,
}

/// Majority vote; when several values share the top count, their mean.
/// With three annotators the only tie is one vote each, giving 0.5.
pub fn aggregate_majority(scores: &[RelevanceScore]) -> Result<f64, HumanEvalError> {
    if scores.is_empty() {
        return Err(HumanEvalError::NoRatings);
    }
    let counts = RelevanceScore::ALL.map(|s| scores.iter().filter(|&&x| x == s).count());
    let top = *counts.iter().max().expect("three categories");
    let modes: Vec<f64> = RelevanceScore::ALL
        .iter()
        .zip(counts)
        .filter(|(_, c)| *c == top)
        .map(|(s, _)| s.value())
        .collect();
    Ok(modes.iter().sum::<f64>() / modes.len() as f64)
}

/// Final (majority) score per (sample_id, slot).
pub fn final_scores(records: &[AnnotationRecord]) -> BTreeMap<(String, String), f64> {
    let mut grouped: BTreeMap<(String, String), Vec<RelevanceScore>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.sample_id.clone(), r.slot.clone())).or_default().push(r.score);
    }
    grouped
        .into_iter()
        .map(|(k, v)| (k, aggregate_majority(&v).expect("non-empty group")))
        .collect()
}

/// The grouping a row of scores belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigGroup {
    pub model_id: String,
    pub approach: Approach,
    pub explicitness: Explicitness,
}

impl fmt::Display for ConfigGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.model_id, self.approach, self.explicitness)
    }
}

fn group_of(
    key: &SealedKey,
    dataset: &Dataset,
    sample_id: &str,
    slot: &str,
) -> Result<ConfigGroup, HumanEvalError> {
    let unknown = || HumanEvalError::UnknownSlot { sample_id: sample_id.into(), slot: slot.into() };
    let entry = key.lookup(sample_id, slot).ok_or_else(unknown)?;
    let sample = dataset.get(sample_id).ok_or_else(unknown)?;
    Ok(ConfigGroup {
        model_id: entry.model_id.clone(),
        approach: entry.approach,
        explicitness: sample.explicitness,
    })
}

/// Final scores grouped by configuration and stratum.
pub fn final_scores_by_configuration(
    records: &[AnnotationRecord],
    key: &SealedKey,
    dataset: &Dataset,
) -> Result<BTreeMap<ConfigGroup, Vec<f64>>, HumanEvalError> {
    let mut groups: BTreeMap<ConfigGroup, Vec<f64>> = BTreeMap::new();
    for ((sample_id, slot), score) in final_scores(records) {
        groups.entry(group_of(key, dataset, &sample_id, &slot)?).or_default().push(score);
    }
    Ok(groups)
}

/// Mean final score per configuration and stratum.
pub fn he_by_configuration(
    records: &[AnnotationRecord],
    key: &SealedKey,
    dataset: &Dataset,
) -> Result<BTreeMap<ConfigGroup, f64>, HumanEvalError> {
    Ok(final_scores_by_configuration(records, key, dataset)?
        .into_iter()
        .map(|(g, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (g, mean)
        })
        .collect())
}

/// Agreement for one grouping; `None` group means all items.
#[derive(Debug)]
pub struct AgreementRow {
    pub group: Option<ConfigGroup>,
    pub items: usize,
    pub ratings: usize,
    pub alpha: Result<f64, MetricError>,
    pub kappa: Result<f64, MetricError>,
}

impl AgreementRow {
    pub fn label(&self) -> String {
        self.group.as_ref().map_or_else(|| "overall".to_string(), ToString::to_string)
    }
}

fn agreement_row(group: Option<ConfigGroup>, items: &[Vec<f64>], distance: AlphaDistance) -> AgreementRow {
    let kappa = AnnotationMatrix::from_ratings(items).and_then(|m| fleiss_kappa(&m));
    AgreementRow {
        group,
        items: items.len(),
        ratings: items.iter().map(Vec::len).sum(),
        alpha: krippendorff_alpha(items, distance),
        kappa,
    }
}

/// Krippendorff's alpha and Fleiss' kappa per (model, approach,
/// explicitness), followed by one overall row. Items are (sample, slot)
/// pairs; each item's values are its annotators' scores.
pub fn agreement_report(
    records: &[AnnotationRecord],
    key: &SealedKey,
    dataset: &Dataset,
    distance: AlphaDistance,
) -> Result<Vec<AgreementRow>, HumanEvalError> {
    let mut items: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in records {
        if seen.insert((&r.sample_id, &r.slot, &r.annotator_id)) {
            items.entry((r.sample_id.clone(), r.slot.clone())).or_default().push(r.score.value());
        }
    }
    let mut grouped: BTreeMap<ConfigGroup, Vec<Vec<f64>>> = BTreeMap::new();
    for ((sample_id, slot), values) in &items {
        grouped
            .entry(group_of(key, dataset, sample_id, slot)?)
            .or_default()
            .push(values.clone());
    }
    let mut rows: Vec<AgreementRow> = grouped
        .into_iter()
        .map(|(g, v)| agreement_row(Some(g), &v, distance))
        .collect();
    let all: Vec<Vec<f64>> = items.into_values().collect();
    rows.push(agreement_row(None, &all, distance));
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use RelevanceScore::{Complete as C, NotRelated as Z, Partial as P};

    #[test]
    fn majority_examples() {
        assert_eq!(aggregate_majority(&[C, C, P]).unwrap(), 1.0);
        assert_eq!(aggregate_majority(&[Z, P, C]).unwrap(), 0.5);
        assert_eq!(aggregate_majority(&[Z, Z, Z]).unwrap(), 0.0);
        assert!(aggregate_majority(&[]).is_err());
    }

    #[test]
    fn majority_over_all_multisets_of_three() {
        let mut seen = 0;
        for a in 0..3 {
            for b in a..3 {
                for c in b..3 {
                    seen += 1;
                    let s = [RelevanceScore::ALL[a], RelevanceScore::ALL[b], RelevanceScore::ALL[c]];
                    let expected = if a == b || b == c {
                        RelevanceScore::ALL[b].value()
                    } else {
                        0.5
                    };
                    let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                    for p in perms {
                        let got = aggregate_majority(&[s[p[0]], s[p[1]], s[p[2]]]).unwrap();
                        assert_eq!(got, expected, "{s:?}");
                    }
                }
            }
        }
        assert_eq!(seen, 10);
    }

    #[test]
    fn score_serde_rejects_off_scale() {
        assert_eq!(serde_json::to_string(&P).unwrap(), "0.5");
        assert_eq!(serde_json::from_str::<RelevanceScore>("1").unwrap(), C);
        assert!(serde_json::from_str::<RelevanceScore>("0.7").is_err());
        assert!(RelevanceScore::try_from(0.25).is_err());
    }

    #[test]
    fn guidelines_cover_scale() {
        for s in ["0 – Not Related", "0.5 – Partially or Indirectly Related", "1 – Completely Related"] {
            assert!(GUIDELINES.contains(s));
        }
    }
}
