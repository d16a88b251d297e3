use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Approach;
use crate::corpus::Explicitness;

/// Which cell of the results grid a metric value belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetricKey {
    pub dataset: String,
    pub model_id: String,
    pub approach: Approach,
    pub explicitness: Explicitness,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatedMetric {
    pub key: MetricKey,
    /// Index `r - 1` holds repetition `r`.
    pub per_repetition: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("{key:?}: missing repetitions {missing:?} of {expected}")]
    MissingRepetitions { key: MetricKey, missing: Vec<u32>, expected: u32 },
    #[error("{key:?}: repetition {repetition} outside 1..={expected}")]
    OutOfRange { key: MetricKey, repetition: u32, expected: u32 },
    #[error("{key:?}: repetition {repetition} given twice")]
    Duplicate { key: MetricKey, repetition: u32 },
}

/// Averages each key's values over repetitions `1..=repetitions`. Every
/// repetition must be present exactly once.
pub fn aggregate_repetitions(
    values: &[(MetricKey, u32, f64)],
    repetitions: u32,
) -> Result<Vec<AggregatedMetric>, AggregateError> {
    let mut grouped: BTreeMap<&MetricKey, BTreeMap<u32, f64>> = BTreeMap::new();
    for (key, rep, value) in values {
        if *rep == 0 || *rep > repetitions {
            return Err(AggregateError::OutOfRange { key: key.clone(), repetition: *rep, expected: repetitions });
        }
        if grouped.entry(key).or_default().insert(*rep, *value).is_some() {
            return Err(AggregateError::Duplicate { key: key.clone(), repetition: *rep });
        }
    }
    grouped
        .into_iter()
        .map(|(key, reps)| {
            let missing: Vec<u32> = (1..=repetitions).filter(|r| !reps.contains_key(r)).collect();
            if !missing.is_empty() {
                return Err(AggregateError::MissingRepetitions { key: key.clone(), missing, expected: repetitions });
            }
            let per_repetition: Vec<f64> = reps.into_values().collect();
            let mean = per_repetition.iter().sum::<f64>() / per_repetition.len() as f64;
            Ok(AggregatedMetric { key: key.clone(), per_repetition, mean })
        })
        .collect()
}
