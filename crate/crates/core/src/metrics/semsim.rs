use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::gateway::{Embedder, EmbeddingVector};

/// Cosine similarity of the embeddings of two targets.
pub fn semsim(generated: &str, gold: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    let v = embedder.embed(&[generated, gold])?;
    cosine_named(&v[0], generated, &v[1], gold)
}

fn cosine_named(a: &EmbeddingVector, a_name: &str, b: &EmbeddingVector, b_name: &str) -> Result<f64, MetricError> {
    if a.norm() == 0.0 {
        return Err(MetricError::ZeroNorm(a_name.to_string()));
    }
    if b.norm() == 0.0 {
        return Err(MetricError::ZeroNorm(b_name.to_string()));
    }
    a.cosine(b).ok_or_else(|| MetricError::Undefined("embedding dimensions differ".into()))
}

/// SemSim for many (generated, gold) pairs, embedding each distinct string once.
pub fn semsim_batch(pairs: &[(&str, &str)], embedder: &dyn Embedder) -> Result<Vec<f64>, MetricError> {
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let distinct: Vec<&str> = pairs
        .iter()
        .flat_map(|(a, b)| [*a, *b])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let vectors = embedder.embed(&distinct)?;
    let table: HashMap<&str, &EmbeddingVector> = distinct.iter().copied().zip(vectors.iter()).collect();
    pairs
        .iter()
        .map(|(a, b)| cosine_named(table[a], a, table[b], b))
        .collect()
}

/// An ordered list of unique candidate targets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTargetList(Vec<String>);

impl CandidateTargetList {
    pub fn new(targets: Vec<String>) -> Result<Self, MetricError> {
        if targets.is_empty() {
            return Err(MetricError::EmptyInput("candidate target list"));
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = targets.iter().find(|t| !seen.insert(t.as_str())) {
            return Err(MetricError::Undefined(format!("duplicate candidate target `{dup}`")));
        }
        Ok(CandidateTargetList(targets))
    }

    /// The six TSE targets.
    pub fn tse() -> Self {
        CandidateTargetList(
            [
                "creationism",
                "gay rights",
                "climate change is a concern",
                "metoo movement",
                "merger of disney and fox",
                "lockdown in new york state",
            ]
            .map(String::from)
            .to_vec(),
        )
    }

    pub fn targets(&self) -> &[String] {
        &self.0
    }
}

/// The candidate most similar to `generated`; ties go to the earliest.
pub fn map_to_candidate_list(
    generated: &str,
    candidates: &CandidateTargetList,
    embedder: &dyn Embedder,
) -> Result<String, MetricError> {
    let mut inputs: Vec<&str> = vec![generated];
    inputs.extend(candidates.0.iter().map(String::as_str));
    let v = embedder.embed(&inputs)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, cand) in candidates.0.iter().enumerate() {
        let s = cosine_named(&v[0], generated, &v[i + 1], cand)?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, _) = best.expect("non-empty list");
    Ok(candidates.0[i].clone())
}
