//! Multi-target to single-target conversions for the VAST and EZSTANCE corpora.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, DatasetTag, MatchPolicy, Sample, StanceLabel};
use crate::gateway::{EmbeddingVector, Embedder};

/// One row of the raw VAST release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VastRawRecord {
    pub text: String,
    pub ori_topic: String,
    pub new_topic: String,
    pub stance: StanceLabel,
}

/// What makes two VAST rows members of the same duplicate group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VastGrouping {
    /// Rows sharing the same `ori_topic` string.
    #[default]
    OriTopic,
    /// Rows sharing both the text and the `ori_topic` string.
    TextAndOriTopic,
}

/// Groups keyed in first-appearance order.
fn group_indices<K, F>(len: usize, key: F) -> Vec<(K, Vec<usize>)>
where
    K: std::hash::Hash + Eq + Clone,
    F: Fn(usize) -> K,
{
    let mut order: Vec<(K, Vec<usize>)> = Vec::new();
    let mut slot: HashMap<K, usize> = HashMap::new();
    for i in 0..len {
        let k = key(i);
        match slot.get(&k) {
            Some(&pos) => order[pos].1.push(i),
            None => {
                slot.insert(k.clone(), order.len());
                order.push((k, vec![i]));
            }
        }
    }
    order
}

/// Most frequent stance in the group; ties go to the label seen first.
fn majority_stance(records: &[VastRawRecord], rows: &[usize]) -> StanceLabel {
    let mut counts: Vec<(StanceLabel, usize)> = Vec::new();
    for &r in rows {
        let stance = records[r].stance;
        match counts.iter_mut().find(|(s, _)| *s == stance) {
            Some((_, n)) => *n += 1,
            None => counts.push((stance, 1)),
        }
    }
    let best = counts.iter().map(|(_, n)| *n).max().unwrap_or(0);
    counts
        .into_iter()
        .find(|(_, n)| *n == best)
        .map(|(s, _)| s)
        .expect("group is non-empty")
}

/// Converts raw VAST rows into one sample per duplicate `ori_topic` group.
///
/// Within a group only rows carrying the majority stance survive; among those
/// the row whose `new_topic` has the highest mean cosine similarity to the
/// other surviving rows' topics is kept. Ties keep the earliest row.
/// Sample ids are the 1-based positions of the retained rows in `records`.
pub fn convert_vast_single_target(
    records: &[VastRawRecord],
    embedder: &dyn Embedder,
    grouping: VastGrouping,
    policy: MatchPolicy,
) -> Result<Dataset, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyInput("no VAST records"));
    }
    let groups = group_indices(records.len(), |i| match grouping {
        VastGrouping::OriTopic => (String::new(), records[i].ori_topic.clone()),
        VastGrouping::TextAndOriTopic => (records[i].text.clone(), records[i].ori_topic.clone()),
    });

    let mut embeddings: HashMap<String, EmbeddingVector> = HashMap::new();
    let mut samples = Vec::with_capacity(groups.len());
    for ((_, ori_topic), rows) in groups {
        let stance = majority_stance(records, &rows);
        let rows: Vec<usize> = rows.into_iter().filter(|&r| records[r].stance == stance).collect();
        let keep = if rows.len() == 1 {
            rows[0]
        } else {
            let missing: Vec<&str> = rows
                .iter()
                .map(|&r| records[r].new_topic.as_str())
                .filter(|t| !embeddings.contains_key(*t))
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            if !missing.is_empty() {
                let vectors = embedder.embed(&missing).map_err(|e| CorpusError::ConversionAborted {
                    group: ori_topic.clone(),
                    message: e.to_string(),
                })?;
                for (topic, v) in missing.iter().zip(vectors) {
                    embeddings.insert((*topic).to_string(), v);
                }
            }
            most_central_row(records, &rows, &embeddings).map_err(|message| {
                CorpusError::ConversionAborted { group: ori_topic.clone(), message }
            })?
        };
        let rec = &records[keep];
        let sample = Sample::new(
            (keep + 1).to_string(),
            rec.text.clone(),
            rec.new_topic.clone(),
            rec.stance,
            DatasetTag::Vast,
            policy,
        )
        .map_err(|e| CorpusError::Row { row: keep + 1, message: e.to_string() })?;
        samples.push(sample);
    }
    Dataset::new(DatasetTag::Vast, samples)
}

fn most_central_row(
    records: &[VastRawRecord],
    rows: &[usize],
    embeddings: &HashMap<String, EmbeddingVector>,
) -> Result<usize, String> {
    let vectors: Vec<&EmbeddingVector> = rows
        .iter()
        .map(|&r| &embeddings[&records[r].new_topic])
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for (i, vi) in vectors.iter().enumerate() {
        let mut total = 0.0;
        for (j, vj) in vectors.iter().enumerate() {
            if i == j {
                continue;
            }
            total += vi.cosine(vj).ok_or_else(|| {
                format!("zero-norm embedding for topic `{}`", records[rows[i]].new_topic)
            })?;
        }
        let mean = total / (vectors.len() - 1) as f64;
        if best.is_none_or(|(_, b)| mean > b) {
            best = Some((rows[i], mean));
        }
    }
    Ok(best.expect("at least two rows").0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetType {
    Claim,
    NounPhrase,
}

impl std::str::FromStr for TargetType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "claim" | "claims" => Ok(TargetType::Claim),
            "nounphrase" | "nounphrases" | "np" | "noun" => Ok(TargetType::NounPhrase),
            _ => Err(format!("unknown target type `{s}`")),
        }
    }
}

/// Subtask label, kept verbatim; subtasks are merged in first-appearance order.
pub type EzSubtask = String;

/// One EZSTANCE row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EzStanceRecord {
    pub id: Option<String>,
    pub text: String,
    pub target: String,
    pub stance: StanceLabel,
    pub subtask: EzSubtask,
    pub target_type: Option<TargetType>,
}

/// Collapses EZSTANCE into one sample per text.
///
/// Per subtask, a text carrying both claim and noun-phrase targets keeps its
/// first noun-phrase row (otherwise its first claim row). The subtasks are then
/// concatenated and deduplicated by text, first occurrence winning.
pub fn convert_ezstance(
    records: &[EzStanceRecord],
    policy: MatchPolicy,
) -> Result<Dataset, CorpusError> {
    if let Some(pos) = records.iter().position(|r| r.target_type.is_none()) {
        return Err(CorpusError::Row { row: pos + 1, message: "missing target type".into() });
    }
    let subtasks = group_indices(records.len(), |i| records[i].subtask.clone());

    let mut merged: Vec<usize> = Vec::new();
    let mut seen_text: HashMap<&str, ()> = HashMap::new();
    for (_, rows) in &subtasks {
        for (_, same_text) in group_indices(rows.len(), |k| records[rows[k]].text.as_str()) {
            let candidates: Vec<usize> = same_text.iter().map(|&k| rows[k]).collect();
            let chosen = candidates
                .iter()
                .copied()
                .find(|&r| records[r].target_type == Some(TargetType::NounPhrase))
                .unwrap_or(candidates[0]);
            if seen_text.insert(records[chosen].text.as_str(), ()).is_none() {
                merged.push(chosen);
            }
        }
    }

    let samples = merged
        .into_iter()
        .map(|r| {
            let rec = &records[r];
            let id = rec.id.clone().unwrap_or_else(|| format!("ez-{}", r + 1));
            Sample::new(
                id,
                rec.text.clone(),
                rec.target.clone(),
                rec.stance,
                DatasetTag::EzStance,
                policy,
            )
            .map_err(|e| CorpusError::Row { row: r + 1, message: e.to_string() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(DatasetTag::EzStance, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{GatewayError, HashingEmbedder};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn vast(text: &str, ori: &str, new: &str, stance: StanceLabel) -> VastRawRecord {
        VastRawRecord {
            text: text.into(),
            ori_topic: ori.into(),
            new_topic: new.into(),
            stance,
        }
    }

    #[test]
    fn single_row_group_retained_unchanged() {
        let recs = vec![vast("tax cuts help everyone", "tax", "tax cuts", StanceLabel::Favor)];
        let ds = convert_vast_single_target(
            &recs,
            &HashingEmbedder::default(),
            VastGrouping::OriTopic,
            MatchPolicy::AllLemmas,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        let s = &ds.samples()[0];
        assert_eq!((s.id.as_str(), s.gold_target.as_str()), ("1", "tax cuts"));
        assert_eq!(s.gold_stance, StanceLabel::Favor);
    }

    #[test]
    fn identical_new_topics_keep_first_row() {
        let recs = vec![
            vast("first text on guns", "guns", "gun control", StanceLabel::Against),
            vast("second text on guns", "guns", "gun control", StanceLabel::Against),
            vast("third text on guns", "guns", "gun control", StanceLabel::Against),
        ];
        let ds = convert_vast_single_target(
            &recs,
            &HashingEmbedder::default(),
            VastGrouping::OriTopic,
            MatchPolicy::AllLemmas,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples()[0].id, "1");
    }

    #[test]
    fn minority_stance_rows_filtered_before_similarity() {
        let recs = vec![
            vast("a", "econ", "economy", StanceLabel::Favor),
            vast("b", "econ", "economic growth", StanceLabel::Against),
            vast("c", "econ", "economic policy", StanceLabel::Against),
            vast("d", "econ", "stock market", StanceLabel::Against),
        ];
        let ds = convert_vast_single_target(
            &recs,
            &HashingEmbedder::default(),
            VastGrouping::OriTopic,
            MatchPolicy::AllLemmas,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        let kept = &ds.samples()[0];
        assert_eq!(kept.gold_stance, StanceLabel::Against);
        assert_ne!(kept.id, "1");
    }

    struct TableEmbedder(Vec<(&'static str, Vec<f64>)>);

    impl Embedder for TableEmbedder {
        fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
            Ok(texts
                .iter()
                .map(|t| {
                    let v = &self.0.iter().find(|(k, _)| k == t).expect("known topic").1;
                    EmbeddingVector::new(v.clone()).unwrap()
                })
                .collect())
        }
    }

    #[test]
    fn most_central_topic_wins() {
        // cos(policy, growth) = 0.8, cos(policy, market) = 0.6, cos(growth, market) = 0
        // mean: policy 0.7, growth 0.4, market 0.3
        let emb = TableEmbedder(vec![
            ("stock market", vec![0.0, 1.0]),
            ("economic policy", vec![0.8, 0.6]),
            ("economic growth", vec![1.0, 0.0]),
        ]);
        let recs = vec![
            vast("x", "econ", "stock market", StanceLabel::None),
            vast("y", "econ", "economic growth", StanceLabel::None),
            vast("z", "econ", "economic policy", StanceLabel::None),
        ];
        let ds = convert_vast_single_target(&recs, &emb, VastGrouping::OriTopic, MatchPolicy::AllLemmas)
            .unwrap();
        assert_eq!(ds.samples()[0].gold_target, "economic policy");
        assert_eq!(ds.samples()[0].id, "3");
    }

    #[test]
    fn zero_norm_topic_aborts_group() {
        let emb = TableEmbedder(vec![("a", vec![0.0, 0.0]), ("b", vec![1.0, 0.0])]);
        let recs = vec![
            vast("x", "g", "a", StanceLabel::None),
            vast("y", "g", "b", StanceLabel::None),
        ];
        assert!(matches!(
            convert_vast_single_target(&recs, &emb, VastGrouping::OriTopic, MatchPolicy::AllLemmas),
            Err(CorpusError::ConversionAborted { .. })
        ));
    }

    #[test]
    fn output_has_one_row_per_group() {
        let recs = vec![
            vast("t1", "a", "alpha", StanceLabel::Favor),
            vast("t2", "b", "beta", StanceLabel::Favor),
            vast("t3", "a", "alpha two", StanceLabel::Favor),
            vast("t4", "c", "gamma", StanceLabel::None),
            vast("t5", "b", "beta two", StanceLabel::Against),
        ];
        let ds = convert_vast_single_target(
            &recs,
            &HashingEmbedder::default(),
            VastGrouping::OriTopic,
            MatchPolicy::AllLemmas,
        )
        .unwrap();
        assert_eq!(ds.len(), 3);
        let by_text = convert_vast_single_target(
            &recs,
            &HashingEmbedder::default(),
            VastGrouping::TextAndOriTopic,
            MatchPolicy::AllLemmas,
        )
        .unwrap();
        assert_eq!(by_text.len(), 5);
    }

    struct FailingEmbedder(AtomicUsize);

    impl Embedder for FailingEmbedder {
        fn embed(&self, _texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Err(GatewayError::Transport { status: None, message: "offline".into() })
        }
    }

    #[test]
    fn embedder_failure_names_group() {
        let recs = vec![
            vast("t1", "solo", "alpha", StanceLabel::Favor),
            vast("t2", "pair", "beta", StanceLabel::Favor),
            vast("t3", "pair", "beta two", StanceLabel::Favor),
        ];
        let emb = FailingEmbedder(AtomicUsize::new(0));
        let err = convert_vast_single_target(&recs, &emb, VastGrouping::OriTopic, MatchPolicy::AllLemmas)
            .unwrap_err();
        match err {
            CorpusError::ConversionAborted { group, .. } => assert_eq!(group, "pair"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(emb.0.load(Ordering::SeqCst), 1);
    }

    fn ez(text: &str, target: &str, subtask: &str, tt: Option<TargetType>) -> EzStanceRecord {
        EzStanceRecord {
            id: None,
            text: text.into(),
            target: target.into(),
            stance: StanceLabel::Favor,
            subtask: subtask.into(),
            target_type: tt,
        }
    }

    #[test]
    fn noun_phrase_preferred_over_claim() {
        let recs = vec![
            ez("vaccines save lives", "vaccines save lives daily", "A", Some(TargetType::Claim)),
            ez("vaccines save lives", "vaccines", "A", Some(TargetType::NounPhrase)),
        ];
        let ds = convert_ezstance(&recs, MatchPolicy::AllLemmas).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples()[0].gold_target, "vaccines");
        assert_eq!(ds.samples()[0].id, "ez-2");
    }

    #[test]
    fn subtasks_merged_first_occurrence_wins() {
        let recs = vec![
            ez("text one about taxes", "taxes", "target-based", Some(TargetType::NounPhrase)),
            ez("text two about guns", "guns", "target-based", Some(TargetType::Claim)),
            ez("text one about taxes", "tax policy", "domain-based", Some(TargetType::NounPhrase)),
            ez("text three about cars", "cars", "domain-based", Some(TargetType::NounPhrase)),
            ez("text two about guns", "guns", "target-based", Some(TargetType::Claim)),
        ];
        let ds = convert_ezstance(&recs, MatchPolicy::AllLemmas).unwrap();
        let targets: Vec<&str> = ds.samples().iter().map(|s| s.gold_target.as_str()).collect();
        assert_eq!(targets, vec!["taxes", "guns", "cars"]);
    }

    #[test]
    fn missing_target_type_is_row_error() {
        let recs = vec![
            ez("a b", "a", "A", Some(TargetType::Claim)),
            ez("c d", "c", "A", None),
        ];
        assert!(matches!(
            convert_ezstance(&recs, MatchPolicy::AllLemmas),
            Err(CorpusError::Row { row: 2, .. })
        ));
    }

    #[test]
    fn target_type_parsing() {
        assert_eq!("noun-phrase".parse::<TargetType>().unwrap(), TargetType::NounPhrase);
        assert_eq!("Noun Phrase".parse::<TargetType>().unwrap(), TargetType::NounPhrase);
        assert_eq!("claim".parse::<TargetType>().unwrap(), TargetType::Claim);
        assert!("topic".parse::<TargetType>().is_err());
    }
}
