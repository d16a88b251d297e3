//! Evaluation statistics: stance macro-F1 (SC), target similarity
//! (SemSim), classifier-based target quality (BTSD), rank correlation and
//! inter-annotator agreement.

mod agreement;
mod btsd;
mod f1;
mod rank;
mod semsim;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Explicitness};
use crate::gateway::{Embedder, GatewayError};
use crate::pipeline::{Approach, GeneratedResult, MetricKey};

pub use agreement::{
    fleiss_kappa, krippendorff_alpha, scale_index, AlphaDistance, AnnotationMatrix, SCALE,
};
pub use btsd::{
    btsd, calibration_ladder, input_sequence, ladder_is_ordered, perturb_targets, BtsdItem,
    HttpStanceClassifier, LadderRow, PerturbMode, StanceClassifier,
};
pub use f1::{macro_f1, ConfusionMatrix};
pub use rank::kendall_tau;
pub use semsim::{map_to_candidate_list, semsim, semsim_batch, CandidateTargetList};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("score {0} is not on the 0 / 0.5 / 1 scale")]
    OffScale(f64),
    #[error("embedding of `{0}` has zero norm")]
    ZeroNorm(String),
    #[error("classifier failed on sample {sample_id}: {message}")]
    Classifier { sample_id: String, message: String },
    #[error("result references unknown sample `{0}`")]
    UnknownSample(String),
    #[error("scores file row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One metric value for one configuration, stratum and repetition.
/// SS lies in [-1, 1]; SC, BTSD are percentages; HE lies in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub dataset: String,
    pub model_id: String,
    pub approach: Approach,
    pub explicitness: Explicitness,
    pub metric: String,
    pub repetition: u32,
    pub value: f64,
}

impl ScoreRow {
    pub fn key(&self) -> MetricKey {
        MetricKey {
            dataset: self.dataset.clone(),
            model_id: self.model_id.clone(),
            approach: self.approach,
            explicitness: self.explicitness,
            metric: self.metric.clone(),
        }
    }
}

type Cell = (String, Approach, Explicitness, u32);

/// SS, SC and (with a classifier) BTSD per model, approach, stratum and
/// repetition.
pub fn score_results(
    results: &[GeneratedResult],
    dataset: &Dataset,
    embedder: &dyn Embedder,
    classifier: Option<&dyn StanceClassifier>,
) -> Result<Vec<ScoreRow>, MetricError> {
    let mut cells: BTreeMap<Cell, Vec<&GeneratedResult>> = BTreeMap::new();
    for r in results {
        let sample = dataset.get(&r.sample_id).ok_or_else(|| MetricError::UnknownSample(r.sample_id.clone()))?;
        cells
            .entry((r.model_id.clone(), r.approach, sample.explicitness, r.repetition))
            .or_default()
            .push(r);
    }
    let name = dataset.name.name().to_string();
    let mut rows = Vec::new();
    for ((model_id, approach, explicitness, repetition), members) in cells {
        let samples: Vec<_> = members.iter().map(|r| dataset.get(&r.sample_id).expect("checked")).collect();
        let mut push = |metric: &str, value: f64| {
            rows.push(ScoreRow {
                dataset: name.clone(),
                model_id: model_id.clone(),
                approach,
                explicitness,
                metric: metric.to_string(),
                repetition,
                value,
            })
        };
        let pairs: Vec<(&str, &str)> = members
            .iter()
            .zip(&samples)
            .map(|(r, s)| (r.generated_target.as_str(), s.gold_target.as_str()))
            .collect();
        let sims = semsim_batch(&pairs, embedder)?;
        push("SS", sims.iter().sum::<f64>() / sims.len() as f64);
        if let Some(clf) = classifier {
            let items: Vec<BtsdItem<'_>> = members
                .iter()
                .zip(&samples)
                .map(|(r, s)| BtsdItem {
                    sample_id: &s.id,
                    target: &r.generated_target,
                    text: &s.text,
                    gold: s.gold_stance,
                })
                .collect();
            push("BTSD", btsd(&items, clf)? * 100.0);
        }
        let stance_pairs: Vec<_> = members.iter().zip(&samples).map(|(r, s)| (s.gold_stance, r.predicted_stance)).collect();
        push("SC", macro_f1(&stance_pairs)? * 100.0);
    }
    Ok(rows)
}

const SCORE_HEADER: [&str; 7] = ["dataset", "model_id", "approach", "explicitness", "metric", "repetition", "value"];

pub fn write_scores<W: Write>(writer: W, rows: &[ScoreRow]) -> Result<(), MetricError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SCORE_HEADER)?;
    for r in rows {
        w.write_record([
            r.dataset.as_str(),
            &r.model_id,
            r.approach.as_str(),
            r.explicitness.as_str(),
            &r.metric,
            &r.repetition.to_string(),
            &format!("{:.6}", r.value),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_scores<R: Read>(reader: R) -> Result<Vec<ScoreRow>, MetricError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| MetricError::Row { row: i + 2, message };
        if rec.len() != SCORE_HEADER.len() {
            return Err(bad(format!("expected {} fields", SCORE_HEADER.len())));
        }
        rows.push(ScoreRow {
            dataset: rec[0].to_string(),
            model_id: rec[1].to_string(),
            approach: rec[2].parse().map_err(bad)?,
            explicitness: rec[3].parse().map_err(bad)?,
            metric: rec[4].to_string(),
            repetition: rec[5].parse().map_err(|e| bad(format!("repetition: {e}")))?,
            value: rec[6].parse().map_err(|e| bad(format!("value: {e}")))?,
        });
    }
    Ok(rows)
}
