use std::collections::BTreeSet;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{macro_f1, MetricError};
use crate::corpus::text::{is_stop_word, word_tokens};
use crate::corpus::{Dataset, Explicitness, Sample, StanceLabel};
use crate::gateway::{AttemptError, GatewayError, RetryPolicy};

/// Classifier input: `[CLS] target [SEP] text`.
pub fn input_sequence(target: &str, text: &str) -> String {
    format!("[CLS] {target} [SEP] {text}")
}

/// A fixed stance classifier used as the judge of target quality.
pub trait StanceClassifier: Send + Sync {
    fn classify(&self, target: &str, text: &str) -> Result<StanceLabel, MetricError>;
}

/// Classifier behind HTTP. POSTs `{target, text, sequence}` and accepts
/// `{"label": ..}`, `{"stance": ..}` or a bare JSON string in reply.
pub struct HttpStanceClassifier {
    client: reqwest::blocking::Client,
    url: String,
    retry: RetryPolicy,
}

impl HttpStanceClassifier {
    pub fn new(url: &str, retry: RetryPolicy, timeout: Duration) -> Result<Self, MetricError> {
        reqwest::Url::parse(url)
            .map_err(|e| GatewayError::Config(format!("classifier url `{url}`: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpStanceClassifier { client, url: url.to_string(), retry })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<StanceLabel, AttemptError> {
        let resp = self
            .client
            .post(&self.url)
            .json(body)
            .send()
            .map_err(|e| AttemptError::transient(None, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| AttemptError::transient(Some(status), e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(AttemptError::from_status(status, text));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| AttemptError::fatal(None, format!("invalid JSON: {e}")))?;
        let label = value
            .as_str()
            .or_else(|| value.get("label").and_then(|v| v.as_str()))
            .or_else(|| value.get("stance").and_then(|v| v.as_str()))
            .ok_or_else(|| AttemptError::fatal(None, format!("no label in {text}")))?;
        label.parse().map_err(|e: crate::corpus::UnknownStance| AttemptError::fatal(None, e.to_string()))
    }
}

impl StanceClassifier for HttpStanceClassifier {
    fn classify(&self, target: &str, text: &str) -> Result<StanceLabel, MetricError> {
        let body = json!({ "target": target, "text": text, "sequence": input_sequence(target, text) });
        Ok(self.retry.run(|_| self.attempt(&body))?.0)
    }
}

/// One classifier input with its gold label.
#[derive(Debug, Clone, Copy)]
pub struct BtsdItem<'a> {
    pub sample_id: &'a str,
    pub target: &'a str,
    pub text: &'a str,
    pub gold: StanceLabel,
}

/// Macro-F1 (in [0, 1]) of the classifier given each item's target and text.
pub fn btsd(items: &[BtsdItem<'_>], classifier: &dyn StanceClassifier) -> Result<f64, MetricError> {
    let mut pairs = Vec::with_capacity(items.len());
    for item in items {
        let predicted = classifier.classify(item.target, item.text).map_err(|e| MetricError::Classifier {
            sample_id: item.sample_id.to_string(),
            message: e.to_string(),
        })?;
        pairs.push((item.gold, predicted));
    }
    macro_f1(&pairs)
}

/// Degraded-target generators for calibrating BTSD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// Drop the last word; a one-word target has its word replaced.
    AlterGold,
    /// The gold target of another sample whose target differs.
    IncorrectTarget,
    /// Random content words from the texts, as many as the gold target has.
    RandomVocab,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 3] =
        [PerturbMode::AlterGold, PerturbMode::IncorrectTarget, PerturbMode::RandomVocab];

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbMode::AlterGold => "alter_gold",
            PerturbMode::IncorrectTarget => "incorrect_target",
            PerturbMode::RandomVocab => "random_vocab",
        }
    }
}

impl FromStr for PerturbMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown perturbation `{s}`"))
    }
}

/// Sorted content-word vocabulary of the sample texts.
fn vocabulary(samples: &[Sample]) -> Vec<String> {
    samples
        .iter()
        .flat_map(|s| word_tokens(&s.text))
        .filter(|w| !is_stop_word(w))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// One perturbed target per sample, in sample order; deterministic per seed.
pub fn perturb_targets(samples: &[Sample], mode: PerturbMode, seed: u64) -> Result<Vec<String>, MetricError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        PerturbMode::AlterGold => {
            let vocab = vocabulary(samples);
            samples
                .iter()
                .map(|s| {
                    let words: Vec<&str> = s.gold_target.split_whitespace().collect();
                    if words.len() > 1 {
                        return Ok(words[..words.len() - 1].join(" "));
                    }
                    let original = s.gold_target.trim().to_lowercase();
                    let options: Vec<&String> = vocab.iter().filter(|w| **w != original).collect();
                    if options.is_empty() {
                        return Err(MetricError::Undefined(format!(
                            "no replacement word for target `{}`",
                            s.gold_target
                        )));
                    }
                    Ok(options[rng.random_range(0..options.len())].clone())
                })
                .collect()
        }
        PerturbMode::IncorrectTarget => {
            let distinct: BTreeSet<String> = samples.iter().map(|s| s.gold_target.to_lowercase()).collect();
            if distinct.len() < 2 {
                return Err(MetricError::Undefined(
                    "incorrect_target needs at least two distinct gold targets".into(),
                ));
            }
            Ok(samples
                .iter()
                .map(|s| {
                    let own = s.gold_target.to_lowercase();
                    let others: Vec<&Sample> =
                        samples.iter().filter(|o| o.gold_target.to_lowercase() != own).collect();
                    others[rng.random_range(0..others.len())].gold_target.clone()
                })
                .collect())
        }
        PerturbMode::RandomVocab => {
            let vocab = vocabulary(samples);
            if vocab.is_empty() {
                return Err(MetricError::EmptyInput("random_vocab vocabulary"));
            }
            Ok(samples
                .iter()
                .map(|s| {
                    let n = s.gold_target.split_whitespace().count().max(1);
                    (0..n)
                        .map(|_| vocab[rng.random_range(0..vocab.len())].as_str())
                        .collect::<Vec<_>>()
                        .join(" ")
                })
                .collect())
        }
    }
}

/// One rung of the calibration ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub explicitness: Explicitness,
    /// `tweet_only`, `gold`, or a [`PerturbMode`] name.
    pub input: String,
    /// Macro-F1 in percent.
    pub f1: f64,
}

/// BTSD with no target, the gold target and each perturbation, per
/// explicitness stratum.
pub fn calibration_ladder(
    dataset: &Dataset,
    classifier: &dyn StanceClassifier,
    seed: u64,
) -> Result<Vec<LadderRow>, MetricError> {
    let mut rows = Vec::new();
    for explicitness in Explicitness::ALL {
        let stratum = dataset.stratum(explicitness);
        let samples = stratum.samples();
        if samples.is_empty() {
            continue;
        }
        let score = |targets: &[String]| -> Result<f64, MetricError> {
            let items: Vec<BtsdItem<'_>> = samples
                .iter()
                .zip(targets)
                .map(|(s, t)| BtsdItem { sample_id: &s.id, target: t, text: &s.text, gold: s.gold_stance })
                .collect();
            Ok(btsd(&items, classifier)? * 100.0)
        };
        let mut push = |input: &str, f1: f64| rows.push(LadderRow { explicitness, input: input.into(), f1 });
        push("tweet_only", score(&vec![String::new(); samples.len()])?);
        let gold: Vec<String> = samples.iter().map(|s| s.gold_target.clone()).collect();
        push("gold", score(&gold)?);
        for mode in PerturbMode::ALL {
            push(mode.as_str(), score(&perturb_targets(samples, mode, seed)?)?);
        }
    }
    Ok(rows)
}

/// Whether gold > alter_gold > incorrect_target > random_vocab holds in
/// every stratum present.
pub fn ladder_is_ordered(rows: &[LadderRow]) -> bool {
    let order = ["gold", "alter_gold", "incorrect_target", "random_vocab"];
    Explicitness::ALL.iter().all(|&e| {
        let values: Vec<f64> = order
            .iter()
            .filter_map(|name| rows.iter().find(|r| r.explicitness == e && r.input == *name).map(|r| r.f1))
            .collect();
        values.is_empty() || (values.len() == order.len() && values.windows(2).all(|w| w[0] > w[1]))
    })
}
