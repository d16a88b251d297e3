use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::text::preprocess_tokens;
use super::{CorpusError, Explicitness};

/// How many gold-target lemmas must occur in the text for a sample to count
/// as explicit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchPolicy {
    /// Every target lemma, counted with multiplicity, occurs in the text.
    #[default]
    AllLemmas,
    /// At least one target lemma occurs in the text.
    AnyLemma,
}

fn multiset(tokens: Vec<String>) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

/// Decides whether the gold target is mentioned in the text.
pub fn classify_explicitness(
    text: &str,
    gold_target: &str,
    policy: MatchPolicy,
) -> Result<Explicitness, CorpusError> {
    let target = multiset(preprocess_tokens(gold_target));
    if target.is_empty() {
        return Err(CorpusError::EmptyTargetLemmas(gold_target.to_string()));
    }
    let text = multiset(preprocess_tokens(text));
    let present = |lemma: &String, need: &usize| text.get(lemma).is_some_and(|have| have >= need);
    let explicit = match policy {
        MatchPolicy::AllLemmas => target.iter().all(|(l, n)| present(l, n)),
        MatchPolicy::AnyLemma => target.keys().any(|l| text.contains_key(l)),
    };
    Ok(if explicit {
        Explicitness::Explicit
    } else {
        Explicitness::NonExplicit
    })
}
