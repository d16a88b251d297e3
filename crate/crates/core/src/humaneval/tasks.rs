use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HumanEvalError;
use crate::corpus::{Dataset, StanceLabel};
use crate::pipeline::{Approach, GeneratedResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSlot {
    /// `T1`, `T2`, ...
    pub slot: String,
    pub target: String,
}

/// What an annotator sees for one sample. Carries no model identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub sample_id: String,
    pub text: String,
    pub gold_target: String,
    pub gold_stance: StanceLabel,
    pub slots: Vec<TaskSlot>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBundle {
    pub seed: u64,
    pub tasks: Vec<AnnotationTask>,
}

impl TaskBundle {
    pub fn task(&self, sample_id: &str) -> Option<&AnnotationTask> {
        self.tasks.iter().find(|t| t.sample_id == sample_id)
    }

    pub fn has_slot(&self, sample_id: &str, slot: &str) -> bool {
        self.task(sample_id).is_some_and(|t| t.slots.iter().any(|s| s.slot == slot))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    pub sample_id: String,
    pub slot: String,
    pub model_id: String,
    pub approach: Approach,
}

/// Slot to configuration mapping, kept apart from the bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedKey {
    pub seed: u64,
    pub repetition: u32,
    pub entries: Vec<KeyEntry>,
}

impl SealedKey {
    pub fn lookup(&self, sample_id: &str, slot: &str) -> Option<&KeyEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id && e.slot == slot)
    }
}

/// Builds one task per sampled sample, with one slot per configuration in
/// a seeded random order. `configurations` defaults to every (model,
/// approach) pair present in `results`; targets come from `repetition`.
pub fn export_tasks(
    results: &[GeneratedResult],
    sampled: &Dataset,
    configurations: &[(String, Approach)],
    repetition: u32,
    seed: u64,
) -> Result<(TaskBundle, SealedKey), HumanEvalError> {
    let configs: Vec<(String, Approach)> = if configurations.is_empty() {
        results
            .iter()
            .map(|r| (r.model_id.clone(), r.approach))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        configurations.to_vec()
    };
    let index: HashMap<(&str, &str, Approach), &GeneratedResult> = results
        .iter()
        .filter(|r| r.repetition == repetition)
        .map(|r| ((r.sample_id.as_str(), r.model_id.as_str(), r.approach), r))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::with_capacity(sampled.len());
    let mut entries = Vec::new();
    for sample in sampled.samples() {
        let mut order: Vec<usize> = (0..configs.len()).collect();
        order.shuffle(&mut rng);
        let mut slots = Vec::with_capacity(configs.len());
        for (pos, &c) in order.iter().enumerate() {
            let (model_id, approach) = &configs[c];
            let result = index.get(&(sample.id.as_str(), model_id.as_str(), *approach)).ok_or_else(|| {
                HumanEvalError::MissingConfiguration {
                    sample_id: sample.id.clone(),
                    model_id: model_id.clone(),
                    approach: *approach,
                    repetition,
                }
            })?;
            let slot = format!("T{}", pos + 1);
            slots.push(TaskSlot { slot: slot.clone(), target: result.generated_target.clone() });
            entries.push(KeyEntry {
                sample_id: sample.id.clone(),
                slot,
                model_id: model_id.clone(),
                approach: *approach,
            });
        }
        tasks.push(AnnotationTask {
            sample_id: sample.id.clone(),
            text: sample.text.clone(),
            gold_target: sample.gold_target.clone(),
            gold_stance: sample.gold_stance,
            slots,
        });
    }
    Ok((TaskBundle { seed, tasks }, SealedKey { seed, repetition, entries }))
}
