use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::StanceLabel;

/// Counts indexed by (gold, predicted), in FAVOR, AGAINST, NONE order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: &[(StanceLabel, StanceLabel)]) -> Self {
        let mut m = ConfusionMatrix::default();
        for &(gold, predicted) in pairs {
            m.add(gold, predicted);
        }
        m
    }

    pub fn add(&mut self, gold: StanceLabel, predicted: StanceLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn get(&self, gold: StanceLabel, predicted: StanceLabel) -> u64 {
        self.counts[gold.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// F1 of one class; 0 when the class is absent from gold and predictions.
    pub fn class_f1(&self, label: StanceLabel) -> f64 {
        let c = label.index();
        let tp = self.counts[c][c];
        let fp: u64 = (0..3).filter(|&g| g != c).map(|g| self.counts[g][c]).sum();
        let fn_: u64 = (0..3).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * tp) as f64 / denom as f64
        }
    }

    /// Unweighted mean of the three per-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        StanceLabel::ALL.iter().map(|&l| self.class_f1(l)).sum::<f64>() / 3.0
    }
}

/// Macro-averaged F1 over FAVOR, AGAINST and NONE, in [0, 1].
pub fn macro_f1(pairs: &[(StanceLabel, StanceLabel)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput("macro_f1"));
    }
    Ok(ConfusionMatrix::from_pairs(pairs).macro_f1())
}
