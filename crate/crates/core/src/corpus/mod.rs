//! Stance corpora: the single-target sample schema, CSV ingestion,
//! explicitness classification and the dataset conversion procedures.

mod convert;
mod explicitness;
mod raw;
mod sampling;
pub mod text;

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use convert::{
    convert_ezstance, convert_vast_single_target, EzStanceRecord, EzSubtask, TargetType,
    VastGrouping, VastRawRecord,
};
pub use explicitness::{classify_explicitness, MatchPolicy};
pub use raw::{parse_raw_stance, read_ezstance, read_vast_raw, EzStanceColumns, VastColumns};
pub use sampling::stratified_human_eval_sample;
pub use text::preprocess_tokens;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("schema error: column `{0}` not found in header")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("cannot classify explicitness: target `{0}` has no content words")]
    EmptyTargetLemmas(String),
    #[error("embedding failed for ori_topic group `{group}`: {message}")]
    ConversionAborted { group: String, message: String },
    #[error("{stratum} stratum has {available} samples, {requested} requested (short by {})", requested - available)]
    InsufficientStratum {
        stratum: Explicitness,
        available: usize,
        requested: usize,
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Three-way stance label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StanceLabel {
    Favor,
    Against,
    None,
}

impl StanceLabel {
    pub const ALL: [StanceLabel; 3] = [StanceLabel::Favor, StanceLabel::Against, StanceLabel::None];

    pub fn as_str(self) -> &'static str {
        match self {
            StanceLabel::Favor => "FAVOR",
            StanceLabel::Against => "AGAINST",
            StanceLabel::None => "NONE",
        }
    }

    pub fn index(self) -> usize {
        match self {
            StanceLabel::Favor => 0,
            StanceLabel::Against => 1,
            StanceLabel::None => 2,
        }
    }
}

impl fmt::Display for StanceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown stance label `{0}`")]
pub struct UnknownStance(pub String);

impl FromStr for StanceLabel {
    type Err = UnknownStance;

    /// Case-insensitive; accepts exactly the three serialized words.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAVOR" => Ok(StanceLabel::Favor),
            "AGAINST" => Ok(StanceLabel::Against),
            "NONE" => Ok(StanceLabel::None),
            _ => Err(UnknownStance(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Explicitness {
    Explicit,
    NonExplicit,
}

impl Explicitness {
    pub const ALL: [Explicitness; 2] = [Explicitness::Explicit, Explicitness::NonExplicit];

    pub fn as_str(self) -> &'static str {
        match self {
            Explicitness::Explicit => "explicit",
            Explicitness::NonExplicit => "non-explicit",
        }
    }

    pub fn flag(self) -> &'static str {
        match self {
            Explicitness::Explicit => "1",
            Explicitness::NonExplicit => "0",
        }
    }
}

impl fmt::Display for Explicitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Explicitness {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "explicit" | "1" => Ok(Explicitness::Explicit),
            "non-explicit" | "nonexplicit" | "non_explicit" | "0" => Ok(Explicitness::NonExplicit),
            other => Err(format!("unknown explicitness `{other}`")),
        }
    }
}

/// Which corpus a dataset came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetTag {
    Tse,
    Vast,
    EzStance,
    Custom(String),
}

impl DatasetTag {
    pub fn parse(name: &str) -> Self {
        match name.to_ascii_lowercase().as_str() {
            "tse" => DatasetTag::Tse,
            "vast" => DatasetTag::Vast,
            "ezstance" | "ez-stance" => DatasetTag::EzStance,
            _ => DatasetTag::Custom(name.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DatasetTag::Tse => "TSE",
            DatasetTag::Vast => "VAST",
            DatasetTag::EzStance => "EZSTANCE",
            DatasetTag::Custom(name) => name,
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One corpus item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub gold_target: String,
    pub gold_stance: StanceLabel,
    pub explicitness: Explicitness,
    pub dataset: DatasetTag,
}

impl Sample {
    /// Builds a sample, deriving its explicitness from text and target.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        gold_target: impl Into<String>,
        gold_stance: StanceLabel,
        dataset: DatasetTag,
        policy: MatchPolicy,
    ) -> Result<Self, CorpusError> {
        let text = text.into();
        let gold_target = gold_target.into();
        let explicitness = classify_explicitness(&text, &gold_target, policy)?;
        Ok(Sample {
            id: id.into(),
            text,
            gold_target,
            gold_stance,
            explicitness,
            dataset,
        })
    }
}

/// An ordered, id-unique collection of samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: DatasetTag,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(name: DatasetTag, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Dataset { name, samples })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Samples of one explicitness stratum, order preserved.
    pub fn stratum(&self, explicitness: Explicitness) -> Dataset {
        Dataset {
            name: self.name.clone(),
            samples: self
                .samples
                .iter()
                .filter(|s| s.explicitness == explicitness)
                .cloned()
                .collect(),
        }
    }

    /// (explicit, non-explicit) counts.
    pub fn split_counts(&self) -> (usize, usize) {
        let explicit = self
            .samples
            .iter()
            .filter(|s| s.explicitness == Explicitness::Explicit)
            .count();
        (explicit, self.samples.len() - explicit)
    }

    pub fn distinct_targets(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.gold_target.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Header names for the four input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub id: String,
    pub text: String,
    pub target: String,
    pub stance: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            id: "id".into(),
            text: "text".into(),
            target: "target".into(),
            stance: "stance".into(),
        }
    }
}

pub(crate) fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, CorpusError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
}

/// Loads a CSV dataset, computing explicitness for every row.
pub fn load_dataset(
    path: impl AsRef<Path>,
    name: DatasetTag,
    columns: &ColumnMapping,
    policy: MatchPolicy,
) -> Result<Dataset, CorpusError> {
    let file = std::fs::File::open(path)?;
    read_dataset(file, name, columns, policy)
}

pub fn read_dataset<R: Read>(
    reader: R,
    name: DatasetTag,
    columns: &ColumnMapping,
    policy: MatchPolicy,
) -> Result<Dataset, CorpusError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = column_index(&headers, &columns.id)?;
    let text_col = column_index(&headers, &columns.text)?;
    let target_col = column_index(&headers, &columns.target)?;
    let stance_col = column_index(&headers, &columns.stance)?;

    let mut samples = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record?;
        let field = |idx: usize| record.get(idx).unwrap_or("");
        let id = field(id_col).trim();
        let text = field(text_col);
        let target = field(target_col).trim();
        if id.is_empty() {
            return Err(CorpusError::Row { row, message: "empty id".into() });
        }
        if text.trim().is_empty() {
            return Err(CorpusError::Row { row, message: "empty text".into() });
        }
        if target.is_empty() {
            return Err(CorpusError::Row { row, message: "empty target".into() });
        }
        let stance: StanceLabel = field(stance_col)
            .parse()
            .map_err(|e: UnknownStance| CorpusError::Row { row, message: e.to_string() })?;
        let sample = Sample::new(id, text, target, stance, name.clone(), policy).map_err(|e| {
            CorpusError::Row { row, message: e.to_string() }
        })?;
        samples.push(sample);
    }
    Dataset::new(name, samples)
}

/// Writes `id,text,target,stance,explicit`.
pub fn write_dataset<W: Write>(writer: W, dataset: &Dataset) -> Result<(), CorpusError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["id", "text", "target", "stance", "explicit"])?;
    for s in dataset.samples() {
        wtr.write_record([
            s.id.as_str(),
            s.text.as_str(),
            s.gold_target.as_str(),
            s.gold_stance.as_str(),
            s.explicitness.flag(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path)?;
    write_dataset(std::io::BufWriter::new(file), dataset)
}
