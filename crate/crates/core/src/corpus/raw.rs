//! Readers for the raw multi-target releases fed to the converters.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{column_index, CorpusError, EzStanceRecord, StanceLabel, TargetType, VastRawRecord};

/// Stance labels as they appear in the raw corpora: the three canonical
/// words, VAST's numeric codes (0 con, 1 pro, 2 neutral), and common synonyms.
pub fn parse_raw_stance(raw: &str) -> Option<StanceLabel> {
    if let Ok(s) = raw.parse() {
        return Some(s);
    }
    match raw.trim().to_ascii_lowercase().as_str() {
        "0" | "con" | "against" => Some(StanceLabel::Against),
        "1" | "pro" | "favor" | "favour" => Some(StanceLabel::Favor),
        "2" | "neutral" | "none" => Some(StanceLabel::None),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VastColumns {
    pub text: String,
    pub ori_topic: String,
    pub new_topic: String,
    pub stance: String,
}

impl Default for VastColumns {
    fn default() -> Self {
        VastColumns {
            text: "post".into(),
            ori_topic: "ori_topic".into(),
            new_topic: "new_topic".into(),
            stance: "label".into(),
        }
    }
}

pub fn read_vast_raw<R: Read>(reader: R, columns: &VastColumns) -> Result<Vec<VastRawRecord>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let cols = [
        column_index(&headers, &columns.text)?,
        column_index(&headers, &columns.ori_topic)?,
        column_index(&headers, &columns.new_topic)?,
        column_index(&headers, &columns.stance)?,
    ];
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let f = |c: usize| rec.get(cols[c]).unwrap_or("").to_string();
        let stance = parse_raw_stance(&f(3))
            .ok_or_else(|| CorpusError::Row { row, message: format!("unknown stance label `{}`", f(3)) })?;
        out.push(VastRawRecord { text: f(0), ori_topic: f(1), new_topic: f(2), stance });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EzStanceColumns {
    /// Optional; rows get positional ids when absent from the file.
    pub id: String,
    pub text: String,
    pub target: String,
    pub stance: String,
    pub subtask: String,
    pub target_type: String,
}

impl Default for EzStanceColumns {
    fn default() -> Self {
        EzStanceColumns {
            id: "id".into(),
            text: "text".into(),
            target: "target".into(),
            stance: "stance".into(),
            subtask: "subtask".into(),
            target_type: "target_type".into(),
        }
    }
}

/// Reads EZSTANCE rows. An empty `target_type` cell becomes `None`, which
/// the converter rejects with the row number.
pub fn read_ezstance<R: Read>(reader: R, columns: &EzStanceColumns) -> Result<Vec<EzStanceRecord>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id = headers.iter().position(|h| h.trim() == columns.id);
    let text = column_index(&headers, &columns.text)?;
    let target = column_index(&headers, &columns.target)?;
    let stance = column_index(&headers, &columns.stance)?;
    let subtask = column_index(&headers, &columns.subtask)?;
    let target_type = column_index(&headers, &columns.target_type)?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        let f = |c: usize| rec.get(c).unwrap_or("");
        let bad = |message: String| CorpusError::Row { row, message };
        let label = parse_raw_stance(f(stance)).ok_or_else(|| bad(format!("unknown stance label `{}`", f(stance))))?;
        let tt = match f(target_type).trim() {
            "" => None,
            s => Some(s.parse::<TargetType>().map_err(bad)?),
        };
        out.push(EzStanceRecord {
            id: id.map(|c| f(c).to_string()).filter(|s| !s.is_empty()),
            text: f(text).to_string(),
            target: f(target).to_string(),
            stance: label,
            subtask: f(subtask).to_string(),
            target_type: tt,
        });
    }
    Ok(out)
}
