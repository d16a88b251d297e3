use std::collections::BTreeSet;
use std::io::{Read, Write};

use thiserror::Error;

use super::{Approach, GeneratedResult, ResultFlag};
use crate::corpus::StanceLabel;

#[derive(Debug, Error)]
pub enum ResultsCsvError {
    #[error("results row {row}: {message}")]
    Row { row: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

const HEADER: [&str; 7] = [
    "sample_id",
    "model_id",
    "approach",
    "repetition",
    "generated_target",
    "predicted_stance",
    "flags",
];

/// Writes results as CSV; flags are `;`-separated.
pub fn write_results<W: Write>(writer: W, results: &[GeneratedResult]) -> Result<(), ResultsCsvError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(HEADER)?;
    for r in results {
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            r.sample_id.as_str(),
            r.model_id.as_str(),
            r.approach.as_str(),
            &r.repetition.to_string(),
            r.generated_target.as_str(),
            r.predicted_stance.as_str(),
            &flags.join(";"),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_results<R: Read>(reader: R) -> Result<Vec<GeneratedResult>, ResultsCsvError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(ResultsCsvError::Row { row: 1, message: format!("unexpected header {header:?}") });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec?;
        let bad = |message: String| ResultsCsvError::Row { row, message };
        let approach: Approach = rec[2].parse().map_err(bad)?;
        let repetition: u32 = rec[3].parse().map_err(|e| bad(format!("repetition: {e}")))?;
        let predicted_stance: StanceLabel = rec[5].parse().map_err(|e: crate::corpus::UnknownStance| bad(e.to_string()))?;
        let flags = rec[6]
            .split(';')
            .filter(|f| !f.is_empty())
            .map(|f| f.parse::<ResultFlag>())
            .collect::<Result<BTreeSet<_>, _>>()
            .map_err(bad)?;
        if rec[4].trim().is_empty() {
            return Err(bad("empty generated_target".into()));
        }
        out.push(GeneratedResult {
            sample_id: rec[0].to_string(),
            model_id: rec[1].to_string(),
            approach,
            repetition,
            generated_target: rec[4].to_string(),
            predicted_stance,
            flags,
        });
    }
    Ok(out)
}
