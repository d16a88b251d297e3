use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AnnotationRecord, HumanEvalError, RelevanceScore};

type Key = (String, String, String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsertOutcome {
    Inserted,
    Updated,
    Unchanged,
}

/// Annotation records keyed by (sample_id, slot, annotator_id). When backed
/// by a file, every change rewrites it.
#[derive(Debug, Default)]
pub struct AnnotationStore {
    path: Option<PathBuf>,
    records: Mutex<BTreeMap<Key, AnnotationRecord>>,
}

fn key(r: &AnnotationRecord) -> Key {
    (r.sample_id.clone(), r.slot.clone(), r.annotator_id.clone())
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens the CSV at `path`, creating it on first write.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, HumanEvalError> {
        let path = path.as_ref().to_path_buf();
        let store = AnnotationStore { path: Some(path.clone()), records: Mutex::default() };
        if path.exists() {
            let records = read_annotations(std::fs::File::open(&path)?)?;
            let mut map = store.records.lock().expect("store lock poisoned");
            for r in records {
                map.insert(key(&r), r);
            }
        }
        Ok(store)
    }

    /// Inserts or replaces a record. A record whose score matches the
    /// stored one leaves the store untouched.
    pub fn upsert(&self, record: AnnotationRecord) -> Result<UpsertOutcome, HumanEvalError> {
        let mut map = self.records.lock().expect("store lock poisoned");
        let outcome = match map.get(&key(&record)) {
            Some(old) if old.score == record.score => return Ok(UpsertOutcome::Unchanged),
            Some(_) => UpsertOutcome::Updated,
            None => UpsertOutcome::Inserted,
        };
        map.insert(key(&record), record);
        if let Some(path) = &self.path {
            let tmp = path.with_extension("csv.tmp");
            write_annotations(std::fs::File::create(&tmp)?, map.values())?;
            std::fs::rename(&tmp, path)?;
        }
        Ok(outcome)
    }

    pub fn import(&self, records: Vec<AnnotationRecord>) -> Result<usize, HumanEvalError> {
        let mut changed = 0;
        for r in records {
            if self.upsert(r)? != UpsertOutcome::Unchanged {
                changed += 1;
            }
        }
        Ok(changed)
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.records.lock().expect("store lock poisoned").values().cloned().collect()
    }

    pub fn records_for(&self, annotator_id: &str) -> Vec<AnnotationRecord> {
        self.records
            .lock()
            .expect("store lock poisoned")
            .values()
            .filter(|r| r.annotator_id == annotator_id)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("store lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Writes `sample_id,slot,annotator_id,score,timestamp`.
pub fn write_annotations<'a, W: Write>(
    writer: W,
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
) -> Result<(), HumanEvalError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "slot", "annotator_id", "score", "timestamp"])?;
    for r in records {
        w.write_record([&r.sample_id, &r.slot, &r.annotator_id, &r.score.to_string(), &r.timestamp])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads annotation CSV by header name; `timestamp` is optional.
pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, HumanEvalError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let missing = |name: &str| HumanEvalError::Row { row: 1, message: format!("missing column `{name}`") };
    let (si, sl, an, sc) = (
        col("sample_id").ok_or_else(|| missing("sample_id"))?,
        col("slot").ok_or_else(|| missing("slot"))?,
        col("annotator_id").ok_or_else(|| missing("annotator_id"))?,
        col("score").ok_or_else(|| missing("score"))?,
    );
    let ts = col("timestamp");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| HumanEvalError::Row { row: i + 2, message };
        let value: f64 = rec[sc].trim().parse().map_err(|e| bad(format!("score: {e}")))?;
        let score = RelevanceScore::try_from(value).map_err(|e| bad(e.to_string()))?;
        out.push(AnnotationRecord {
            sample_id: rec[si].to_string(),
            slot: rec[sl].to_string(),
            annotator_id: rec[an].to_string(),
            score,
            timestamp: ts.and_then(|t| rec.get(t)).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(annotator: &str, score: RelevanceScore) -> AnnotationRecord {
        AnnotationRecord {
            sample_id: "1".into(),
            slot: "T1".into(),
            annotator_id: annotator.into(),
            score,
            timestamp: "t".into(),
        }
    }

    #[test]
    fn upsert_is_idempotent() {
        let s = AnnotationStore::in_memory();
        assert_eq!(s.upsert(rec("a", RelevanceScore::Complete)).unwrap(), UpsertOutcome::Inserted);
        assert_eq!(s.upsert(rec("a", RelevanceScore::Complete)).unwrap(), UpsertOutcome::Unchanged);
        assert_eq!(s.upsert(rec("a", RelevanceScore::Partial)).unwrap(), UpsertOutcome::Updated);
        assert_eq!(s.upsert(rec("b", RelevanceScore::Partial)).unwrap(), UpsertOutcome::Inserted);
        assert_eq!(s.len(), 2);
        assert_eq!(s.records_for("a")[0].score, RelevanceScore::Partial);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.csv");
        let s = AnnotationStore::open(&path).unwrap();
        s.upsert(rec("a", RelevanceScore::Partial)).unwrap();
        s.upsert(rec("b", RelevanceScore::NotRelated)).unwrap();
        drop(s);
        let s = AnnotationStore::open(&path).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.records()[0].score, RelevanceScore::Partial);
    }

    #[test]
    fn plain_csv_import() {
        let text = "sample_id,slot,annotator_id,score\n1,T1,a,0.5\n1,T2,a,1\n";
        let records = read_annotations(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].score, RelevanceScore::Complete);
        let bad = "sample_id,slot,annotator_id,score\n1,T1,a,0.7\n";
        assert!(matches!(read_annotations(bad.as_bytes()), Err(HumanEvalError::Row { row: 2, .. })));
    }
}
