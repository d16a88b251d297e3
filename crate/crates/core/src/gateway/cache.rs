use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

/// Cache key: SHA-256 over model id, both prompt halves and the repetition.
pub fn prompt_hash(model_id: &str, system_prompt: &str, user_content: &str, repetition: u32) -> String {
    let mut h = Sha256::new();
    for part in [model_id, system_prompt, user_content] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    h.update(repetition.to_le_bytes());
    hex::encode(h.finalize())
}

/// One cached exchange, serialized as a single JSON line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub sample_id: String,
    pub model_id: String,
    pub approach: String,
    pub step: String,
    pub repetition: u32,
    pub prompt_hash: String,
    pub response_text: String,
    pub timestamp: String,
}

struct Inner {
    index: HashMap<String, usize>,
    entries: Vec<CacheEntry>,
    writer: Option<BufWriter<File>>,
}

/// Append-only JSON-lines store of raw model responses.
///
/// Each `prompt_hash` is stored at most once. An unreadable trailing line,
/// as left by an interrupted write, is skipped on load.
pub struct ResponseCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ResponseCache {
    /// Cache that lives only in memory.
    pub fn in_memory() -> Self {
        ResponseCache {
            path: None,
            inner: Mutex::new(Inner { index: HashMap::new(), entries: Vec::new(), writer: None }),
        }
    }

    /// Opens (or creates) the file at `path`, loading existing entries.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, GatewayError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| GatewayError::Cache(e.to_string()))?;
            let lines: Vec<String> = BufReader::new(file)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(|e| GatewayError::Cache(e.to_string()))?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheEntry>(line) {
                    Ok(entry) => {
                        if !index.contains_key(&entry.prompt_hash) {
                            index.insert(entry.prompt_hash.clone(), entries.len());
                            entries.push(entry);
                        }
                    }
                    Err(e) if i == last => {
                        log::warn!("{}: dropping truncated last line: {e}", path.display());
                    }
                    Err(e) => {
                        return Err(GatewayError::Cache(format!(
                            "{} line {}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
            // rewrite so a truncated tail does not corrupt later appends
            let mut w = BufWriter::new(File::create(&path).map_err(|e| GatewayError::Cache(e.to_string()))?);
            for e in &entries {
                write_line(&mut w, e)?;
            }
            w.flush().map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| GatewayError::Cache(e.to_string()))?;
        Ok(ResponseCache {
            path: Some(path),
            inner: Mutex::new(Inner { index, entries, writer: Some(BufWriter::new(file)) }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, prompt_hash: &str) -> Option<CacheEntry> {
        let inner = self.inner.lock().expect("cache lock poisoned");
        inner.index.get(prompt_hash).map(|&i| inner.entries[i].clone())
    }

    pub fn contains(&self, prompt_hash: &str) -> bool {
        self.inner.lock().expect("cache lock poisoned").index.contains_key(prompt_hash)
    }

    /// Appends `entry` unless its hash is already present. Returns whether it
    /// was written.
    pub fn insert(&self, entry: CacheEntry) -> Result<bool, GatewayError> {
        let mut inner = self.inner.lock().expect("cache lock poisoned");
        if inner.index.contains_key(&entry.prompt_hash) {
            return Ok(false);
        }
        if let Some(w) = inner.writer.as_mut() {
            write_line(w, &entry)?;
            w.flush().map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        let pos = inner.entries.len();
        inner.index.insert(entry.prompt_hash.clone(), pos);
        inner.entries.push(entry);
        Ok(true)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All entries in insertion order.
    pub fn entries(&self) -> Vec<CacheEntry> {
        self.inner.lock().expect("cache lock poisoned").entries.clone()
    }
}

fn write_line(w: &mut impl Write, entry: &CacheEntry) -> Result<(), GatewayError> {
    let line = serde_json::to_string(entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
    writeln!(w, "{line}").map_err(|e| GatewayError::Cache(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(hash: &str) -> CacheEntry {
        CacheEntry {
            sample_id: "1".into(),
            model_id: "m".into(),
            approach: "TG+SD".into(),
            step: "TG".into(),
            repetition: 1,
            prompt_hash: hash.into(),
            response_text: "gun control".into(),
            timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn hash_separates_fields_and_repetitions() {
        let a = prompt_hash("m", "sys", "user", 1);
        assert_eq!(a, prompt_hash("m", "sys", "user", 1));
        assert_ne!(a, prompt_hash("m", "sys", "user", 2));
        assert_ne!(a, prompt_hash("m", "sysu", "ser", 1));
        assert_ne!(a, prompt_hash("n", "sys", "user", 1));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn duplicate_hash_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cache = ResponseCache::open(&path).unwrap();
        assert!(cache.insert(entry("h1")).unwrap());
        assert!(!cache.insert(entry("h1")).unwrap());
        assert!(cache.insert(entry("h2")).unwrap());
        drop(cache);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
        assert_eq!(reopened.get("h1").unwrap().response_text, "gun control");
    }

    #[test]
    fn truncated_tail_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let line = serde_json::to_string(&entry("h1")).unwrap();
        std::fs::write(&path, format!("{line}\n{{\"sample_id\":\"2\",\"mod")).unwrap();
        let cache = ResponseCache::open(&path).unwrap();
        assert_eq!(cache.len(), 1);
        cache.insert(entry("h3")).unwrap();
        drop(cache);
        let reopened = ResponseCache::open(&path).unwrap();
        assert_eq!(reopened.len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let line = serde_json::to_string(&entry("h1")).unwrap();
        std::fs::write(&path, format!("garbage\n{line}\n")).unwrap();
        assert!(ResponseCache::open(&path).is_err());
    }
}
