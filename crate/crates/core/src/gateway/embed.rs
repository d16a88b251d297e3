use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::chat::send_json;
use super::{GatewayError, RetryPolicy};
use crate::corpus::text::word_tokens;

/// A fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Fails when any entry is NaN or infinite, or the vector is empty.
    pub fn new(values: Vec<f64>) -> Result<Self, GatewayError> {
        if values.is_empty() {
            return Err(GatewayError::Protocol("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GatewayError::Protocol("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Cosine similarity; `None` if either vector has zero norm or the
    /// dimensions differ.
    pub fn cosine(&self, other: &EmbeddingVector) -> Option<f64> {
        if self.dimension() != other.dimension() {
            return None;
        }
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return None;
        }
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        Some((dot / (na * nb)).clamp(-1.0, 1.0))
    }
}

/// Text embedding provider. One vector per input, order preserved.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

fn check_inputs(texts: &[&str]) -> Result<(), GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::InvalidInput(format!("text {i} is empty")));
    }
    Ok(())
}

/// In-process embedder: every word token maps to a pseudo-random unit-scale
/// vector derived from its hash, and a text is the mean of its token vectors.
///
/// Deterministic and dependency-free; texts sharing words get correlated
/// vectors. It stands in for a contextual encoder in offline runs and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashingEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dimension: 384, seed: 0x5eed }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl HashingEmbedder {
    fn token_vector(&self, token: &str, out: &mut [f64]) {
        let mut state = fnv1a(token.as_bytes()) ^ self.seed;
        for slot in out.iter_mut() {
            // uniform in [-1, 1)
            *slot += (splitmix64(&mut state) >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let tokens = word_tokens(text);
        let mut acc = vec![0.0; self.dimension];
        for t in &tokens {
            self.token_vector(t, &mut acc);
        }
        if !tokens.is_empty() {
            let n = tokens.len() as f64;
            acc.iter_mut().for_each(|v| *v /= n);
        }
        EmbeddingVector { values: acc }
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_inputs(texts)?;
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Embeddings over HTTP: POST `{base_url}/embeddings` with `{model, input}`,
/// reading `data[i].embedding`. Servers are expected to mean-pool token states.
pub struct HttpEmbedder {
    client: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(
        base_url: &str,
        model: &str,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self, GatewayError> {
        reqwest::Url::parse(base_url)
            .map_err(|e| GatewayError::Config(format!("embedder url `{base_url}`: {e}")))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpEmbedder {
            client,
            url: format!("{}/embeddings", base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key,
            retry,
            batch_size: 64,
        })
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let body = json!({ "model": self.model, "input": texts });
        let (value, _) = self
            .retry
            .run(|_| send_json(&self.client, &self.url, self.api_key.as_deref(), &body))?;
        let data = value
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| GatewayError::Protocol("response has no `data` array".into()))?;
        let mut indexed: Vec<(usize, EmbeddingVector)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(|i| i.as_u64()).map_or(pos, |i| i as usize);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| GatewayError::Protocol(format!("item {pos} has no embedding")))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| GatewayError::Protocol("non-numeric entry".into())))
                .collect::<Result<_, _>>()?;
            indexed.push((index, EmbeddingVector::new(values)?));
        }
        if indexed.len() != texts.len() {
            return Err(GatewayError::Protocol(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                indexed.len()
            )));
        }
        indexed.sort_by_key(|(i, _)| *i);
        Ok(indexed.into_iter().map(|(_, v)| v).collect())
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_inputs(texts)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(chunk)?);
        }
        if let Some(first) = out.first() {
            let dim = first.dimension();
            if out.iter().any(|v| v.dimension() != dim) {
                return Err(GatewayError::Protocol("embedding dimensions differ".into()));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_inputs_give_identical_vectors() {
        let e = HashingEmbedder::default();
        let v = e.embed(&["a", "a"]).unwrap();
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn batch_shape_preserved() {
        let e = HashingEmbedder { dimension: 32, seed: 1 };
        let v = e.embed(&["one", "two words", "three word text"]).unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.dimension() == 32));
    }

    #[test]
    fn empty_batch_or_text_rejected() {
        let e = HashingEmbedder::default();
        assert!(matches!(e.embed(&[]), Err(GatewayError::InvalidInput(_))));
        assert!(matches!(e.embed(&["ok", " "]), Err(GatewayError::InvalidInput(_))));
    }

    #[test]
    fn shared_words_raise_similarity() {
        let e = HashingEmbedder::default();
        let v = e.embed(&["gun control", "gun rights", "climate change"]).unwrap();
        let related = v[0].cosine(&v[1]).unwrap();
        let unrelated = v[0].cosine(&v[2]).unwrap();
        assert!(related > unrelated + 0.2, "{related} vs {unrelated}");
    }

    #[test]
    fn cosine_edge_cases() {
        let a = EmbeddingVector::new(vec![1.0, 0.0]).unwrap();
        let b = EmbeddingVector::new(vec![0.0, 0.0]).unwrap();
        let c = EmbeddingVector::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.cosine(&a), Some(1.0));
        assert_eq!(a.cosine(&b), None);
        assert_eq!(a.cosine(&c), None);
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
    }
}
