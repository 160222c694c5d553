//! Text embedding providers and similarity ranking.
//!
//! Two backends: [`LexicalEmbedder`], an offline character-trigram TF-IDF
//! model, and [`RemoteEmbedder`], which calls an HTTP embedding endpoint.
//! Scores are cosine similarity mapped onto `[0, 1]`.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbedError {
    #[error("nothing to embed")]
    EmptyInput,
    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        EmbeddingVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    fn name(&self) -> &str;
}

/// Cosine similarity; zero vectors are orthogonal to everything.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let na = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Similarity score in `[0, 1]`, rounded to six decimals.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    round6((1.0 + cosine(a, b)) / 2.0)
}

fn char_trigrams(text: &str) -> Vec<String> {
    let padded: Vec<char> = format!(" {} ", text.to_lowercase()).chars().collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

/// Character-trigram Jaccard similarity, used when no embedder is reachable.
pub fn trigram_jaccard(a: &str, b: &str) -> f64 {
    let sa: BTreeSet<String> = char_trigrams(a).into_iter().collect();
    let sb: BTreeSet<String> = char_trigrams(b).into_iter().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 0.0;
    }
    round6(sa.intersection(&sb).count() as f64 / union as f64)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Offline, deterministic character-trigram TF-IDF embedder.
///
/// IDF is computed over the texts of each `embed` call, so a query and its
/// candidates should be embedded together.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    dimension: usize,
    max_chars: usize,
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        LexicalEmbedder { dimension: 1024, max_chars: 512 }
    }
}

impl LexicalEmbedder {
    pub fn new(dimension: usize, max_chars: usize) -> Self {
        LexicalEmbedder { dimension: dimension.max(1), max_chars: max_chars.max(1) }
    }
}

impl Embedder for LexicalEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let grams: Vec<BTreeMap<String, usize>> = texts
            .iter()
            .map(|t| {
                let t = if t.chars().count() > self.max_chars {
                    tracing::warn!(len = t.len(), "truncating text to {} characters for embedding", self.max_chars);
                    t.chars().take(self.max_chars).collect()
                } else {
                    t.clone()
                };
                let mut counts = BTreeMap::new();
                for g in char_trigrams(&t) {
                    *counts.entry(g).or_insert(0usize) += 1;
                }
                counts
            })
            .collect();
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in &grams {
            for g in doc.keys() {
                *df.entry(g.as_str()).or_insert(0) += 1;
            }
        }
        let n = texts.len() as f64;
        Ok(grams
            .iter()
            .map(|doc| {
                let mut v = vec![0.0; self.dimension];
                for (g, &tf) in doc {
                    let idf = ((1.0 + n) / (1.0 + df[g.as_str()] as f64)).ln() + 1.0;
                    let slot = (fnv1a(g.as_bytes()) % self.dimension as u64) as usize;
                    v[slot] += (1.0 + (tf as f64).ln()) * idf;
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                EmbeddingVector::new(v)
            })
            .collect())
    }

    fn name(&self) -> &str {
        "lexical"
    }
}

#[derive(Deserialize)]
struct RemoteResponse {
    data: Vec<RemoteItem>,
}

#[derive(Deserialize)]
struct RemoteItem {
    embedding: Vec<f64>,
}

/// HTTP embedding backend: `POST {"input": [...]}` → `{"data": [{"embedding": [...]}]}`.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    url: String,
    api_key: Option<String>,
    model: Option<String>,
    batch_size: usize,
    client: reqwest::blocking::Client,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: Option<String>) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .expect("static HTTP client configuration");
        RemoteEmbedder { url: url.into(), api_key, model, batch_size: 64, client }
    }

    fn embed_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let mut body = serde_json::json!({ "input": batch });
        if let Some(model) = &self.model {
            body["model"] = serde_json::Value::String(model.clone());
        }
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let unavailable = |e: String| EmbedError::ProviderUnavailable(e);
        let resp = req.send().map_err(|e| unavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(unavailable(format!("HTTP {}", resp.status())));
        }
        let parsed: RemoteResponse = resp.json().map_err(|e| unavailable(e.to_string()))?;
        if parsed.data.len() != batch.len() {
            return Err(unavailable(format!("expected {} embeddings, got {}", batch.len(), parsed.data.len())));
        }
        Ok(parsed.data.into_iter().map(|d| EmbeddingVector::new(d.embedding)).collect())
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.embed_batch(batch)?);
        }
        let dim = out[0].dimension();
        if dim == 0 || out.iter().any(|v| v.dimension() != dim || v.values.iter().any(|x| !x.is_finite())) {
            return Err(EmbedError::ProviderUnavailable("inconsistent or non-finite embeddings".into()));
        }
        Ok(out)
    }

    fn name(&self) -> &str {
        "remote"
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ranked {
    pub index: usize,
    pub score: f64,
}

/// Sorts by descending score, then candidate text, then index; keeps `k`.
pub fn rank(scores: &[f64], candidates: &[String], k: usize) -> Vec<Ranked> {
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| candidates[a].cmp(&candidates[b]))
            .then(a.cmp(&b))
    });
    order.into_iter().take(k).map(|index| Ranked { index, score: scores[index] }).collect()
}

/// Embeds the query with the candidates and returns the `k` best matches.
pub fn top_k(embedder: &dyn Embedder, query: &str, candidates: &[String], k: usize) -> Result<Vec<Ranked>, EmbedError> {
    if candidates.is_empty() || k == 0 {
        return Ok(Vec::new());
    }
    let mut texts = Vec::with_capacity(candidates.len() + 1);
    texts.push(query.to_string());
    texts.extend_from_slice(candidates);
    let vectors = embedder.embed(&texts)?;
    let scores: Vec<f64> = vectors[1..].iter().map(|v| similarity(&vectors[0], v)).collect();
    Ok(rank(&scores, candidates, k))
}

/// Ranking by trigram Jaccard; the fallback when embedding fails.
pub fn lexical_top_k(query: &str, candidates: &[String], k: usize) -> Vec<Ranked> {
    let scores: Vec<f64> = candidates.iter().map(|c| trigram_jaccard(query, c)).collect();
    rank(&scores, candidates, k)
}
