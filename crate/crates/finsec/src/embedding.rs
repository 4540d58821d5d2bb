//! Text-to-vector mapping and similarity primitives.
//!
//! The default embedder hashes word unigrams and bigrams into a fixed number
//! of signed buckets, so the whole engine runs deterministically with no
//! model weights or network. An external HTTP provider can be swapped in
//! behind the same trait.

use crate::error::{Error, Result};
use crate::model::normalize_text;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::RwLock;

pub const DEFAULT_DIMENSION: usize = 256;

/// A fixed-dimension real vector produced by an embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scale to unit L2 norm; the all-zero vector is left untouched.
    pub fn normalized(mut self) -> Self {
        let norm = self.l2_norm();
        if norm > 0.0 {
            for v in &mut self.values {
                *v /= norm;
            }
        }
        self
    }
}

/// Embedding provider selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "provider")]
pub enum EmbedderConfig {
    Hashing {
        #[serde(default = "default_dimension")]
        dimension: usize,
    },
    External {
        #[serde(default = "default_dimension")]
        dimension: usize,
        endpoint: String,
    },
}

fn default_dimension() -> usize {
    DEFAULT_DIMENSION
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashing {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

impl EmbedderConfig {
    pub fn dimension(&self) -> usize {
        match self {
            EmbedderConfig::Hashing { dimension } => *dimension,
            EmbedderConfig::External { dimension, .. } => *dimension,
        }
    }
}

/// Text-to-vector mapping. Implementations must be deterministic per
/// instance and safe for concurrent use.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector>;
}

// ---------------------------------------------------------------------------
// Hashing embedder
// ---------------------------------------------------------------------------

/// Signed feature hashing over word unigrams and bigrams of the normalized
/// text. Deterministic across runs and platforms.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dimension: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl HashingEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension >= 8, "embedding dimension must be >= 8");
        Self { dimension }
    }
}

/// FNV-1a 64-bit. Stable across platforms, unlike the std hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for HashingEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let normalized = normalize_text(text);
        let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
        let mut values = vec![0.0_f64; self.dimension];
        let mut add_feature = |feature: &str| {
            let h = fnv1a(feature.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if (h >> 63) & 1 == 0 { 1.0 } else { -1.0 };
            values[bucket] += sign;
        };
        for token in &tokens {
            add_feature(token);
        }
        for pair in tokens.windows(2) {
            add_feature(&format!("{} {}", pair[0], pair[1]));
        }
        Ok(EmbeddingVector { values }.normalized())
    }
}

// ---------------------------------------------------------------------------
// External embedder
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: [&'a str; 1],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding endpoint client: `POST {endpoint}/embed` with
/// `{"texts": [...]}"` returning `{"vectors": [[...]]}`. Responses are
/// L2-normalized locally. Bearer auth comes from `FINSEC_API_KEY`.
pub struct ExternalEmbedder {
    endpoint: String,
    dimension: usize,
    client: reqwest::blocking::Client,
}

impl ExternalEmbedder {
    pub fn new(endpoint: impl Into<String>, dimension: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            dimension,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn provider_error(&self, cause: impl std::fmt::Display) -> Error {
        Error::EmbeddingProvider {
            endpoint: self.endpoint.clone(),
            cause: cause.to_string(),
        }
    }
}

impl Embedder for ExternalEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let url = format!("{}/embed", self.endpoint.trim_end_matches('/'));
        let mut request = self.client.post(&url).json(&EmbedRequest { texts: [text] });
        if let Ok(key) = std::env::var("FINSEC_API_KEY") {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| self.provider_error(e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(self.provider_error(format!("status {status}")));
        }
        let body: EmbedResponse = response.json().map_err(|e| self.provider_error(e))?;
        let vector = body
            .vectors
            .into_iter()
            .next()
            .ok_or_else(|| self.provider_error("empty vectors array"))?;
        if vector.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                left: self.dimension,
                right: vector.len(),
            });
        }
        Ok(EmbeddingVector { values: vector }.normalized())
    }
}

// ---------------------------------------------------------------------------
// Memoization wrapper
// ---------------------------------------------------------------------------

/// In-memory memo keyed by normalized text, wrapped around any embedder.
/// Sliding-window scoring re-embeds the same turns many times; this keeps
/// that linear.
pub struct MemoEmbedder<E> {
    inner: E,
    cache: RwLock<HashMap<String, EmbeddingVector>>,
}

impl<E: Embedder> MemoEmbedder<E> {
    pub fn new(inner: E) -> Self {
        Self {
            inner,
            cache: RwLock::new(HashMap::new()),
        }
    }
}

impl<E: Embedder> Embedder for MemoEmbedder<E> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let key = normalize_text(text);
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let vector = self.inner.embed(text)?;
        self.cache.write().unwrap().insert(key, vector.clone());
        Ok(vector)
    }
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn dimension(&self) -> usize {
        (**self).dimension()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        (**self).embed(text)
    }
}

/// Build the configured embedder behind a memo.
pub fn build_embedder(config: &EmbedderConfig) -> std::sync::Arc<dyn Embedder> {
    match config {
        EmbedderConfig::Hashing { dimension } => {
            std::sync::Arc::new(MemoEmbedder::new(HashingEmbedder::new(*dimension)))
        }
        EmbedderConfig::External {
            dimension,
            endpoint,
        } => std::sync::Arc::new(MemoEmbedder::new(ExternalEmbedder::new(
            endpoint.clone(),
            *dimension,
        ))),
    }
}

// ---------------------------------------------------------------------------
// Similarity primitives
// ---------------------------------------------------------------------------

/// Standard cosine similarity; defined as 0 when either vector is all-zero.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dimension() != v.dimension() {
        return Err(Error::DimensionMismatch {
            left: u.dimension(),
            right: v.dimension(),
        });
    }
    let nu = u.l2_norm();
    let nv = v.l2_norm();
    if nu == 0.0 || nv == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = u
        .values
        .iter()
        .zip(&v.values)
        .map(|(a, b)| a * b)
        .sum();
    Ok(dot / (nu * nv))
}

/// Logistic function with temperature: `1 / (1 + exp(-tau * x))`.
pub fn scaled_sigmoid(x: f64, tau: f64) -> f64 {
    debug_assert!(tau > 0.0, "tau must be positive");
    1.0 / (1.0 + (-tau * x).exp())
}
