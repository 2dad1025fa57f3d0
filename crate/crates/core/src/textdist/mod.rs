//! Sentence embeddings and sentence distances.
//!
//! The default distance is `1 - cos` between unit-norm sentence embeddings.
//! BLEU-4 and exact-match METEOR operate on raw sentences and are available
//! for comparison runs.

mod bleu;
mod meteor;
mod store;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, JsonClient, RetryPolicy};

pub use bleu::{bleu, bleu_distance};
pub use meteor::{meteor, meteor_distance};
pub use store::{read_embeddings, write_embeddings, EmbeddingStore};

pub const NORM_TOLERANCE: f64 = 1e-6;
pub const MOCK_DIM: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum TextDistError {
    #[error("embedding has zero or non-finite norm")]
    DegenerateEmbedding,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("backend returned {got} vectors for {expected} texts")]
    CountMismatch { expected: usize, got: usize },
    #[error("cannot embed an empty sentence")]
    EmptyText,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Unit-norm sentence embedding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVec {
    values: Vec<f32>,
}

impl EmbeddingVec {
    /// Normalizes `values` to unit L2 norm when it is off by more than
    /// [`NORM_TOLERANCE`].
    pub fn new(values: Vec<f32>) -> Result<Self, TextDistError> {
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(TextDistError::DegenerateEmbedding);
        }
        if (norm - 1.0).abs() <= NORM_TOLERANCE {
            return Ok(Self { values });
        }
        Ok(Self {
            values: values.iter().map(|&v| (v as f64 / norm) as f32).collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVec) -> Result<f64, TextDistError> {
        if self.dim() != other.dim() {
            return Err(TextDistError::DimMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum())
    }
}

/// `1 - <u, v>` for unit vectors; exactly 0 for identical vectors.
pub fn cosine_distance(u: &EmbeddingVec, v: &EmbeddingVec) -> Result<f64, TextDistError> {
    let dot = u.dot(v)?;
    if u.values == v.values {
        return Ok(0.0);
    }
    Ok(1.0 - dot)
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Cosine,
    Bleu,
    Meteor,
}

impl DistanceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceKind::Cosine => "cosine",
            DistanceKind::Bleu => "bleu",
            DistanceKind::Meteor => "meteor",
        }
    }

    /// Distance between a candidate sentence and a reference sentence.
    ///
    /// BLEU and METEOR are asymmetric; the candidate is the new or test
    /// sentence and the reference is the stored exemplar.
    pub fn distance(
        &self,
        candidate: (&EmbeddingVec, &str),
        reference: (&EmbeddingVec, &str),
    ) -> Result<f64, TextDistError> {
        match self {
            DistanceKind::Cosine => cosine_distance(candidate.0, reference.0),
            DistanceKind::Bleu => Ok(bleu_distance(candidate.1, reference.1)),
            DistanceKind::Meteor => Ok(meteor_distance(candidate.1, reference.1)),
        }
    }
}

impl std::str::FromStr for DistanceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(DistanceKind::Cosine),
            "bleu" => Ok(DistanceKind::Bleu),
            "meteor" => Ok(DistanceKind::Meteor),
            other => Err(format!("unknown distance kind {other:?}")),
        }
    }
}

pub trait EmbedBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn dim(&self) -> usize;
    /// Raw vectors, one per text, in input order.
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError>;
}

pub fn embed(backend: &dyn EmbedBackend, text: &str) -> Result<EmbeddingVec, TextDistError> {
    Ok(embed_batch(backend, &[text])?.remove(0))
}

/// Embeds and unit-normalizes `texts`, checking count and dimension.
pub fn embed_batch(backend: &dyn EmbedBackend, texts: &[&str]) -> Result<Vec<EmbeddingVec>, TextDistError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(TextDistError::EmptyText);
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = backend.embed_raw(texts)?;
    if raw.len() != texts.len() {
        return Err(TextDistError::CountMismatch {
            expected: texts.len(),
            got: raw.len(),
        });
    }
    raw.into_iter()
        .map(|v| {
            if v.len() != backend.dim() {
                return Err(TextDistError::DimMismatch {
                    expected: backend.dim(),
                    got: v.len(),
                });
            }
            EmbeddingVec::new(v)
        })
        .collect()
}

/// Embeds `texts` in batches of `batch`, with at most `in_flight` batches
/// outstanding and transient backend failures retried per `retry`.
pub fn embed_all(
    backend: &dyn EmbedBackend,
    texts: &[&str],
    batch: usize,
    in_flight: usize,
    retry: &RetryPolicy,
) -> Result<Vec<EmbeddingVec>, TextDistError> {
    let chunks: Vec<&[&str]> = texts.chunks(batch.max(1)).collect();
    let results = crate::exec::bounded_map(&chunks, in_flight, |chunk| {
        let mut attempt = 0;
        loop {
            match embed_batch(backend, chunk) {
                Err(TextDistError::Backend(e)) if e.is_transient() && attempt < retry.max_retries => {
                    std::thread::sleep(retry.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    });
    let mut out = Vec::with_capacity(texts.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

/// Bag-of-token-hash embedder: token counts in `dim` hashed buckets.
///
/// Deterministic and overlap-sensitive; sentences with the same token
/// multiset embed identically.
#[derive(Clone, Debug)]
pub struct MockEmbedder {
    dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self { dim: MOCK_DIM }
    }
}

impl MockEmbedder {
    pub const ID: &'static str = "mock-embed-v1";

    pub fn with_dim(dim: usize) -> Self {
        assert!(dim > 0);
        Self { dim }
    }

    pub fn bucket(&self, token: &str) -> usize {
        let h = Sha256::digest(token.as_bytes());
        let mut first = [0u8; 8];
        first.copy_from_slice(&h[..8]);
        (u64::from_le_bytes(first) % self.dim as u64) as usize
    }

    pub fn counts(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for tok in tokenize(text) {
            v[self.bucket(&tok)] += 1.0;
        }
        v
    }
}

impl EmbedBackend for MockEmbedder {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        Ok(texts.iter().map(|t| self.counts(t)).collect())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    vectors: Vec<Vec<f32>>,
}

/// Client for `POST /embed` on an embedding service.
///
/// The dimension is fixed by the first successful response (or by
/// [`HttpEmbedder::with_dim`]); later responses must match it.
#[derive(Debug)]
pub struct HttpEmbedder {
    client: JsonClient,
    id: String,
    dim: std::sync::OnceLock<usize>,
    batch: usize,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self::with_client(JsonClient::new(base_url, timeout))
    }

    pub fn with_client(client: JsonClient) -> Self {
        let id = format!("http:{}", client.base_url());
        Self {
            client,
            id,
            dim: std::sync::OnceLock::new(),
            batch: 64,
        }
    }

    pub fn with_dim(self, dim: usize) -> Self {
        let _ = self.dim.set(dim);
        self
    }

    /// Queries the service once to learn its dimension.
    pub fn probe(&self) -> Result<usize, BackendError> {
        if let Some(&d) = self.dim.get() {
            return Ok(d);
        }
        self.embed_raw(&["probe"])?;
        Ok(*self.dim.get().expect("dimension set by first response"))
    }
}

impl EmbedBackend for HttpEmbedder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim.get().copied().unwrap_or(0)
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch) {
            let resp: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts: chunk })?;
            let dim = *self.dim.get_or_init(|| resp.dim);
            if resp.dim != dim || resp.vectors.iter().any(|v| v.len() != dim) {
                return Err(BackendError::Fatal(format!(
                    "embedding service changed dimension (expected {dim}, got {})",
                    resp.dim
                )));
            }
            out.extend(resp.vectors);
        }
        Ok(out)
    }
}
