//! Embedding vectors, cosine similarity and embedding providers.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dimension of the deterministic hashing embedder.
pub const HASH_EMBEDDING_DIM: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding provider unreachable: {0}")]
    Unreachable(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider rejected request: {0}")]
    Rejected(String),
}

impl EmbeddingError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, EmbeddingError::Unreachable(_))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

/// A finite real vector. Construction rejects NaN and infinities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(EmbeddingError::NonFinite)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SimilarityError> {
    if a.dimension() != b.dimension() {
        return Err(SimilarityError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;

    fn dimension(&self) -> usize;

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError>;
}

/// Deterministic offline embedder: every whitespace token is hashed into one
/// of `dimension` buckets, bucket counts are L2-normalized. Text without any
/// token (whitespace only) is hashed as a single token so the result is still
/// a unit vector.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        Self { dimension }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dimension as u64) as usize
    }

    pub fn embed_sync(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut counts = vec![0.0f64; self.dimension];
        let mut any = false;
        for token in text.split_whitespace() {
            counts[self.bucket(token)] += 1.0;
            any = true;
        }
        if !any {
            counts[self.bucket(text)] = 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        counts.iter_mut().for_each(|c| *c /= norm);
        EmbeddingVector::new(counts)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(HASH_EMBEDDING_DIM)
    }
}

#[async_trait]
impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> &str {
        "hash"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        self.embed_sync(text)
    }
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
fn fnv1a(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes.iter().fold(OFFSET, |hash, b| (hash ^ u64::from(*b)).wrapping_mul(PRIME))
}

/// Client for OpenAI-compatible `/embeddings` endpoints.
pub struct HttpEmbedder {
    client: reqwest::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
    dimension: usize,
}

#[derive(Serialize)]
struct EmbeddingRequestBody<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponseBody {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        dimension: usize,
        timeout: std::time::Duration,
    ) -> Result<Self, EmbeddingError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbeddingError::Rejected(e.to_string()))?;
        Ok(Self { client, endpoint: endpoint.into(), model: model.into(), api_key, dimension })
    }
}

#[async_trait]
impl EmbeddingProvider for HttpEmbedder {
    fn provider_id(&self) -> &str {
        &self.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbeddingError> {
        if text.is_empty() {
            return Err(EmbeddingError::EmptyText);
        }
        let mut request = self
            .client
            .post(&self.endpoint)
            .json(&EmbeddingRequestBody { model: &self.model, input: text });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| EmbeddingError::Unreachable(e.to_string()))?;
        let status = response.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(EmbeddingError::Unreachable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(EmbeddingError::Rejected(format!("status {status}")));
        }
        let body: EmbeddingResponseBody =
            response.json().await.map_err(|e| EmbeddingError::Rejected(e.to_string()))?;
        let values = body
            .data
            .into_iter()
            .next()
            .ok_or_else(|| EmbeddingError::Rejected("response carried no embedding".into()))?
            .embedding;
        if values.len() != self.dimension {
            return Err(EmbeddingError::DimensionMismatch { expected: self.dimension, actual: values.len() });
        }
        EmbeddingVector::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_identity_orthogonal_antipodal() {
        let a = v(&[0.3, -1.2, 2.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), -1.0);
    }

    #[test]
    fn cosine_rejects_zero_and_mismatched() {
        assert_eq!(cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])), Err(SimilarityError::ZeroVector));
        assert_eq!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(SimilarityError::DimensionMismatch(1, 2))
        );
    }

    #[test]
    fn non_finite_rejected() {
        assert_eq!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(EmbeddingError::NonFinite));
        assert!(serde_json::from_str::<EmbeddingVector>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn hash_embedder_is_deterministic_unit_length() {
        let e = HashEmbedder::default();
        let a = e.embed_sync("abc").unwrap();
        assert_eq!(a, e.embed_sync("abc").unwrap());
        assert_eq!(a.dimension(), HASH_EMBEDDING_DIM);
        assert!((a.norm() - 1.0).abs() <= 1e-9);
        let spaces = e.embed_sync("   ").unwrap();
        assert!((spaces.norm() - 1.0).abs() <= 1e-9);
        assert_eq!(e.embed_sync(""), Err(EmbeddingError::EmptyText));
    }

    // Oracle: the single-token vectors are one-hot, so their cosine is 1 iff
    // the tokens share a bucket. Recompute the buckets from the FNV-1a
    // definition directly.
    #[test]
    fn abc_and_abd_are_not_identical() {
        fn reference_fnv(s: &str) -> u64 {
            let mut h: u64 = 14695981039346656037;
            for b in s.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            h
        }
        let (ba, bb) = (reference_fnv("abc") % 64, reference_fnv("abd") % 64);
        assert_ne!(ba, bb);
        let e = HashEmbedder::default();
        let sim = cosine_similarity(&e.embed_sync("abc").unwrap(), &e.embed_sync("abd").unwrap()).unwrap();
        assert!(sim < 1.0);
        assert_eq!(sim, 0.0);
    }

    proptest! {
        #[test]
        fn cosine_symmetric_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            c in 0.01f64..100.0,
        ) {
            let (va, vb) = (v(&a), v(&b));
            prop_assume!(va.norm() > 1e-6 && vb.norm() > 1e-6);
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert_eq!(ab, ba);
            let scaled = v(&b.iter().map(|x| x * c).collect::<Vec<_>>());
            prop_assert!((cosine_similarity(&va, &scaled).unwrap() - ab).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
