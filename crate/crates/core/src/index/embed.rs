//! Embedding backends.

use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EmbeddingVector;
use crate::hashing::sha256;
use crate::http::{self, HttpFailure};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding transport error (retryable: {retryable}): {message}")]
    Transport { retryable: bool, message: String },
    #[error("embedding backend protocol error: {0}")]
    Protocol(String),
    #[error("embedding dimension {got} does not match expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backend produced an unusable vector: {0}")]
    InvalidVector(String),
}

impl From<HttpFailure> for EmbedError {
    fn from(f: HttpFailure) -> Self {
        EmbedError::Transport {
            retryable: f.retryable,
            message: f.message,
        }
    }
}

/// Turns texts into dense vectors, one per text, order-preserving.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;

    /// Output dimension, when known ahead of the first call.
    fn dim(&self) -> Option<usize>;
}

/// Offline deterministic embedder.
///
/// Each lowercase word maps to a pseudo-random unit vector seeded by
/// `(seed, word)`; a text embeds to the renormalized mean of its word vectors.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be positive");
        Self { dim, seed }
    }

    fn token_vector(&self, token: &str, acc: &mut [f64]) {
        let mut key = self.seed.to_le_bytes().to_vec();
        key.extend_from_slice(token.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(sha256(&key));
        let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm = if norm > 0.0 { norm } else { 1.0 };
        for (a, x) in acc.iter_mut().zip(&v) {
            *a += x / norm;
        }
    }

    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut acc = vec![0.0f64; self.dim];
        let lowered = text.to_lowercase();
        let mut any = false;
        for word in lowered.split_whitespace() {
            self.token_vector(word, &mut acc);
            any = true;
        }
        if !any {
            self.token_vector("", &mut acc);
        }
        if acc.iter().all(|x| x.abs() < 1e-12) {
            // word vectors cancelled out; fall back to hashing the whole text
            acc.iter_mut().for_each(|x| *x = 0.0);
            self.token_vector(&lowered, &mut acc);
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        let values = acc.iter().map(|x| (x / norm) as f32).collect();
        EmbeddingVector::new(values).expect("hash embedding is non-zero and finite")
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn dim(&self) -> Option<usize> {
        Some(self.dim)
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

/// Client for an HTTP embedding service: `POST {base}/embed`
/// with `{"texts": [...]}` answering `{"vectors": [[...]], "dim": n}`.
pub struct HttpEmbedder {
    agent: ureq::Agent,
    url: String,
    expected_dim: Option<usize>,
    batch_size: usize,
    retries: u32,
    parallelism: usize,
}

impl HttpEmbedder {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        Self {
            agent: http::agent(timeout),
            url: http::join_url(base_url, "embed"),
            expected_dim: None,
            batch_size: 32,
            retries: 2,
            parallelism: 1,
        }
    }

    pub fn with_expected_dim(mut self, dim: usize) -> Self {
        self.expected_dim = Some(dim);
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let resp: EmbedResponse = http::with_retries(self.retries, || {
            http::post_json(&self.agent, &self.url, None, &EmbedRequest { texts })
        })?;
        if resp.vectors.len() != texts.len() {
            return Err(EmbedError::Protocol(format!(
                "sent {} texts, received {} vectors",
                texts.len(),
                resp.vectors.len()
            )));
        }
        if let Some(expected) = self.expected_dim {
            if resp.dim != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    got: resp.dim,
                });
            }
        }
        resp.vectors
            .into_iter()
            .map(|v| {
                if v.len() != resp.dim {
                    return Err(EmbedError::DimensionMismatch {
                        expected: resp.dim,
                        got: v.len(),
                    });
                }
                EmbeddingVector::new(v).map_err(|e| EmbedError::InvalidVector(e.to_string()))
            })
            .collect()
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.batch_size).collect();
        let results = crate::parallel::ordered_map(self.parallelism, &batches, |b| {
            self.embed_batch(b)
        });
        let mut out = Vec::with_capacity(texts.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn dim(&self) -> Option<usize> {
        self.expected_dim
    }
}
