//! Dense vectors and exact cosine top-k retrieval.
//!
//! The index is immutable after [`Index::build`]; searches scan every stored
//! vector, so results are exact. Ties on similarity are broken by ascending
//! chunk id.

mod embed;
mod store;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Chunk;

pub use embed::{EmbedError, Embedder, HashEmbedder, HttpEmbedder};
pub use store::{load, persist, INDEX_FORMAT_VERSION};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector has zero norm")]
    ZeroNorm,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("{chunks} chunks but {vectors} vectors")]
    LengthMismatch { chunks: usize, vectors: usize },
    #[error("dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("duplicate chunk id `{0}`")]
    DuplicateChunkId(String),
    #[error("k must be positive")]
    InvalidK,
    #[error("index file error: {0}")]
    Format(String),
    #[error("index i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// A dense vector with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f32>,
    norm: f64,
}

impl EmbeddingVector {
    /// Rejects empty, zero-norm and non-finite vectors.
    pub fn new(values: Vec<f32>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite);
        }
        let norm = l2_norm(&values);
        if norm == 0.0 {
            return Err(IndexError::ZeroNorm);
        }
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.values, &other.values) / (self.norm * other.norm)
    }
}

fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub chunk_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub k: usize,
    pub hits: Vec<Hit>,
}

/// Stored chunk payload, returned alongside hits so prompts can embed the text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredChunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Index {
    dim: usize,
    chunks: Vec<StoredChunk>,
    /// Row-major `chunks.len() × dim`.
    values: Vec<f32>,
    norms: Vec<f64>,
}

/// Heap entry ordered so that the *worst* retained hit sits on top.
struct Candidate<'a> {
    similarity: f64,
    chunk_id: &'a str,
    row: usize,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.chunk_id.cmp(other.chunk_id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank_cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank_cmp(other)
    }
}

impl Index {
    pub fn build(chunks: &[Chunk], vectors: &[EmbeddingVector]) -> Result<Self, IndexError> {
        let stored = chunks
            .iter()
            .map(|c| StoredChunk {
                chunk_id: c.chunk_id.clone(),
                doc_id: c.doc_id.clone(),
                text: c.text.clone(),
            })
            .collect();
        Self::from_parts(stored, vectors)
    }

    pub fn from_parts(
        chunks: Vec<StoredChunk>,
        vectors: &[EmbeddingVector],
    ) -> Result<Self, IndexError> {
        if chunks.len() != vectors.len() {
            return Err(IndexError::LengthMismatch {
                chunks: chunks.len(),
                vectors: vectors.len(),
            });
        }
        let dim = vectors.first().map_or(0, |v| v.dim());
        let mut seen = HashSet::with_capacity(chunks.len());
        for c in &chunks {
            if !seen.insert(c.chunk_id.as_str()) {
                return Err(IndexError::DuplicateChunkId(c.chunk_id.clone()));
            }
        }
        let mut values = Vec::with_capacity(dim * vectors.len());
        let mut norms = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.dim() != dim {
                return Err(IndexError::DimensionMismatch {
                    expected: dim,
                    got: v.dim(),
                });
            }
            values.extend_from_slice(v.values());
            norms.push(v.norm());
        }
        Ok(Self {
            dim,
            chunks,
            values,
            norms,
        })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Zero for an empty index.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn chunks(&self) -> &[StoredChunk] {
        &self.chunks
    }

    pub fn chunk(&self, chunk_id: &str) -> Option<&StoredChunk> {
        self.chunks.iter().find(|c| c.chunk_id == chunk_id)
    }

    pub(crate) fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`k` by cosine similarity.
    pub fn search(
        &self,
        query_id: &str,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<RetrievalResult, IndexError> {
        self.search_rows(query_id, query, k).map(|(r, _)| r)
    }

    /// Like [`Index::search`] but also returns the stored chunk for every hit.
    pub fn search_with_chunks(
        &self,
        query_id: &str,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<(RetrievalResult, Vec<StoredChunk>), IndexError> {
        let (result, rows) = self.search_rows(query_id, query, k)?;
        let chunks = rows.into_iter().map(|r| self.chunks[r].clone()).collect();
        Ok((result, chunks))
    }

    fn search_rows(
        &self,
        query_id: &str,
        query: &EmbeddingVector,
        k: usize,
    ) -> Result<(RetrievalResult, Vec<usize>), IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if !self.is_empty() && query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.dim(),
            });
        }
        let mut heap: BinaryHeap<Candidate<'_>> = BinaryHeap::with_capacity(k + 1);
        for (row, chunk) in self.chunks.iter().enumerate() {
            let similarity = dot(query.values(), self.row(row)) / (query.norm() * self.norms[row]);
            let cand = Candidate {
                similarity,
                chunk_id: &chunk.chunk_id,
                row,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if let Some(worst) = heap.peek() {
                if cand.rank_cmp(worst) == Ordering::Less {
                    heap.pop();
                    heap.push(cand);
                }
            }
        }
        let ranked = heap.into_sorted_vec();
        let rows = ranked.iter().map(|c| c.row).collect();
        let hits = ranked
            .into_iter()
            .map(|c| Hit {
                chunk_id: c.chunk_id.to_string(),
                similarity: c.similarity,
            })
            .collect();
        Ok((
            RetrievalResult {
                query_id: query_id.to_string(),
                k,
                hits,
            },
            rows,
        ))
    }
}
