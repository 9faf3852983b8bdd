//! Bias evaluation harness for retrieval-augmented LLM generation.
//!
//! The crate is organised along the experiment's data flow:
//!
//! - [`corpus`]: load retrieval corpora and split them into fixed-size word chunks.
//! - [`index`]: embed chunks and serve exact cosine top-k retrieval.
//! - [`dataset`]: typed loaders for the masked-sentence, sentence-prefix and
//!   descriptor bias datasets, plus the six experimental [`Condition`]s.
//! - [`prompting`]: prompt templates for every (item, condition) pair.
//! - [`gateway`]: candidate log-probability scoring and text generation.
//! - [`scorers`]: sentiment / toxicity / regard / gender polarity / emotion classifiers.
//! - [`metrics`]: the three bias scores and Pearson correlation analysis.
//! - [`faithfulness`]: the early-answering chain-of-thought probe.
//! - [`pipeline`]: config-driven orchestration of all stages and report emission.

pub mod corpus;
pub mod dataset;
pub mod faithfulness;
pub mod gateway;
pub mod index;
pub mod metrics;
pub mod pipeline;
pub mod prompting;
pub mod scorers;

mod hashing;
mod http;
mod parallel;

pub use dataset::{Condition, RetrievalCorpus};
pub use hashing::sha256_hex;
