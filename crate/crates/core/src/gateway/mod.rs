//! Text-completion access: candidate log-probability scoring and generation.

mod http;
mod mock;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

pub use self::http::{ApiMode, HttpLm, HttpLmConfig, ScoringStrategy};
pub use mock::{prompt_hash, EchoLm, MockFallback, MockFixture, MockLm, MockScript};

pub const DEFAULT_MAX_TOKENS_OPEN: u32 = 256;
pub const DEFAULT_MAX_TOKENS_COT: u32 = 512;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("backend does not support {0}")]
    Capability(String),
    #[error("transport error (retryable: {retryable}): {message}")]
    Transport { retryable: bool, message: String },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("mock backend has no script for prompt {0}")]
    NotScripted(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { retryable: true, .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub word: String,
    /// Natural-log probability of the word continuing the prompt.
    pub log_prob: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS_OPEN,
            temperature: 0.0,
            stop: Vec::new(),
            seed: None,
        }
    }
}

impl GenerationParams {
    pub fn cot() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS_COT,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_tokens < 1 {
            return Err(GatewayError::InvalidParams("max_tokens must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidParams(format!(
                "temperature must be a finite value >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Backend contract. Implementations must be deterministic for identical
/// requests when decoding greedily.
pub trait LanguageModel: Send + Sync {
    /// Per-token log-probabilities of `continuation` directly following `prompt`.
    fn continuation_logprobs(&self, prompt: &str, continuation: &str)
        -> Result<Vec<f64>, GatewayError>;

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, GatewayError>;
}

/// How multi-token candidate scores are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalization {
    /// Sum of token log-probabilities.
    #[default]
    None,
    /// Mean token log-probability.
    PerToken,
}

/// Keyed response from a batch call; never reordered relative to the request.
#[derive(Debug, Clone)]
pub struct Keyed<T> {
    pub item_id: String,
    pub result: Result<T, GatewayError>,
}

/// Retrying, bounded-parallel front end over a [`LanguageModel`].
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn LanguageModel>,
    retries: u32,
    parallelism: usize,
    normalization: LengthNormalization,
}

impl Gateway {
    pub fn new(backend: Arc<dyn LanguageModel>) -> Self {
        Self {
            backend,
            retries: 2,
            parallelism: 1,
            normalization: LengthNormalization::None,
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_parallelism(mut self, parallelism: usize) -> Self {
        self.parallelism = parallelism.max(1);
        self
    }

    pub fn with_normalization(mut self, normalization: LengthNormalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn parallelism(&self) -> usize {
        self.parallelism
    }

    fn retry<T>(&self, mut op: impl FnMut() -> Result<T, GatewayError>) -> Result<T, GatewayError> {
        let mut attempt = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::debug!("retry {attempt}/{}: {e}", self.retries);
                    std::thread::sleep(std::time::Duration::from_millis(100 * u64::from(attempt)));
                }
                other => return other,
            }
        }
    }

    /// Scores each candidate as a continuation of `prompt`.
    ///
    /// A space is inserted before the candidate when the prompt does not
    /// already end in whitespace.
    pub fn score_candidates(
        &self,
        prompt: &RenderedPrompt,
        candidates: [&str; 2],
    ) -> Result<[CandidateScore; 2], GatewayError> {
        let score = |word: &str| -> Result<CandidateScore, GatewayError> {
            let continuation = if prompt.text.ends_with(char::is_whitespace) || prompt.text.is_empty() {
                word.to_string()
            } else {
                format!(" {word}")
            };
            let tokens = self.retry(|| self.backend.continuation_logprobs(&prompt.text, &continuation))?;
            if tokens.is_empty() {
                return Err(GatewayError::Protocol(format!("no tokens scored for `{word}`")));
            }
            if tokens.iter().any(|t| !t.is_finite()) {
                return Err(GatewayError::Protocol(format!("non-finite log-probability for `{word}`")));
            }
            let sum: f64 = tokens.iter().sum();
            let log_prob = match self.normalization {
                LengthNormalization::None => sum,
                LengthNormalization::PerToken => sum / tokens.len() as f64,
            };
            Ok(CandidateScore {
                word: word.to_string(),
                log_prob,
                token_count: tokens.len(),
            })
        };
        Ok([score(candidates[0])?, score(candidates[1])?])
    }

    pub fn generate(
        &self,
        prompt: &RenderedPrompt,
        params: &GenerationParams,
    ) -> Result<Generation, GatewayError> {
        params.validate()?;
        self.retry(|| self.backend.generate(&prompt.text, params))
    }

    pub fn score_batch(
        &self,
        requests: &[(RenderedPrompt, [String; 2])],
    ) -> Vec<Keyed<[CandidateScore; 2]>> {
        crate::parallel::ordered_map(self.parallelism, requests, |(p, [s, a])| Keyed {
            item_id: p.item_id.clone(),
            result: self.score_candidates(p, [s, a]),
        })
    }

    pub fn generate_batch(
        &self,
        prompts: &[RenderedPrompt],
        params: &GenerationParams,
    ) -> Vec<Keyed<Generation>> {
        crate::parallel::ordered_map(self.parallelism, prompts, |p| Keyed {
            item_id: p.item_id.clone(),
            result: self.generate(p, params),
        })
    }
}
