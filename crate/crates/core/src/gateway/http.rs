//! OpenAI-compatible completion endpoint client.
//!
//! Generation uses `POST {base}/completions` (or `{base}/chat/completions` in
//! chat mode). Candidate scoring always uses the raw completions endpoint with
//! `echo: true` and `logprobs`, so the backend must return prompt-token
//! log-probabilities.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{FinishReason, Generation, GatewayError, GenerationParams, LanguageModel};
use crate::http::{self, HttpFailure};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiMode {
    #[default]
    Completion,
    Chat,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringStrategy {
    /// One echo call on `prompt + continuation`; tokens past the prompt are
    /// selected by their character offsets.
    #[default]
    EchoOffsets,
    /// Two echo calls; the continuation score is
    /// `logP(prompt + continuation) - logP(prompt)`. For backends that do
    /// not report token offsets.
    TwoCallDifference,
    /// Backend cannot score.
    Unsupported,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpLmConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub mode: ApiMode,
    #[serde(default)]
    pub scoring: ScoringStrategy,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

pub struct HttpLm {
    agent: ureq::Agent,
    config: HttpLmConfig,
}

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    echo: bool,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
struct LogprobBlock {
    #[serde(default)]
    tokens: Vec<String>,
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
    #[serde(default)]
    text_offset: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<LogprobBlock>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

impl From<HttpFailure> for GatewayError {
    fn from(f: HttpFailure) -> Self {
        GatewayError::Transport {
            retryable: f.retryable,
            message: f.message,
        }
    }
}

fn finish(reason: Option<&str>) -> FinishReason {
    match reason {
        Some("length") => FinishReason::Length,
        _ => FinishReason::Stop,
    }
}

impl HttpLm {
    pub fn new(config: HttpLmConfig) -> Self {
        Self {
            agent: http::agent(Duration::from_secs(config.timeout_secs)),
            config,
        }
    }

    fn completion(&self, body: &CompletionRequest<'_>) -> Result<CompletionChoice, GatewayError> {
        let url = http::join_url(&self.config.base_url, "completions");
        let resp: CompletionResponse =
            http::post_json(&self.agent, &url, self.config.api_key.as_deref(), body)?;
        resp.choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))
    }

    fn echo(&self, text: &str) -> Result<LogprobBlock, GatewayError> {
        let choice = self.completion(&CompletionRequest {
            model: &self.config.model,
            prompt: text,
            max_tokens: 1,
            temperature: 0.0,
            logprobs: Some(1),
            echo: true,
            stop: &[],
            seed: None,
        })?;
        let block = choice
            .logprobs
            .ok_or_else(|| GatewayError::Capability("prompt log-probabilities (no logprobs in response)".into()))?;
        if block.tokens.len() != block.token_logprobs.len() {
            return Err(GatewayError::Protocol("tokens and token_logprobs differ in length".into()));
        }
        Ok(block)
    }

    /// Sum of echoed log-probabilities over tokens lying inside `text`.
    fn echoed_total(block: &LogprobBlock, text_chars: usize) -> f64 {
        block
            .tokens
            .iter()
            .zip(&block.token_logprobs)
            .enumerate()
            .take_while(|(i, _)| block.text_offset.get(*i).is_none_or(|&o| o < text_chars))
            .filter_map(|(_, (_, lp))| *lp)
            .sum()
    }
}

impl LanguageModel for HttpLm {
    fn continuation_logprobs(&self, prompt: &str, continuation: &str) -> Result<Vec<f64>, GatewayError> {
        let full = format!("{prompt}{continuation}");
        let prompt_chars = prompt.chars().count();
        let full_chars = full.chars().count();
        match self.config.scoring {
            ScoringStrategy::Unsupported => {
                Err(GatewayError::Capability("log-probability scoring".into()))
            }
            ScoringStrategy::EchoOffsets => {
                let block = self.echo(&full)?;
                if block.text_offset.len() != block.tokens.len() {
                    return Err(GatewayError::Protocol(
                        "echo response lacks text_offset; use the two_call_difference strategy".into(),
                    ));
                }
                let mut out = Vec::new();
                for ((tok, lp), &offset) in block.tokens.iter().zip(&block.token_logprobs).zip(&block.text_offset) {
                    let end = offset + tok.chars().count();
                    // skip prompt tokens and anything generated past the echo
                    if end <= prompt_chars || offset >= full_chars {
                        continue;
                    }
                    out.push(lp.ok_or_else(|| {
                        GatewayError::Protocol("null log-probability on a continuation token".into())
                    })?);
                }
                if out.is_empty() {
                    return Err(GatewayError::Protocol("no continuation tokens found in echo".into()));
                }
                Ok(out)
            }
            ScoringStrategy::TwoCallDifference => {
                let with = self.echo(&full)?;
                let without = self.echo(prompt)?;
                let total_with = if with.text_offset.is_empty() {
                    // without offsets the final token is the generated one
                    with.token_logprobs[..with.token_logprobs.len().saturating_sub(1)]
                        .iter()
                        .flatten()
                        .sum()
                } else {
                    Self::echoed_total(&with, full_chars)
                };
                let total_without = if without.text_offset.is_empty() {
                    without.token_logprobs[..without.token_logprobs.len().saturating_sub(1)]
                        .iter()
                        .flatten()
                        .sum()
                } else {
                    Self::echoed_total(&without, prompt_chars)
                };
                Ok(vec![total_with - total_without])
            }
        }
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, GatewayError> {
        params.validate()?;
        match self.config.mode {
            ApiMode::Completion => {
                let choice = self.completion(&CompletionRequest {
                    model: &self.config.model,
                    prompt,
                    max_tokens: params.max_tokens,
                    temperature: params.temperature,
                    logprobs: None,
                    echo: false,
                    stop: &params.stop,
                    seed: params.seed,
                })?;
                Ok(Generation {
                    text: choice.text,
                    finish_reason: finish(choice.finish_reason.as_deref()),
                    token_logprobs: choice
                        .logprobs
                        .map(|b| b.token_logprobs.into_iter().flatten().collect()),
                })
            }
            ApiMode::Chat => {
                let url = http::join_url(&self.config.base_url, "chat/completions");
                let body = ChatRequest {
                    model: &self.config.model,
                    messages: [ChatMessage {
                        role: "user",
                        content: prompt,
                    }],
                    max_tokens: params.max_tokens,
                    temperature: params.temperature,
                    stop: &params.stop,
                    seed: params.seed,
                };
                let resp: ChatResponse =
                    http::post_json(&self.agent, &url, self.config.api_key.as_deref(), &body)?;
                let choice = resp
                    .choices
                    .into_iter()
                    .next()
                    .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
                Ok(Generation {
                    text: choice.message.content.unwrap_or_default(),
                    finish_reason: finish(choice.finish_reason.as_deref()),
                    token_logprobs: None,
                })
            }
        }
    }
}
