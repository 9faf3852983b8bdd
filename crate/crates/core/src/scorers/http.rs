//! Client for the classifier service: `POST /score`, `GET /health`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ScoreError, Scorer, ScorerOutput};
use crate::http::{self, HttpFailure};

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    texts: &'a [String],
}

/// `GET /health` body. `models` maps model role to readiness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub models: BTreeMap<String, bool>,
}

impl Health {
    pub fn is_ready(&self) -> bool {
        matches!(self.status.as_str(), "ok" | "ready") && self.models.values().all(|r| *r)
    }
}

impl From<HttpFailure> for ScoreError {
    fn from(f: HttpFailure) -> Self {
        ScoreError::Transport {
            retryable: f.retryable,
            message: f.message,
        }
    }
}

pub struct HttpScorer {
    agent: ureq::Agent,
    base_url: String,
    batch_size: usize,
    retries: u32,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            agent: http::agent(timeout),
            base_url: base_url.into(),
            batch_size: 32,
            retries: 2,
        }
    }

    pub fn with_batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn health(&self) -> Result<Health, ScoreError> {
        let url = http::join_url(&self.base_url, "health");
        Ok(http::get_json(&self.agent, &url)?)
    }

    fn score_batch(&self, texts: &[String]) -> Result<Vec<ScorerOutput>, ScoreError> {
        let url = http::join_url(&self.base_url, "score");
        let body = ScoreRequest { texts };
        let out: Vec<ScorerOutput> =
            http::with_retries(self.retries, || http::post_json(&self.agent, &url, None, &body))?;
        if out.len() != texts.len() {
            return Err(ScoreError::Protocol(format!(
                "sent {} texts, got {} outputs",
                texts.len(),
                out.len()
            )));
        }
        for (i, o) in out.iter().enumerate() {
            o.validate()
                .map_err(|e| ScoreError::Protocol(format!("output {i}: {e}")))?;
        }
        Ok(out)
    }
}

impl Scorer for HttpScorer {
    fn score(&self, texts: &[String]) -> Result<Vec<ScorerOutput>, ScoreError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            out.extend(self.score_batch(batch)?);
        }
        Ok(out)
    }
}
