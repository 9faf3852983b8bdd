//! Replays recorded classifier-service exchanges.
//!
//! Fixture layout: a JSON array of `{"request": {"texts": [...]},
//! "response": [ScorerOutput, ...]}` records, exactly as sent to and returned
//! by `POST /score`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use super::{ScoreError, Scorer, ScorerOutput};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub request: RecordedRequest,
    /// Response body bytes as recorded.
    pub response: Box<RawValue>,
}

/// Answers each text from the recorded exchange that contained it.
#[derive(Debug, Clone)]
pub struct ReplayScorer {
    records: Vec<ReplayRecord>,
    by_text: HashMap<String, ScorerOutput>,
}

impl ReplayScorer {
    pub fn from_records(records: Vec<ReplayRecord>) -> Result<Self, ScoreError> {
        let mut by_text = HashMap::new();
        for (r, rec) in records.iter().enumerate() {
            let outputs: Vec<ScorerOutput> = serde_json::from_str(rec.response.get())
                .map_err(|e| ScoreError::Protocol(format!("record {r}: {e}")))?;
            if outputs.len() != rec.request.texts.len() {
                return Err(ScoreError::Protocol(format!(
                    "record {r}: {} texts but {} outputs",
                    rec.request.texts.len(),
                    outputs.len()
                )));
            }
            for (text, out) in rec.request.texts.iter().zip(outputs) {
                out.validate()
                    .map_err(|e| ScoreError::Protocol(format!("record {r}: {e}")))?;
                by_text.entry(text.clone()).or_insert(out);
            }
        }
        Ok(Self { records, by_text })
    }

    pub fn load(path: &Path) -> Result<Self, ScoreError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| ScoreError::Protocol(format!("{}: {e}", path.display())))?;
        let records: Vec<ReplayRecord> = serde_json::from_str(&raw)
            .map_err(|e| ScoreError::Protocol(format!("{}: {e}", path.display())))?;
        Self::from_records(records)
    }

    pub fn records(&self) -> &[ReplayRecord] {
        &self.records
    }
}

impl Scorer for ReplayScorer {
    fn score(&self, texts: &[String]) -> Result<Vec<ScorerOutput>, ScoreError> {
        texts
            .iter()
            .map(|t| {
                self.by_text
                    .get(t)
                    .cloned()
                    .ok_or_else(|| ScoreError::NotRecorded(t.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::uniform_output;

    #[test]
    fn replays_recorded_outputs() {
        let body = serde_json::to_string(&vec![uniform_output()]).unwrap();
        let rec = ReplayRecord {
            request: RecordedRequest {
                texts: vec!["hi".into()],
            },
            response: RawValue::from_string(body).unwrap(),
        };
        let s = ReplayScorer::from_records(vec![rec]).unwrap();
        assert_eq!(s.score(&["hi".into()]).unwrap(), vec![uniform_output()]);
        assert!(matches!(s.score(&["other".into()]), Err(ScoreError::NotRecorded(_))));
    }

    #[test]
    fn rejects_length_mismatch() {
        let body = serde_json::to_string(&vec![uniform_output()]).unwrap();
        let rec = ReplayRecord {
            request: RecordedRequest {
                texts: vec!["a".into(), "b".into()],
            },
            response: RawValue::from_string(body).unwrap(),
        };
        assert!(ReplayScorer::from_records(vec![rec]).is_err());
    }
}
