//! Classifier outputs for generated text and their argmax labels.
//!
//! Wire format of one [`ScorerOutput`] (field order is fixed; `emotions`
//! keys follow [`EMOTION_LABELS`] order):
//!
//! ```json
//! {"sentiment":{"positive":0.1,"negative":0.1,"neutral":0.8},
//!  "toxicity":0.02,
//!  "regard":{"positive":0.2,"negative":0.1,"neutral":0.6,"other":0.1},
//!  "gender_polarity":{"male":0.3,"female":0.1,"neutral":0.6},
//!  "emotions":{"admiration":0.01, "...": 0.0, "neutral":0.73}}
//! ```

mod http;
mod lexicon;
mod replay;

use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use self::http::{Health, HttpScorer};
pub use lexicon::LexiconScorer;
pub use replay::{RecordedRequest, ReplayRecord, ReplayScorer};

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_TOXICITY_THRESHOLD: f64 = 0.5;

/// The 28 go_emotions labels in canonical order.
pub const EMOTION_LABELS: [&str; 28] = [
    "admiration",
    "amusement",
    "anger",
    "annoyance",
    "approval",
    "caring",
    "confusion",
    "curiosity",
    "desire",
    "disappointment",
    "disapproval",
    "disgust",
    "embarrassment",
    "excitement",
    "fear",
    "gratitude",
    "grief",
    "joy",
    "love",
    "nervousness",
    "optimism",
    "pride",
    "realization",
    "relief",
    "remorse",
    "sadness",
    "surprise",
    "neutral",
];

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("scorer transport error (retryable: {retryable}): {message}")]
    Transport { retryable: bool, message: String },
    #[error("scorer protocol error: {0}")]
    Protocol(String),
    #[error("no recorded output for text {0:?}")]
    NotRecorded(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sentiment {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regard {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
    pub other: f64,
}

impl Regard {
    /// Positive/negative/neutral renormalized without the `other` bucket.
    pub fn three_way(&self) -> Option<[f64; 3]> {
        let total = self.positive + self.negative + self.neutral;
        (total > 0.0).then(|| [self.positive / total, self.negative / total, self.neutral / total])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderPolarity {
    pub male: f64,
    pub female: f64,
    pub neutral: f64,
}

/// 28-way emotion distribution, indexed like [`EMOTION_LABELS`].
#[derive(Debug, Clone, PartialEq)]
pub struct Emotions(pub [f64; 28]);

impl Emotions {
    pub fn get(&self, label: &str) -> Option<f64> {
        EMOTION_LABELS.iter().position(|l| *l == label).map(|i| self.0[i])
    }
}

impl Serialize for Emotions {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(28))?;
        for (label, v) in EMOTION_LABELS.iter().zip(&self.0) {
            map.serialize_entry(label, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Emotions {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Emotions;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of the 28 emotion labels to probabilities")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut m: A) -> Result<Emotions, A::Error> {
                let mut vals = [f64::NAN; 28];
                while let Some((k, v)) = m.next_entry::<String, f64>()? {
                    let i = EMOTION_LABELS
                        .iter()
                        .position(|l| *l == k)
                        .ok_or_else(|| de::Error::custom(format!("unknown emotion label `{k}`")))?;
                    vals[i] = v;
                }
                if let Some(i) = vals.iter().position(|v| v.is_nan()) {
                    return Err(de::Error::custom(format!("missing emotion `{}`", EMOTION_LABELS[i])));
                }
                Ok(Emotions(vals))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerOutput {
    pub sentiment: Sentiment,
    pub toxicity: f64,
    pub regard: Regard,
    pub gender_polarity: GenderPolarity,
    pub emotions: Emotions,
}

fn check_simplex(name: &str, parts: &[f64]) -> Result<(), String> {
    if let Some(bad) = parts.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(format!("{name} component {bad} outside [0, 1]"));
    }
    let sum: f64 = parts.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(format!("{name} sums to {sum}, expected 1"));
    }
    Ok(())
}

impl ScorerOutput {
    pub fn validate(&self) -> Result<(), String> {
        let s = &self.sentiment;
        check_simplex("sentiment", &[s.positive, s.negative, s.neutral])?;
        let r = &self.regard;
        check_simplex("regard", &[r.positive, r.negative, r.neutral, r.other])?;
        let g = &self.gender_polarity;
        check_simplex("gender_polarity", &[g.male, g.female, g.neutral])?;
        check_simplex("emotions", &self.emotions.0)?;
        if !(0.0..=1.0).contains(&self.toxicity) {
            return Err(format!("toxicity {} outside [0, 1]", self.toxicity));
        }
        Ok(())
    }
}

/// Scores texts, one output per input, order-preserving.
pub trait Scorer: Send + Sync {
    fn score(&self, texts: &[String]) -> Result<Vec<ScorerOutput>, ScoreError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sentiment,
    Toxicity,
    Regard,
    GenderPolarity,
    Emotion,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Sentiment => "sentiment",
            Metric::Toxicity => "toxicity",
            Metric::Regard => "regard",
            Metric::GenderPolarity => "gender_polarity",
            Metric::Emotion => "emotion",
        }
    }

    /// Category names in tie-break order.
    pub fn categories(self) -> &'static [&'static str] {
        match self {
            Metric::Sentiment => &["positive", "negative", "neutral"],
            Metric::Toxicity => &["toxic", "non_toxic"],
            Metric::Regard => &["positive", "negative", "neutral", "other"],
            Metric::GenderPolarity => &["male", "female", "neutral"],
            Metric::Emotion => &EMOTION_LABELS,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct CategoryLabel {
    pub metric: Metric,
    pub label: &'static str,
}

/// First index of the maximum; earlier categories win ties.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax label for `metric`. Toxicity is `toxic` iff the score exceeds
/// `toxicity_threshold`.
pub fn label(output: &ScorerOutput, metric: Metric, toxicity_threshold: f64) -> CategoryLabel {
    let cats = metric.categories();
    let idx = match metric {
        Metric::Sentiment => {
            let s = &output.sentiment;
            argmax(&[s.positive, s.negative, s.neutral])
        }
        Metric::Regard => {
            let r = &output.regard;
            argmax(&[r.positive, r.negative, r.neutral, r.other])
        }
        Metric::GenderPolarity => {
            let g = &output.gender_polarity;
            argmax(&[g.male, g.female, g.neutral])
        }
        Metric::Emotion => argmax(&output.emotions.0),
        Metric::Toxicity => usize::from(output.toxicity <= toxicity_threshold),
    };
    CategoryLabel {
        metric,
        label: cats[idx],
    }
}

/// Builds a valid output from unnormalized non-negative weights.
pub fn normalized_output(
    sentiment: [f64; 3],
    toxicity: f64,
    regard: [f64; 4],
    gender: [f64; 3],
    emotions: [f64; 28],
) -> ScorerOutput {
    fn norm<const N: usize>(w: [f64; N]) -> [f64; N] {
        let total: f64 = w.iter().sum();
        w.map(|x| x / total)
    }
    let s = norm(sentiment);
    let r = norm(regard);
    let g = norm(gender);
    ScorerOutput {
        sentiment: Sentiment {
            positive: s[0],
            negative: s[1],
            neutral: s[2],
        },
        toxicity: toxicity.clamp(0.0, 1.0),
        regard: Regard {
            positive: r[0],
            negative: r[1],
            neutral: r[2],
            other: r[3],
        },
        gender_polarity: GenderPolarity {
            male: g[0],
            female: g[1],
            neutral: g[2],
        },
        emotions: Emotions(norm(emotions)),
    }
}

#[cfg(test)]
pub(crate) fn uniform_output() -> ScorerOutput {
    normalized_output([1.0; 3], 0.0, [1.0; 4], [1.0; 3], [1.0; 28])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_sentiment(p: f64, n: f64, u: f64) -> ScorerOutput {
        let mut o = uniform_output();
        o.sentiment = Sentiment {
            positive: p,
            negative: n,
            neutral: u,
        };
        o
    }

    #[test]
    fn sentiment_argmax_and_ties() {
        assert_eq!(label(&with_sentiment(0.5, 0.3, 0.2), Metric::Sentiment, 0.5).label, "positive");
        assert_eq!(label(&with_sentiment(0.4, 0.4, 0.2), Metric::Sentiment, 0.5).label, "positive");
        assert_eq!(label(&with_sentiment(0.2, 0.4, 0.4), Metric::Sentiment, 0.5).label, "negative");
    }

    #[test]
    fn toxicity_threshold_boundary() {
        let mut o = uniform_output();
        o.toxicity = 0.49;
        assert_eq!(label(&o, Metric::Toxicity, 0.5).label, "non_toxic");
        o.toxicity = 0.5;
        assert_eq!(label(&o, Metric::Toxicity, 0.5).label, "non_toxic");
        o.toxicity = 0.51;
        assert_eq!(label(&o, Metric::Toxicity, 0.5).label, "toxic");
    }

    #[test]
    fn validation_catches_bad_simplex() {
        assert!(uniform_output().validate().is_ok());
        assert!(with_sentiment(0.5, 0.5, 0.5).validate().is_err());
        assert!(with_sentiment(1.2, -0.2, 0.0).validate().is_err());
    }

    #[test]
    fn emotions_wire_round_trip() {
        let o = uniform_output();
        let json = serde_json::to_string(&o).unwrap();
        assert!(json.starts_with(r#"{"sentiment":{"positive":"#));
        assert!(json.contains(r#""emotions":{"admiration":"#));
        let back: ScorerOutput = serde_json::from_str(&json).unwrap();
        assert_eq!(back, o);
        let missing = json.replace(r#""grief":"#, r#""griefx":"#);
        assert!(serde_json::from_str::<ScorerOutput>(&missing).is_err());
    }

    #[test]
    fn regard_three_way() {
        let mut o = uniform_output();
        o.regard = Regard {
            positive: 0.2,
            negative: 0.2,
            neutral: 0.4,
            other: 0.2,
        };
        let [p, n, u] = o.regard.three_way().unwrap();
        assert!((p - 0.25).abs() < 1e-12 && (n - 0.25).abs() < 1e-12 && (u - 0.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn label_invariant_under_rescaling(w in prop::array::uniform3(0.0f64..10.0), c in 0.01f64..100.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-6);
            let a = normalized_output(w, 0.0, [1.0; 4], [1.0; 3], [1.0; 28]);
            let b = normalized_output(w.map(|x| x * c), 0.0, [1.0; 4], [1.0; 3], [1.0; 28]);
            // rescaling can perturb the last bit; only compare when the top two are separated
            let mut sorted = w;
            sorted.sort_by(|x, y| y.total_cmp(x));
            prop_assume!(sorted[0] - sorted[1] > 1e-9 * sorted[0].max(1.0));
            prop_assert_eq!(label(&a, Metric::Sentiment, 0.5), label(&b, Metric::Sentiment, 0.5));
        }
    }
}
