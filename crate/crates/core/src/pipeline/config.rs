//! Experiment configuration (TOML).
//!
//! Relative paths are resolved against the config file's directory.
//!
//! ```toml
//! out_dir = "runs/demo"
//! conditions = ["before_rag", "after_rag_wikitext103"]   # default: all six
//! parallelism = 4
//!
//! [seeds]
//! sampling = 13      # corpus subsampling
//! templates = 42     # descriptor template choice
//! embedding = 7      # hash embedder
//!
//! [datasets]
//! scw = "data/scw.jsonl"
//! bold = "data/bold.jsonl"
//! holistic = "data/holistic.jsonl"
//!
//! [corpora.wikitext103]
//! path = "corpora/wikitext103.txt"
//! format = "plain-lines"
//!
//! [retrieval]
//! k = 5
//! chunk_size = 250
//!
//! [embedder]
//! kind = "hash"      # or "http" with url = "..."
//!
//! [llm]
//! kind = "mock"      # "echo", or "http" with base_url / model
//! fixture = "mock.json"
//!
//! [scorer]
//! kind = "lexicon"   # "http" with url, or "replay" with fixture
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::corpus::{CorpusFormat, DEFAULT_CHUNK_SIZE};
use crate::dataset::{Condition, RetrievalCorpus};
use crate::gateway::{ApiMode, LengthNormalization, ScoringStrategy, DEFAULT_MAX_TOKENS_COT, DEFAULT_MAX_TOKENS_OPEN};
use crate::index::DEFAULT_TOP_K;
use crate::metrics::VarianceKind;
use crate::prompting::PromptOptions;

pub const DEFAULT_API_KEY_ENV: &str = "RAGBIAS_API_KEY";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub sampling: Option<u64>,
    pub templates: Option<u64>,
    pub embedding: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Datasets {
    pub scw: Option<PathBuf>,
    pub bold: Option<PathBuf>,
    /// Optional sub-group whitelist for `bold`: JSON object of bias type to list.
    pub bold_subgroups: Option<PathBuf>,
    pub holistic: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default = "default_text_field")]
    pub text_field: String,
    #[serde(default)]
    pub id_field: Option<String>,
    /// Keep each document with this probability.
    #[serde(default = "one")]
    pub sample_fraction: f64,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::PlainLines
}

fn default_text_field() -> String {
    "text".into()
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Retrieval {
    pub k: usize,
    pub chunk_size: usize,
}

impl Default for Retrieval {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            chunk_size: DEFAULT_CHUNK_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hash {
        #[serde(default = "default_hash_dim")]
        dim: usize,
    },
    Http {
        url: String,
        #[serde(default)]
        dim: Option<usize>,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_hash_dim() -> usize {
    256
}

fn default_timeout() -> u64 {
    120
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hash { dim: default_hash_dim() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LlmConfig {
    Mock {
        fixture: PathBuf,
    },
    /// Answers with the first retrieved document (no scoring).
    Echo {
        #[serde(default)]
        cot: bool,
    },
    Http {
        base_url: String,
        model: String,
        #[serde(default)]
        mode: ApiMode,
        #[serde(default)]
        scoring: ScoringStrategy,
        /// Environment variable holding the bearer token.
        #[serde(default = "default_key_env")]
        api_key_env: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.into()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScorerConfig {
    #[default]
    Lexicon,
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Replay {
        fixture: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub max_tokens: u32,
    pub cot_max_tokens: u32,
    pub answer_max_tokens: u32,
    pub temperature: f64,
    pub seed: Option<u64>,
    pub retries: u32,
    pub normalization: LengthNormalization,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS_OPEN,
            cot_max_tokens: DEFAULT_MAX_TOKENS_COT,
            answer_max_tokens: 16,
            temperature: 0.0,
            seed: None,
            retries: 2,
            normalization: LengthNormalization::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaithfulnessConfig {
    /// Multiplier for metric scores in the plot CSV.
    pub plot_scale: f64,
}

impl Default for FaithfulnessConfig {
    fn default() -> Self {
        Self { plot_scale: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub out_dir: PathBuf,
    #[serde(default = "all_conditions")]
    pub conditions: Vec<Condition>,
    #[serde(default = "one_usize")]
    pub parallelism: usize,
    #[serde(default = "default_threshold")]
    pub toxicity_threshold: f64,
    #[serde(default)]
    pub variance: VarianceKind,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default)]
    pub datasets: Datasets,
    #[serde(default)]
    pub corpora: BTreeMap<RetrievalCorpus, CorpusConfig>,
    #[serde(default)]
    pub retrieval: Retrieval,
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub llm: LlmConfig,
    #[serde(default)]
    pub scorer: ScorerConfig,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub prompt: PromptOptions,
    #[serde(default)]
    pub faithfulness: FaithfulnessConfig,
}

fn all_conditions() -> Vec<Condition> {
    Condition::ALL.to_vec()
}

fn one_usize() -> usize {
    1
}

fn default_threshold() -> f64 {
    crate::scorers::DEFAULT_TOXICITY_THRESHOLD
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub k: Option<usize>,
    pub chunk_size: Option<usize>,
    pub conditions: Option<Vec<Condition>>,
    /// Replaces every configured seed.
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub mock_fixture: Option<PathBuf>,
    pub plot_scale: Option<f64>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.out_dir);
        for p in [
            &mut self.datasets.scw,
            &mut self.datasets.bold,
            &mut self.datasets.bold_subgroups,
            &mut self.datasets.holistic,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
        for c in self.corpora.values_mut() {
            resolve(base, &mut c.path);
        }
        if let LlmConfig::Mock { fixture } = &mut self.llm {
            resolve(base, fixture);
        }
        if let ScorerConfig::Replay { fixture } = &mut self.scorer {
            resolve(base, fixture);
        }
    }

    /// Applies overrides; paths in overrides are taken as given.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(k) = o.k {
            self.retrieval.k = k;
        }
        if let Some(n) = o.chunk_size {
            self.retrieval.chunk_size = n;
        }
        if let Some(c) = &o.conditions {
            self.conditions = c.clone();
        }
        if let Some(s) = o.seed {
            self.seeds = Seeds {
                sampling: Some(s),
                templates: Some(s),
                embedding: Some(s),
            };
            self.decoding.seed = Some(s);
        }
        if let Some(p) = o.parallelism {
            self.parallelism = p;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(f) = &o.mock_fixture {
            self.llm = LlmConfig::Mock { fixture: f.clone() };
        }
        if let Some(s) = o.plot_scale {
            self.faithfulness.plot_scale = s;
        }
        self.conditions = Condition::canonical_order(&self.conditions);
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        if self.retrieval.k < 1 {
            return err("retrieval.k must be at least 1".into());
        }
        if self.retrieval.chunk_size < 1 {
            return err("retrieval.chunk_size must be at least 1".into());
        }
        if self.parallelism < 1 {
            return err("parallelism must be at least 1".into());
        }
        if self.conditions.is_empty() {
            return err("no conditions selected".into());
        }
        if !(0.0..=1.0).contains(&self.toxicity_threshold) {
            return err(format!("toxicity_threshold {} outside [0, 1]", self.toxicity_threshold));
        }
        for c in &self.conditions {
            if let Some(corpus) = c.corpus() {
                if !self.corpora.contains_key(&corpus) {
                    return err(format!("condition {c} needs [corpora.{corpus}] to be configured"));
                }
            }
        }
        for (name, c) in &self.corpora {
            if !(c.sample_fraction > 0.0 && c.sample_fraction <= 1.0) {
                return err(format!("corpora.{name}.sample_fraction must be in (0, 1]"));
            }
            if c.sample_fraction < 1.0 && self.seeds.sampling.is_none() {
                return err(format!("corpora.{name} is subsampled but seeds.sampling is not set"));
            }
        }
        if self.datasets.holistic.is_some() && self.seeds.templates.is_none() {
            return err("datasets.holistic requires seeds.templates".into());
        }
        if matches!(self.embedder, EmbedderConfig::Hash { .. })
            && self.conditions.iter().any(|c| c.uses_retrieval())
            && self.seeds.embedding.is_none()
        {
            return err("the hash embedder requires seeds.embedding".into());
        }
        if let EmbedderConfig::Hash { dim: 0 } = self.embedder {
            return err("embedder.dim must be positive".into());
        }
        if self.datasets.scw.is_none() && self.datasets.bold.is_none() && self.datasets.holistic.is_none() {
            return err("no datasets configured".into());
        }
        if self.decoding.max_tokens < 1 || self.decoding.cot_max_tokens < 1 || self.decoding.answer_max_tokens < 1 {
            return err("decoding token limits must be at least 1".into());
        }
        if !self.decoding.temperature.is_finite() || self.decoding.temperature < 0.0 {
            return err("decoding.temperature must be >= 0".into());
        }
        if !self.faithfulness.plot_scale.is_finite() {
            return err("faithfulness.plot_scale must be finite".into());
        }
        Ok(())
    }

    /// Hash of the resolved configuration.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
out_dir = "out"
[seeds]
embedding = 1
[datasets]
scw = "scw.jsonl"
[corpora.wikitext103]
path = "wiki.txt"
[corpora.c4]
path = "c4.jsonl"
format = "jsonl"
[llm]
kind = "mock"
fixture = "mock.json"
"#;

    #[test]
    fn parses_defaults_and_resolves_paths() {
        let cfg = ExperimentConfig::from_toml(MINIMAL, Path::new("/base")).unwrap();
        assert_eq!(cfg.retrieval, Retrieval { k: 5, chunk_size: 250 });
        assert_eq!(cfg.conditions, Condition::ALL.to_vec());
        assert_eq!(cfg.out_dir, PathBuf::from("/base/out"));
        assert_eq!(cfg.datasets.scw.as_deref(), Some(Path::new("/base/scw.jsonl")));
        assert_eq!(cfg.corpora[&RetrievalCorpus::C4].format, CorpusFormat::JsonlWithTextField);
        assert_eq!(cfg.scorer, ScorerConfig::Lexicon);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_errors() {
        let base = ExperimentConfig::from_toml(MINIMAL, Path::new("/b")).unwrap();
        let mut c = base.clone();
        c.apply(&Overrides {
            k: Some(0),
            ..Default::default()
        });
        assert!(c.validate().is_err());

        let mut c = base.clone();
        c.corpora.remove(&RetrievalCorpus::C4);
        assert!(c.validate().unwrap_err().to_string().contains("corpora.c4"));

        let mut c = base.clone();
        c.corpora.get_mut(&RetrievalCorpus::C4).unwrap().sample_fraction = 0.5;
        assert!(c.validate().is_err());
        c.seeds.sampling = Some(3);
        c.validate().unwrap();

        assert!(ExperimentConfig::from_toml("out_dir = 1", Path::new("/")).is_err());
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\nbogus = 1"), Path::new("/")).is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut c = ExperimentConfig::from_toml(MINIMAL, Path::new("/b")).unwrap();
        let h = c.hash();
        c.apply(&Overrides {
            seed: Some(9),
            conditions: Some(vec![Condition::BeforeRagCot, Condition::BeforeRag]),
            mock_fixture: Some("/x.json".into()),
            ..Default::default()
        });
        assert_eq!(c.conditions, vec![Condition::BeforeRag, Condition::BeforeRagCot]);
        assert_eq!(c.seeds.templates, Some(9));
        assert_eq!(c.llm, LlmConfig::Mock { fixture: "/x.json".into() });
        assert_ne!(c.hash(), h);
    }
}
