//! Stage orchestration: ingest, index, eval, faithfulness, correlate, report.
//!
//! Every stage writes under the configured output directory:
//!
//! | stage        | artifacts                                                        |
//! |--------------|------------------------------------------------------------------|
//! | ingest       | `chunks/{corpus}.jsonl`                                          |
//! | index        | `index/{corpus}.rbix`                                            |
//! | eval         | `eval/retrieval.jsonl`, `eval/scw.jsonl`, `eval/scw_bias.jsonl`, `eval/bold.jsonl`, `eval/holistic.jsonl` |
//! | faithfulness | `faithfulness/traces.jsonl`, `faithfulness/summary.json`, `faithfulness/plot.csv` |
//! | correlate    | `correlate/correlation.csv`                                      |
//! | report       | `reports/*.csv`                                                  |
//!
//! Stages other than `report` are skipped when a fingerprint of their inputs
//! (config subset plus input file contents) matches the previous run.

mod config;
mod eval;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{
    CorpusConfig, Datasets, Decoding, EmbedderConfig, ExperimentConfig, FaithfulnessConfig, LlmConfig, Overrides,
    Retrieval, ScorerConfig, Seeds, DEFAULT_API_KEY_ENV,
};
pub use eval::{GenerationRow, ItemStatus, RetrievalRow, ScwEvalRow};

use crate::corpus::{self, LoadOptions};
use crate::dataset::RetrievalCorpus;
use crate::gateway::{EchoLm, Gateway, HttpLm, HttpLmConfig, LanguageModel, MockLm};
use crate::index::{self, Embedder, HashEmbedder, HttpEmbedder, Index};
use crate::scorers::{HttpScorer, LexiconScorer, ReplayScorer, Scorer};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing {}; run the `{stage}` stage first", path.display())]
    Prerequisite { stage: &'static str, path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Prerequisite { .. } => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Index,
    Eval,
    Faithfulness,
    Correlate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Ingest,
        Stage::Index,
        Stage::Eval,
        Stage::Faithfulness,
        Stage::Correlate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Index => "index",
            Stage::Eval => "eval",
            Stage::Faithfulness => "faithfulness",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Item bookkeeping; `ok + failed + unparsed == loaded`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub loaded: usize,
    pub ok: usize,
    pub failed: usize,
    pub unparsed: usize,
    /// Input rows rejected before becoming items.
    pub rejected_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub cached: bool,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
    pub counts: BTreeMap<String, Counts>,
    pub seconds: f64,
}

impl StageRecord {
    pub fn failures(&self) -> usize {
        self.counts.values().map(|c| c.failed).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub stages: BTreeMap<Stage, StageRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn load(out_dir: &Path) -> Option<Self> {
        let raw = fs::read_to_string(out_dir.join(MANIFEST_FILE)).ok()?;
        serde_json::from_str(&raw).ok()
    }

    fn save(&self, out_dir: &Path) -> Result<(), PipelineError> {
        let body = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_atomic(&out_dir.join(MANIFEST_FILE), body.as_bytes())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r).expect("record serializes");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| PipelineError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Content hash of a file, or of every file under a directory.
pub(crate) fn hash_path(path: &Path) -> Result<String, PipelineError> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(io_err(path))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        let mut acc = String::new();
        for e in entries {
            acc.push_str(&e.file_name().unwrap_or_default().to_string_lossy());
            acc.push(':');
            acc.push_str(&hash_path(&e)?);
            acc.push('\n');
        }
        Ok(crate::sha256_hex(acc))
    } else {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Ok(crate::sha256_hex(bytes))
    }
}

fn fingerprint(stage: Stage, parts: &impl Serialize) -> String {
    let body = serde_json::to_string(&(stage, parts)).expect("fingerprint input serializes");
    crate::sha256_hex(body)
}

/// Runs stages against one configuration.
pub struct Pipeline {
    cfg: ExperimentConfig,
    force: bool,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, PipelineError> {
        cfg.validate()?;
        Ok(Self { cfg, force: false })
    }

    /// Re-run stages even when their fingerprint is unchanged.
    pub fn with_force(mut self, force: bool) -> Self {
        self.force = force;
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn out(&self, rel: &str) -> PathBuf {
        self.cfg.out_dir.join(rel)
    }

    pub(crate) fn require(&self, stage: &'static str, rel: &str) -> Result<PathBuf, PipelineError> {
        let p = self.out(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(PipelineError::Prerequisite { stage, path: p })
        }
    }

    /// Corpora needed by the selected conditions.
    pub fn corpora_in_use(&self) -> Vec<RetrievalCorpus> {
        let mut v: Vec<RetrievalCorpus> = self.cfg.conditions.iter().filter_map(|c| c.corpus()).collect();
        v.sort();
        v.dedup();
        v
    }

    /// Stages `run_all` executes for this configuration, in order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let retrieval = !self.corpora_in_use().is_empty();
        let cot = self.cfg.datasets.scw.is_some() && self.cfg.conditions.iter().any(|c| c.is_cot());
        Stage::ALL
            .into_iter()
            .filter(|s| match s {
                Stage::Ingest | Stage::Index => retrieval,
                Stage::Faithfulness => cot,
                Stage::Correlate => self.cfg.datasets.scw.is_some(),
                _ => true,
            })
            .collect()
    }

    pub fn run_all(&self) -> Result<Vec<(Stage, StageRecord)>, PipelineError> {
        self.planned_stages()
            .into_iter()
            .map(|s| self.run_stage(s).map(|r| (s, r)))
            .collect()
    }

    pub fn run_stage(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let start = Instant::now();
        let fp = self.stage_fingerprint(stage)?;
        let mut manifest = RunManifest::load(&self.cfg.out_dir).unwrap_or_default();
        if stage != Stage::Report && !self.force {
            if let Some(prev) = manifest.stages.get(&stage) {
                if prev.fingerprint == fp && prev.artifacts.iter().all(|a| self.out(a).exists()) {
                    log::info!("{stage}: inputs unchanged, reusing cached artifacts");
                    let mut rec = prev.clone();
                    rec.cached = true;
                    return Ok(rec);
                }
            }
        }
        log::info!("{stage}: running");
        let (artifacts, counts) = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Index => self.index()?,
            Stage::Eval => self.eval()?,
            Stage::Faithfulness => self.faithfulness()?,
            Stage::Correlate => self.correlate()?,
            Stage::Report => self.report()?,
        };
        let rec = StageRecord {
            fingerprint: fp,
            cached: false,
            artifacts,
            counts,
            seconds: start.elapsed().as_secs_f64(),
        };
        manifest.config_hash = self.cfg.hash();
        manifest.stages.insert(stage, rec.clone());
        manifest.save(&self.cfg.out_dir)?;
        Ok(rec)
    }

    fn stage_fingerprint(&self, stage: Stage) -> Result<String, PipelineError> {
        let cfg = &self.cfg;
        let optional_hash = |p: &Option<PathBuf>| -> Result<Option<String>, PipelineError> {
            p.as_deref().filter(|p| p.exists()).map(hash_path).transpose()
        };
        let out_hash = |rel: &str| -> Result<Option<String>, PipelineError> {
            let p = self.out(rel);
            p.exists().then(|| hash_path(&p)).transpose()
        };
        let corpora = self.corpora_in_use();
        let fp = match stage {
            Stage::Ingest => {
                let inputs = corpora
                    .iter()
                    .map(|c| {
                        let cc = &cfg.corpora[c];
                        Ok((c, cc, hash_path(&cc.path).ok()))
                    })
                    .collect::<Result<Vec<_>, PipelineError>>()?;
                fingerprint(stage, &(inputs, cfg.retrieval.chunk_size, cfg.seeds.sampling))
            }
            Stage::Index => {
                let chunks = corpora
                    .iter()
                    .map(|c| out_hash(&format!("chunks/{c}.jsonl")))
                    .collect::<Result<Vec<_>, _>>()?;
                fingerprint(stage, &(chunks, &cfg.embedder, cfg.seeds.embedding))
            }
            Stage::Eval | Stage::Faithfulness => {
                let indexes = corpora
                    .iter()
                    .map(|c| out_hash(&format!("index/{c}.rbix")))
                    .collect::<Result<Vec<_>, _>>()?;
                let llm_fixture = match &cfg.llm {
                    LlmConfig::Mock { fixture } => optional_hash(&Some(fixture.clone()))?,
                    _ => None,
                };
                let scorer_fixture = match &cfg.scorer {
                    ScorerConfig::Replay { fixture } => optional_hash(&Some(fixture.clone()))?,
                    _ => None,
                };
                let datasets = (
                    optional_hash(&cfg.datasets.scw)?,
                    optional_hash(&cfg.datasets.bold)?,
                    optional_hash(&cfg.datasets.bold_subgroups)?,
                    optional_hash(&cfg.datasets.holistic)?,
                );
                fingerprint(
                    stage,
                    &(
                        datasets,
                        indexes,
                        &cfg.conditions,
                        &cfg.llm,
                        llm_fixture,
                        &cfg.scorer,
                        scorer_fixture,
                        &cfg.embedder,
                        &cfg.seeds,
                        &cfg.decoding,
                        &cfg.prompt,
                        cfg.retrieval.k,
                        cfg.faithfulness.plot_scale,
                        cfg.toxicity_threshold,
                    ),
                )
            }
            Stage::Correlate => fingerprint(stage, &out_hash("eval/scw.jsonl")?),
            Stage::Report => fingerprint(stage, &cfg.hash()),
        };
        Ok(fp)
    }

    fn ingest(&self) -> Result<(Vec<String>, BTreeMap<String, Counts>), PipelineError> {
        let mut artifacts = Vec::new();
        let mut counts = BTreeMap::new();
        for c in self.corpora_in_use() {
            let cc = &self.cfg.corpora[&c];
            let mut opts = LoadOptions::new(cc.format, c.as_str());
            opts.text_field = cc.text_field.clone();
            opts.id_field = cc.id_field.clone();
            let loaded = corpus::load_corpus(&cc.path, &opts).map_err(|e| PipelineError::Config(e.to_string()))?;
            for w in &loaded.warnings {
                log::warn!("{c}: {w}");
            }
            for e in &loaded.record_errors {
                log::warn!("{c}: {}:{}: {}", e.file.display(), e.record, e.message);
            }
            let n_loaded = loaded.documents.len();
            let docs = if cc.sample_fraction < 1.0 {
                let seed = self.cfg.seeds.sampling.expect("validated");
                corpus::sample_documents(loaded.documents, cc.sample_fraction, seed)
            } else {
                loaded.documents
            };
            let chunks = corpus::chunk_corpus(&docs, self.cfg.retrieval.chunk_size);
            let rel = format!("chunks/{c}.jsonl");
            let path = self.out(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            corpus::write_chunk_manifest(&path, &chunks).map_err(|e| PipelineError::Data(e.to_string()))?;
            log::info!("{c}: {} documents ({} kept), {} chunks", n_loaded, docs.len(), chunks.len());
            counts.insert(
                c.to_string(),
                Counts {
                    loaded: n_loaded,
                    ok: docs.len(),
                    rejected_rows: loaded.record_errors.len(),
                    ..Default::default()
                },
            );
            artifacts.push(rel);
        }
        Ok((artifacts, counts))
    }

    fn index(&self) -> Result<(Vec<String>, BTreeMap<String, Counts>), PipelineError> {
        let embedder = self.embedder()?;
        let mut artifacts = Vec::new();
        let mut counts = BTreeMap::new();
        for c in self.corpora_in_use() {
            let chunks_path = self.require("ingest", &format!("chunks/{c}.jsonl"))?;
            let chunks = corpus::read_chunk_manifest(&chunks_path).map_err(|e| PipelineError::Data(e.to_string()))?;
            let texts: Vec<String> = chunks.iter().map(|ch| ch.text.clone()).collect();
            let vectors = embedder
                .embed(&texts)
                .map_err(|e| PipelineError::Data(format!("embedding {c}: {e}")))?;
            let idx = Index::build(&chunks, &vectors).map_err(|e| PipelineError::Data(format!("{c}: {e}")))?;
            let rel = format!("index/{c}.rbix");
            let path = self.out(&rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            index::persist(&idx, &path).map_err(|e| PipelineError::Data(e.to_string()))?;
            counts.insert(
                c.to_string(),
                Counts {
                    loaded: chunks.len(),
                    ok: chunks.len(),
                    ..Default::default()
                },
            );
            artifacts.push(rel);
        }
        Ok((artifacts, counts))
    }

    pub(crate) fn embedder(&self) -> Result<Box<dyn Embedder>, PipelineError> {
        Ok(match &self.cfg.embedder {
            EmbedderConfig::Hash { dim } => Box::new(HashEmbedder::new(*dim, self.cfg.seeds.embedding.unwrap_or(0))),
            EmbedderConfig::Http { url, dim, timeout_secs } => {
                let mut e = HttpEmbedder::new(url, Duration::from_secs(*timeout_secs))
                    .with_parallelism(self.cfg.parallelism)
                    .with_retries(self.cfg.decoding.retries);
                if let Some(d) = dim {
                    e = e.with_expected_dim(*d);
                }
                Box::new(e)
            }
        })
    }

    pub(crate) fn gateway(&self) -> Result<Gateway, PipelineError> {
        let backend: Arc<dyn LanguageModel> = match &self.cfg.llm {
            LlmConfig::Mock { fixture } => Arc::new(MockLm::from_file(fixture).map_err(PipelineError::Config)?),
            LlmConfig::Echo { cot } => Arc::new(EchoLm { cot: *cot }),
            LlmConfig::Http {
                base_url,
                model,
                mode,
                scoring,
                api_key_env,
                timeout_secs,
            } => Arc::new(HttpLm::new(HttpLmConfig {
                base_url: base_url.clone(),
                model: model.clone(),
                mode: *mode,
                scoring: *scoring,
                api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
                timeout_secs: *timeout_secs,
            })),
        };
        Ok(Gateway::new(backend)
            .with_retries(self.cfg.decoding.retries)
            .with_parallelism(self.cfg.parallelism)
            .with_normalization(self.cfg.decoding.normalization))
    }

    pub(crate) fn scorer(&self) -> Result<Box<dyn Scorer>, PipelineError> {
        Ok(match &self.cfg.scorer {
            ScorerConfig::Lexicon => Box::new(LexiconScorer),
            ScorerConfig::Http { url, timeout_secs } => Box::new(
                HttpScorer::new(url.clone(), Duration::from_secs(*timeout_secs)).with_retries(self.cfg.decoding.retries),
            ),
            ScorerConfig::Replay { fixture } => {
                Box::new(ReplayScorer::load(fixture).map_err(|e| PipelineError::Config(e.to_string()))?)
            }
        })
    }
}
