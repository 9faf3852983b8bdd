//! Evaluation and chain-of-thought probe stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;

use serde::{Deserialize, Serialize};

use super::{report, write_atomic, write_jsonl, Counts, Pipeline, PipelineError};
use crate::dataset::{self, Condition, MaskedItem, RetrievalCorpus, ScwCategory, SubgroupManifest};
use crate::faithfulness::{self, parse_cot, CotTrace, ProbeOptions};
use crate::gateway::{Gateway, GenerationParams};
use crate::index::{self, Embedder, Hit, Index};
use crate::metrics::ScwBiasRecord;
use crate::parallel::ordered_map;
use crate::prompting::{self, OpenEndedItem, RetrievedDoc};
use crate::scorers::{Scorer, ScorerOutput};

pub use crate::faithfulness::TraceStatus as ItemStatus;

const SCORE_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub dataset: String,
    pub item_id: String,
    pub corpus: RetrievalCorpus,
    pub hits: Vec<Hit>,
}

/// One masked-sentence item under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScwEvalRow {
    pub item_id: String,
    pub condition: Condition,
    pub bias_type: ScwCategory,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logp_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<f64>,
    /// Text generated for metric scoring (the full response under
    /// chain-of-thought conditions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScorerOutput>,
    pub retrieved_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

impl ScwEvalRow {
    pub fn record(&self) -> Option<ScwBiasRecord> {
        Some(ScwBiasRecord {
            item_id: self.item_id.clone(),
            condition: self.condition,
            bias_type: self.bias_type,
            logp_s: self.logp_s?,
            logp_a: self.logp_a?,
            bias: self.bias?,
        })
    }
}

/// One open-ended prompt under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub item_id: String,
    pub condition: Condition,
    pub group: String,
    pub subgroup: String,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<ScorerOutput>,
    pub retrieved_chunk_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

struct Retriever {
    indexes: BTreeMap<RetrievalCorpus, Index>,
    embedder: Box<dyn Embedder>,
    k: usize,
}

type DocTable = BTreeMap<(RetrievalCorpus, String), Vec<RetrievedDoc>>;

impl Retriever {
    fn load(p: &Pipeline) -> Result<Self, PipelineError> {
        let mut indexes = BTreeMap::new();
        for c in p.corpora_in_use() {
            let path = p.require("index", &format!("index/{c}.rbix"))?;
            let idx = index::load(&path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
            indexes.insert(c, idx);
        }
        Ok(Self {
            indexes,
            embedder: p.embedder()?,
            k: p.config().retrieval.k,
        })
    }

    /// Top-k documents for every `(item_id, query)` in every loaded corpus.
    fn retrieve(
        &self,
        dataset: &str,
        queries: &[(String, String)],
        rows: &mut Vec<RetrievalRow>,
    ) -> Result<DocTable, PipelineError> {
        let mut table = DocTable::new();
        if self.indexes.is_empty() || queries.is_empty() {
            return Ok(table);
        }
        let texts: Vec<String> = queries.iter().map(|(_, q)| q.clone()).collect();
        let vectors = self
            .embedder
            .embed(&texts)
            .map_err(|e| PipelineError::Data(format!("embedding {dataset} queries: {e}")))?;
        for (corpus, idx) in &self.indexes {
            for ((id, _), v) in queries.iter().zip(&vectors) {
                let (result, chunks) = idx
                    .search_with_chunks(id, v, self.k)
                    .map_err(|e| PipelineError::Data(format!("{corpus} search for {id}: {e}")))?;
                rows.push(RetrievalRow {
                    dataset: dataset.to_string(),
                    item_id: id.clone(),
                    corpus: *corpus,
                    hits: result.hits,
                });
                let docs = chunks
                    .into_iter()
                    .map(|c| RetrievedDoc {
                        chunk_id: c.chunk_id,
                        text: c.text,
                    })
                    .collect();
                table.insert((*corpus, id.clone()), docs);
            }
        }
        Ok(table)
    }
}

fn docs_for<'a>(table: &'a DocTable, cond: Condition, item_id: &str) -> &'a [RetrievedDoc] {
    cond.corpus()
        .and_then(|c| table.get(&(c, item_id.to_string())))
        .map_or(&[], Vec::as_slice)
}

/// Fills `scores` for every row with a generation; batches that fail are
/// retried text by text so one bad text does not sink its neighbours.
fn score_rows(
    scorer: &dyn Scorer,
    texts: Vec<(usize, String)>,
    mut apply: impl FnMut(usize, Result<ScorerOutput, String>),
) {
    for batch in texts.chunks(SCORE_BATCH) {
        let just_texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
        match scorer.score(&just_texts) {
            Ok(outs) => {
                for ((i, _), o) in batch.iter().zip(outs) {
                    apply(*i, Ok(o));
                }
            }
            Err(_) => {
                for (i, t) in batch {
                    let r = scorer
                        .score(std::slice::from_ref(t))
                        .map_err(|e| format!("scorer: {e}"))
                        .and_then(|mut v| v.pop().ok_or_else(|| "scorer: empty response".to_string()));
                    apply(*i, r);
                }
            }
        }
    }
}

fn tally<'a>(statuses: impl Iterator<Item = &'a ItemStatus>, rejected: usize) -> Counts {
    let mut c = Counts {
        rejected_rows: rejected,
        ..Default::default()
    };
    for s in statuses {
        c.loaded += 1;
        match s {
            ItemStatus::Ok => c.ok += 1,
            ItemStatus::Failed => c.failed += 1,
            ItemStatus::Unparsed => c.unparsed += 1,
        }
    }
    c
}

impl Pipeline {
    fn open_params(&self) -> GenerationParams {
        let d = &self.config().decoding;
        GenerationParams {
            max_tokens: d.max_tokens,
            temperature: d.temperature,
            stop: Vec::new(),
            seed: d.seed,
        }
    }

    fn probe_options(&self) -> ProbeOptions {
        let d = &self.config().decoding;
        let defaults = ProbeOptions::default();
        ProbeOptions {
            prompt: self.config().prompt.clone(),
            cot_params: GenerationParams {
                max_tokens: d.cot_max_tokens,
                ..self.open_params()
            },
            answer_params: GenerationParams {
                max_tokens: d.answer_max_tokens,
                temperature: d.temperature,
                seed: d.seed,
                ..defaults.answer_params
            },
        }
    }

    fn scw_items(&self) -> Result<Option<(Vec<MaskedItem>, usize)>, PipelineError> {
        let Some(path) = &self.config().datasets.scw else { return Ok(None) };
        let loaded = dataset::load_scw(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        for e in &loaded.row_errors {
            log::warn!("{}:{}: {}", path.display(), e.line, e.message);
        }
        Ok(Some((loaded.items, loaded.row_errors.len())))
    }

    pub(super) fn eval(&self) -> Result<(Vec<String>, BTreeMap<String, Counts>), PipelineError> {
        let cfg = self.config();
        let retriever = Retriever::load(self)?;
        let gateway = self.gateway()?;
        let scorer = self.scorer()?;
        let mut retrieval_rows = Vec::new();
        let mut artifacts = Vec::new();
        let mut counts = BTreeMap::new();
        fs::create_dir_all(self.out("eval")).map_err(super::io_err(&self.out("eval")))?;

        if let Some((items, rejected)) = self.scw_items()? {
            let queries: Vec<(String, String)> =
                items.iter().map(|i| (i.item_id.clone(), i.masked_sentence.clone())).collect();
            let docs = retriever.retrieve("scw", &queries, &mut retrieval_rows)?;
            let units = dataset::work_units(&items, &cfg.conditions);
            let mut rows = ordered_map(cfg.parallelism, &units, |u| {
                self.scw_unit(&gateway, u.item, u.condition, docs_for(&docs, u.condition, &u.item.item_id))
            });
            let texts = rows
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.generation.clone().map(|g| (i, g)))
                .collect();
            score_rows(scorer.as_ref(), texts, |i, r| match r {
                Ok(o) => rows[i].scores = Some(o),
                Err(e) => rows[i].errors.push(e),
            });
            let records: Vec<ScwBiasRecord> = rows.iter().filter_map(ScwEvalRow::record).collect();
            write_jsonl(&self.out("eval/scw.jsonl"), &rows)?;
            write_jsonl(&self.out("eval/scw_bias.jsonl"), &records)?;
            artifacts.extend(["eval/scw.jsonl".to_string(), "eval/scw_bias.jsonl".to_string()]);
            counts.insert("scw".to_string(), tally(rows.iter().map(|r| &r.status), rejected));
        }

        let open_conditions: Vec<Condition> = cfg.conditions.iter().copied().filter(|c| !c.is_cot()).collect();
        if let Some(path) = &cfg.datasets.bold {
            let manifest: Option<SubgroupManifest> = match &cfg.datasets.bold_subgroups {
                Some(p) => {
                    let raw = fs::read_to_string(p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
                    Some(serde_json::from_str(&raw).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?)
                }
                None => None,
            };
            let loaded = dataset::load_bold(path, manifest.as_ref()).map_err(|e| PipelineError::Config(e.to_string()))?;
            let labelled: Vec<(&(dyn OpenEndedItem + Sync), String, String)> = loaded
                .items
                .iter()
                .map(|i| (i as &(dyn OpenEndedItem + Sync), i.bias_type.to_string(), i.sub_group.clone()))
                .collect();
            let rows = self.open_eval("bold", &labelled, &open_conditions, &retriever, &gateway, scorer.as_ref(), &mut retrieval_rows)?;
            write_jsonl(&self.out("eval/bold.jsonl"), &rows)?;
            artifacts.push("eval/bold.jsonl".into());
            counts.insert("bold".into(), tally(rows.iter().map(|r| &r.status), loaded.row_errors.len()));
        }
        if let Some(path) = &cfg.datasets.holistic {
            let seed = cfg.seeds.templates.expect("validated");
            let loaded = dataset::load_holistic(path, seed).map_err(|e| PipelineError::Config(e.to_string()))?;
            let labelled: Vec<(&(dyn OpenEndedItem + Sync), String, String)> = loaded
                .items
                .iter()
                .map(|i| (i as &(dyn OpenEndedItem + Sync), i.axis.to_string(), i.descriptor.clone()))
                .collect();
            let rows = self.open_eval("holistic", &labelled, &open_conditions, &retriever, &gateway, scorer.as_ref(), &mut retrieval_rows)?;
            write_jsonl(&self.out("eval/holistic.jsonl"), &rows)?;
            artifacts.push("eval/holistic.jsonl".into());
            counts.insert("holistic".into(), tally(rows.iter().map(|r| &r.status), loaded.row_errors.len()));
        }
        write_jsonl(&self.out("eval/retrieval.jsonl"), &retrieval_rows)?;
        artifacts.push("eval/retrieval.jsonl".into());
        Ok((artifacts, counts))
    }

    fn scw_unit(&self, gateway: &Gateway, item: &MaskedItem, cond: Condition, docs: &[RetrievedDoc]) -> ScwEvalRow {
        let mut row = ScwEvalRow {
            item_id: item.item_id.clone(),
            condition: cond,
            bias_type: item.bias_type,
            status: ItemStatus::Failed,
            logp_s: None,
            logp_a: None,
            bias: None,
            generation: None,
            scores: None,
            retrieved_chunk_ids: docs.iter().map(|d| d.chunk_id.clone()).collect(),
            errors: Vec::new(),
        };
        let prompt = match prompting::render_scw(item, cond, docs, &self.config().prompt) {
            Ok(p) => p,
            Err(e) => {
                row.errors.push(e.to_string());
                return row;
            }
        };
        let candidates = [item.stereotype_word.as_str(), item.anti_stereotype_word.as_str()];
        let scoring_prompt = if cond.is_cot() {
            let params = self.probe_options().cot_params;
            let gen = match gateway.generate(&prompt, &params) {
                Ok(g) => g.text,
                Err(e) => {
                    row.errors.push(format!("generate: {e}"));
                    return row;
                }
            };
            let parsed = parse_cot(&gen);
            row.generation = Some(gen);
            let Some(parsed) = parsed else {
                row.status = ItemStatus::Unparsed;
                return row;
            };
            prompting::render_early_answer_logprob(&prompt, &parsed.explanation, item)
        } else {
            match gateway.generate(&prompt, &self.open_params()) {
                Ok(g) => row.generation = Some(g.text),
                Err(e) => row.errors.push(format!("generate: {e}")),
            }
            prompt
        };
        match gateway.score_candidates(&scoring_prompt, candidates) {
            Ok([s, a]) => match ScwBiasRecord::new(&item.item_id, cond, item.bias_type, s.log_prob, a.log_prob) {
                Ok(rec) => {
                    row.logp_s = Some(rec.logp_s);
                    row.logp_a = Some(rec.logp_a);
                    row.bias = Some(rec.bias);
                    row.status = ItemStatus::Ok;
                }
                Err(e) => row.errors.push(e.to_string()),
            },
            Err(e) => row.errors.push(format!("score: {e}")),
        }
        row
    }

    #[allow(clippy::too_many_arguments)]
    fn open_eval(
        &self,
        dataset: &str,
        items: &[(&(dyn OpenEndedItem + Sync), String, String)],
        conditions: &[Condition],
        retriever: &Retriever,
        gateway: &Gateway,
        scorer: &dyn Scorer,
        retrieval_rows: &mut Vec<RetrievalRow>,
    ) -> Result<Vec<GenerationRow>, PipelineError> {
        let queries: Vec<(String, String)> = items
            .iter()
            .map(|(i, _, _)| (i.item_id().to_string(), i.prompt_text().to_string()))
            .collect();
        let docs = retriever.retrieve(dataset, &queries, retrieval_rows)?;
        let units: Vec<(Condition, usize)> = conditions
            .iter()
            .flat_map(|c| (0..items.len()).map(move |i| (*c, i)))
            .collect();
        let params = self.open_params();
        let mut rows = ordered_map(self.config().parallelism, &units, |(cond, i)| {
            let (item, group, subgroup) = &items[*i];
            let d = docs_for(&docs, *cond, item.item_id());
            let mut row = GenerationRow {
                item_id: item.item_id().to_string(),
                condition: *cond,
                group: group.clone(),
                subgroup: subgroup.clone(),
                status: ItemStatus::Failed,
                generation: None,
                scores: None,
                retrieved_chunk_ids: d.iter().map(|x| x.chunk_id.clone()).collect(),
                errors: Vec::new(),
            };
            match prompting::render_open(*item, *cond, d, &self.config().prompt) {
                Ok(p) => match gateway.generate(&p, &params) {
                    Ok(g) => row.generation = Some(g.text),
                    Err(e) => row.errors.push(format!("generate: {e}")),
                },
                Err(e) => row.errors.push(e.to_string()),
            }
            row
        });
        let texts = rows
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.generation.clone().map(|g| (i, g)))
            .collect();
        score_rows(scorer, texts, |i, r| match r {
            Ok(o) => {
                rows[i].scores = Some(o);
                rows[i].status = ItemStatus::Ok;
            }
            Err(e) => rows[i].errors.push(e),
        });
        Ok(rows)
    }

    pub(super) fn faithfulness(&self) -> Result<(Vec<String>, BTreeMap<String, Counts>), PipelineError> {
        let cfg = self.config();
        let Some((items, rejected)) = self.scw_items()? else {
            return Err(PipelineError::Config("the faithfulness stage needs datasets.scw".into()));
        };
        let cot: Vec<Condition> = cfg.conditions.iter().copied().filter(|c| c.is_cot()).collect();
        if cot.is_empty() {
            return Err(PipelineError::Config("no chain-of-thought condition selected".into()));
        }
        let retriever = Retriever::load(self)?;
        let gateway = self.gateway()?;
        let scorer = self.scorer()?;
        let queries: Vec<(String, String)> =
            items.iter().map(|i| (i.item_id.clone(), i.masked_sentence.clone())).collect();
        let mut unused = Vec::new();
        let docs = retriever.retrieve("scw", &queries, &mut unused)?;
        let opts = self.probe_options();
        let units = dataset::work_units(&items, &cot);
        let traces: Vec<CotTrace> = ordered_map(cfg.parallelism, &units, |u| {
            faithfulness::run_trace(
                &gateway,
                Some(scorer.as_ref()),
                u.item,
                u.condition,
                docs_for(&docs, u.condition, &u.item.item_id),
                &opts,
            )
        });
        let summary = faithfulness::summarize(&traces, cfg.toxicity_threshold);
        write_jsonl(&self.out("faithfulness/traces.jsonl"), &traces)?;
        let body = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_atomic(&self.out("faithfulness/summary.json"), body.as_bytes())?;
        let plot = faithfulness::plot_rows(&traces, cfg.faithfulness.plot_scale);
        report::write_plot_csv(&self.out("faithfulness/plot.csv"), &plot)?;
        let statuses: BTreeSet<_> = traces.iter().map(|t| t.status).collect();
        log::info!("faithfulness: {} traces, statuses {statuses:?}", traces.len());
        let counts = BTreeMap::from([("scw".to_string(), tally(traces.iter().map(|t| &t.status), rejected))]);
        Ok((
            vec![
                "faithfulness/traces.jsonl".into(),
                "faithfulness/summary.json".into(),
                "faithfulness/plot.csv".into(),
            ],
            counts,
        ))
    }
}
