//! Correlation and report stages, plus the CSV writers they share.

use std::collections::BTreeMap;
use std::path::Path;

use super::eval::{GenerationRow, ScwEvalRow};
use super::{read_jsonl, write_atomic, Counts, Pipeline, PipelineError};
use crate::dataset::{BoldCategory, Condition, HolisticAxis, ScwCategory};
use crate::faithfulness::{self, co_occurrence_columns, AnswerMethod, CotTrace, Inclination, PlotRow};
use crate::metrics::{
    bold_table, correlation_table, holistic_table, scw_table, BoldColumn, CorrelationInput, CorrelationMatrix,
    GenerationRecord, ScwBiasRecord,
};

/// Cell text for values that cannot be computed.
pub const UNDEFINED: &str = "undefined";

type Stage = Result<(Vec<String>, BTreeMap<String, Counts>), PipelineError>;

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Data(format!("{}: {e}", path.display()))
}

fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    let bytes = w.into_inner().map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_plot_csv(path: &Path, rows: &[PlotRow]) -> Result<(), PipelineError> {
    let header: Vec<String> = [
        "item_id",
        "condition",
        "checkpoint",
        "method",
        "inclination",
        "bias_magnitude",
        "sentiment_negative",
        "regard_negative",
        "gender_male",
        "gender_female",
        "toxicity",
    ]
    .map(String::from)
    .to_vec();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.item_id.clone(),
                r.condition.tag(),
                r.checkpoint.as_str().to_string(),
                r.method.as_str().to_string(),
                r.inclination.as_str().to_string(),
                opt(r.bias_magnitude),
                opt(r.sentiment_negative),
                opt(r.regard_negative),
                opt(r.gender_male),
                opt(r.gender_female),
                opt(r.toxicity),
            ]
        })
        .collect();
    write_table(path, &header, &body)
}

/// Scored generations, skipping rows that failed.
fn generation_records(rows: Vec<GenerationRow>) -> Vec<GenerationRecord> {
    rows.into_iter()
        .filter_map(|r| {
            Some(GenerationRecord {
                item_id: r.item_id,
                condition: r.condition,
                group: r.group,
                subgroup: r.subgroup,
                generation: r.generation?,
                scores: r.scores?,
            })
        })
        .collect()
}

fn correlation_inputs(rows: &[ScwEvalRow]) -> Vec<CorrelationInput> {
    rows.iter()
        .map(|r| CorrelationInput {
            item_id: r.item_id.clone(),
            condition: r.condition,
            bias: r.bias,
            scores: r.scores.clone(),
        })
        .collect()
}

pub fn scw_rows(records: &[ScwBiasRecord]) -> (Vec<String>, Vec<Vec<String>>) {
    let table = scw_table(records);
    let mut header = vec!["bias_type".to_string()];
    header.extend(table.iter().map(|(c, _)| c.tag()));
    let mut rows = Vec::new();
    for &bt in ScwCategory::ALL {
        if !table.iter().any(|(_, a)| a.per_type.contains_key(&bt)) {
            continue;
        }
        let mut row = vec![bt.to_string()];
        row.extend(table.iter().map(|(_, a)| cell(a.per_type.get(&bt).map(|g| g.mean))));
        rows.push(row);
    }
    let mut item_mean = vec!["overall_item_mean".to_string()];
    item_mean.extend(table.iter().map(|(_, a)| cell(a.overall_item_mean)));
    let mut type_mean = vec!["overall_type_mean".to_string()];
    type_mean.extend(table.iter().map(|(_, a)| cell(a.overall_type_mean)));
    let mut n = vec!["n".to_string()];
    n.extend(table.iter().map(|(_, a)| a.n.to_string()));
    rows.extend([item_mean, type_mean, n]);
    (header, rows)
}

pub fn bold_rows(records: &[GenerationRecord], threshold: f64) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["condition".to_string(), "bias_type".to_string()];
    header.extend(BoldColumn::ALL.iter().map(|c| c.header().to_string()));
    header.push("total".into());
    let mut rows = Vec::new();
    for cond in conditions_of(records) {
        let rs: Vec<&GenerationRecord> = records.iter().filter(|r| r.condition == cond).collect();
        let t = bold_table(&rs, threshold);
        for &bt in BoldCategory::ALL {
            let Some(cells) = t.rows.get(&bt) else { continue };
            let mut row = vec![cond.tag(), bt.to_string()];
            row.extend(cells.iter().map(|v| cell(*v)));
            row.push(String::new());
            rows.push(row);
        }
        let mut row = vec![cond.tag(), "overall".to_string()];
        row.extend(
            BoldColumn::ALL
                .iter()
                .map(|c| cell(t.metric_overall.get(&c.metric()).copied().flatten())),
        );
        row.push(cell(t.total_overall));
        rows.push(row);
    }
    (header, rows)
}

pub fn holistic_rows(
    records: &[GenerationRecord],
    kind: crate::metrics::VarianceKind,
) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["condition".to_string()];
    header.extend(HolisticAxis::ALL.iter().map(|a| a.to_string()));
    header.extend(["overall_axis_mean".to_string(), "overall_joint".to_string()]);
    let mut rows = Vec::new();
    for cond in conditions_of(records) {
        let rs: Vec<&GenerationRecord> = records.iter().filter(|r| r.condition == cond).collect();
        let t = holistic_table(&rs, kind);
        let mut row = vec![cond.tag()];
        row.extend(HolisticAxis::ALL.iter().map(|a| cell(t.per_axis.get(a).copied().flatten())));
        row.extend([cell(t.overall_axis_mean), cell(t.overall_joint)]);
        rows.push(row);
    }
    (header, rows)
}

pub fn correlation_rows(m: &CorrelationMatrix) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["condition".to_string(), "n".to_string()];
    header.extend(m.columns.iter().map(|c| c.to_string()));
    let rows = m
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.condition.tag(), r.n.to_string()];
            row.extend(r.cells.iter().map(|v| cell(*v)));
            row
        })
        .collect();
    (header, rows)
}

fn conditions_of(records: &[GenerationRecord]) -> Vec<Condition> {
    let cs: Vec<Condition> = records.iter().map(|r| r.condition).collect();
    Condition::canonical_order(&cs)
}

fn faithfulness_rows(traces: &[CotTrace], threshold: f64) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let s = faithfulness::summarize(traces, threshold);
    let mut summary = vec![
        vec!["traces".to_string(), s.traces.to_string()],
        vec!["ok".to_string(), s.ok.to_string()],
        vec!["unparsed".to_string(), s.unparsed.to_string()],
        vec!["failed".to_string(), s.failed.to_string()],
    ];
    for (m, st) in &s.methods {
        summary.push(vec![format!("{}_items", m.as_str()), st.items.to_string()]);
        summary.push(vec![format!("{}_match_rate", m.as_str()), cell(st.match_rate)]);
        summary.push(vec![format!("{}_flip_rate", m.as_str()), cell(st.flip_rate)]);
    }
    summary.extend([
        vec!["pooled_match_rate".to_string(), cell(s.pooled_match_rate)],
        vec!["pooled_flip_rate".to_string(), cell(s.pooled_flip_rate)],
        vec!["method_agreement".to_string(), cell(s.method_agreement)],
        vec!["doc_dependence_pct".to_string(), cell(s.doc_dependence_pct)],
        vec!["doc_dependence_no_stopwords_pct".to_string(), cell(s.doc_dependence_no_stopwords_pct)],
    ]);
    let columns = co_occurrence_columns();
    let mut co = Vec::new();
    for m in AnswerMethod::ALL {
        let Some(st) = s.methods.get(&m) else { continue };
        for inc in Inclination::ALL {
            let Some(row) = st.co_occurrence.get(&inc) else { continue };
            let mut r = vec![m.as_str().to_string(), inc.as_str().to_string(), row.selections.to_string()];
            r.extend(columns.iter().map(|c| cell(row.cells.get(c).copied().flatten())));
            co.push(r);
        }
    }
    (summary, co)
}

impl Pipeline {
    fn scw_eval_rows(&self) -> Result<Vec<ScwEvalRow>, PipelineError> {
        read_jsonl(&self.require("eval", "eval/scw.jsonl")?)
    }

    pub(super) fn correlate(&self) -> Stage {
        let rows = self.scw_eval_rows()?;
        let m = correlation_table(&correlation_inputs(&rows));
        let (header, body) = correlation_rows(&m);
        write_table(&self.out("correlate/correlation.csv"), &header, &body)?;
        Ok((vec!["correlate/correlation.csv".into()], BTreeMap::new()))
    }

    pub(super) fn report(&self) -> Stage {
        let cfg = self.config();
        let mut artifacts = Vec::new();
        let mut emit = |rel: &str, header: Vec<String>, body: Vec<Vec<String>>| -> Result<(), PipelineError> {
            write_table(&self.out(rel), &header, &body)?;
            artifacts.push(rel.to_string());
            Ok(())
        };
        if cfg.datasets.scw.is_some() {
            let rows = self.scw_eval_rows()?;
            let records: Vec<ScwBiasRecord> = rows.iter().filter_map(ScwEvalRow::record).collect();
            let (h, b) = scw_rows(&records);
            emit("reports/scw_bias.csv", h, b)?;
            let (h, b) = correlation_rows(&correlation_table(&correlation_inputs(&rows)));
            emit("reports/correlation.csv", h, b)?;
        }
        if cfg.datasets.bold.is_some() {
            let rows: Vec<GenerationRow> = read_jsonl(&self.require("eval", "eval/bold.jsonl")?)?;
            let (h, b) = bold_rows(&generation_records(rows), cfg.toxicity_threshold);
            emit("reports/bold.csv", h, b)?;
        }
        if cfg.datasets.holistic.is_some() {
            let rows: Vec<GenerationRow> = read_jsonl(&self.require("eval", "eval/holistic.jsonl")?)?;
            let (h, b) = holistic_rows(&generation_records(rows), cfg.variance);
            emit("reports/holistic.csv", h, b)?;
        }
        let traces_path = self.out("faithfulness/traces.jsonl");
        let kv = |s: &str| vec![s.to_string()];
        let summary_header = vec!["quantity".to_string(), "value".to_string()];
        if traces_path.exists() {
            let traces: Vec<CotTrace> = read_jsonl(&traces_path)?;
            let (summary, co) = faithfulness_rows(&traces, cfg.toxicity_threshold);
            emit("reports/faithfulness.csv", summary_header, summary)?;
            let mut h = vec!["method".to_string(), "inclination".to_string(), "selections".to_string()];
            h.extend(co_occurrence_columns());
            emit("reports/co_occurrence.csv", h, co)?;
        } else {
            let mut row = kv("status");
            row.push("not run".into());
            emit("reports/faithfulness.csv", summary_header, vec![row])?;
        }
        Ok((artifacts, BTreeMap::new()))
    }
}
