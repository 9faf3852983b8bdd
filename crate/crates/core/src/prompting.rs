//! Prompt rendering for every (item, condition) pair.
//!
//! Template text lives in `templates/*.txt` (the file's final newline is not
//! part of the template). Slots are `{name}` and are filled in a single pass,
//! so substituted text is never re-scanned for slots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Condition, DescriptorItem, MaskedItem, PrefixItem, RetrievalCorpus};

const SCW_BEFORE: &str = include_str!("../templates/scw_before.txt");
const SCW_AFTER: &str = include_str!("../templates/scw_after.txt");
const SCW_COT_AFTER: &str = include_str!("../templates/scw_cot_after.txt");
const SCW_COT_BEFORE: &str = include_str!("../templates/scw_cot_before.txt");
const OPEN_AFTER: &str = include_str!("../templates/open_after.txt");
const EARLY_LOGPROB: &str = include_str!("../templates/early_answer_logprob.txt");
const EARLY_FREETEXT: &str = include_str!("../templates/early_answer_freetext.txt");

/// Marker opening the retrieved-documents block.
pub const DOCUMENTS_HEADER: &str = "Documents:";
/// Cue appended after a partial explanation for free-text early answers.
pub const FINAL_ANSWER_CUE: &str = "Final answer:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("condition {0} requires retrieved documents but none were supplied")]
    MissingDocuments(Condition),
    #[error("condition {0} is not valid for this template")]
    WrongCondition(Condition),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub chunk_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub item_id: String,
    pub condition: Condition,
    pub text: String,
    /// Empty for before-retrieval conditions.
    pub retrieved_chunk_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptOptions {
    /// Prefix each document with `Document N:`. When unset, only CoT prompts
    /// (which ask the model to cite documents) are numbered.
    pub numbered_docs: Option<bool>,
    /// Put the anti-stereotype word first (control runs).
    pub swap_candidates: bool,
}

fn template(raw: &'static str) -> &'static str {
    raw.strip_suffix('\n').unwrap_or(raw)
}

/// Single-pass `{slot}` substitution. Unknown slots are left as-is.
fn fill(template: &str, slots: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if slots.contains_key(&after[..close]) => {
                out.push_str(slots[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Joins documents with a blank line between them, optionally numbered.
pub fn documents_block(docs: &[RetrievedDoc], numbered: bool) -> String {
    docs.iter()
        .enumerate()
        .map(|(i, d)| {
            if numbered {
                format!("Document {}: {}", i + 1, d.text)
            } else {
                d.text.clone()
            }
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

fn candidates<'a>(item: &'a MaskedItem, opts: &PromptOptions) -> (&'a str, &'a str) {
    if opts.swap_candidates {
        (&item.anti_stereotype_word, &item.stereotype_word)
    } else {
        (&item.stereotype_word, &item.anti_stereotype_word)
    }
}

fn ids(docs: &[RetrievedDoc]) -> Vec<String> {
    docs.iter().map(|d| d.chunk_id.clone()).collect()
}

/// Masked-sentence prompt without retrieval. Ends with `"is "` so the next
/// token continues with a candidate word.
pub fn render_scw_before(item: &MaskedItem, opts: &PromptOptions) -> RenderedPrompt {
    let (first, second) = candidates(item, opts);
    let slots = HashMap::from([
        ("masked_sentence", item.masked_sentence.as_str()),
        ("stereotype_word", first),
        ("anti_stereotype_word", second),
    ]);
    RenderedPrompt {
        item_id: item.item_id.clone(),
        condition: Condition::BeforeRag,
        text: fill(template(SCW_BEFORE), &slots),
        retrieved_chunk_ids: Vec::new(),
    }
}

pub fn render_scw_after(
    item: &MaskedItem,
    corpus: RetrievalCorpus,
    docs: &[RetrievedDoc],
    opts: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    let condition = Condition::AfterRag(corpus);
    if docs.is_empty() {
        return Err(PromptError::MissingDocuments(condition));
    }
    let (first, second) = candidates(item, opts);
    let block = documents_block(docs, opts.numbered_docs.unwrap_or(false));
    let slots = HashMap::from([
        ("retrieved_docs_text", block.as_str()),
        ("masked_sentence", item.masked_sentence.as_str()),
        ("stereotype_word", first),
        ("anti_stereotype_word", second),
    ]);
    Ok(RenderedPrompt {
        item_id: item.item_id.clone(),
        condition,
        text: fill(template(SCW_AFTER), &slots),
        retrieved_chunk_ids: ids(docs),
    })
}

/// Chain-of-thought prompt. `corpus == None` renders the before-retrieval
/// variant, which has no documents block and no citation request.
pub fn render_scw_cot(
    item: &MaskedItem,
    corpus: Option<RetrievalCorpus>,
    docs: &[RetrievedDoc],
    opts: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    let (first, second) = candidates(item, opts);
    let mut slots = HashMap::from([
        ("masked_sentence", item.masked_sentence.as_str()),
        ("stereotype_word", first),
        ("anti_stereotype_word", second),
    ]);
    match corpus {
        None => Ok(RenderedPrompt {
            item_id: item.item_id.clone(),
            condition: Condition::BeforeRagCot,
            text: fill(template(SCW_COT_BEFORE), &slots),
            retrieved_chunk_ids: Vec::new(),
        }),
        Some(corpus) => {
            let condition = Condition::AfterRagCot(corpus);
            if docs.is_empty() {
                return Err(PromptError::MissingDocuments(condition));
            }
            let block = documents_block(docs, opts.numbered_docs.unwrap_or(true));
            slots.insert("retrieved_docs_text", block.as_str());
            Ok(RenderedPrompt {
                item_id: item.item_id.clone(),
                condition,
                text: fill(template(SCW_COT_AFTER), &slots),
                retrieved_chunk_ids: ids(docs),
            })
        }
    }
}

/// Dispatches to the masked-sentence template matching `condition`.
pub fn render_scw(
    item: &MaskedItem,
    condition: Condition,
    docs: &[RetrievedDoc],
    opts: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    match condition {
        Condition::BeforeRag => Ok(render_scw_before(item, opts)),
        Condition::AfterRag(c) => render_scw_after(item, c, docs, opts),
        Condition::BeforeRagCot => render_scw_cot(item, None, docs, opts),
        Condition::AfterRagCot(c) => render_scw_cot(item, Some(c), docs, opts),
    }
}

/// Items answered by free-form continuation.
pub trait OpenEndedItem {
    fn item_id(&self) -> &str;
    fn prompt_text(&self) -> &str;
}

impl OpenEndedItem for PrefixItem {
    fn item_id(&self) -> &str {
        &self.item_id
    }
    fn prompt_text(&self) -> &str {
        &self.prompt_prefix
    }
}

impl OpenEndedItem for DescriptorItem {
    fn item_id(&self) -> &str {
        &self.item_id
    }
    fn prompt_text(&self) -> &str {
        &self.rendered_prompt
    }
}

/// Before retrieval the open-ended prompt is the dataset text itself.
pub fn render_open_before<I: OpenEndedItem + ?Sized>(item: &I) -> RenderedPrompt {
    RenderedPrompt {
        item_id: item.item_id().to_string(),
        condition: Condition::BeforeRag,
        text: item.prompt_text().to_string(),
        retrieved_chunk_ids: Vec::new(),
    }
}

pub fn render_open_after<I: OpenEndedItem + ?Sized>(
    item: &I,
    corpus: RetrievalCorpus,
    docs: &[RetrievedDoc],
    opts: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    let condition = Condition::AfterRag(corpus);
    if docs.is_empty() {
        return Err(PromptError::MissingDocuments(condition));
    }
    let block = documents_block(docs, opts.numbered_docs.unwrap_or(false));
    let slots = HashMap::from([
        ("retrieved_docs_text", block.as_str()),
        ("partial_sentence", item.prompt_text()),
    ]);
    Ok(RenderedPrompt {
        item_id: item.item_id().to_string(),
        condition,
        text: fill(template(OPEN_AFTER), &slots),
        retrieved_chunk_ids: ids(docs),
    })
}

pub fn render_open<I: OpenEndedItem + ?Sized>(
    item: &I,
    condition: Condition,
    docs: &[RetrievedDoc],
    opts: &PromptOptions,
) -> Result<RenderedPrompt, PromptError> {
    match condition {
        Condition::BeforeRag => Ok(render_open_before(item)),
        Condition::AfterRag(c) => render_open_after(item, c, docs, opts),
        other => Err(PromptError::WrongCondition(other)),
    }
}

/// Early answer scored by log-probability: the partial explanation followed
/// by the masked sentence up to the placeholder, so the next tokens are a
/// candidate word.
pub fn render_early_answer_logprob(
    cot_prompt: &RenderedPrompt,
    partial_cot: &str,
    item: &MaskedItem,
) -> RenderedPrompt {
    let slots = HashMap::from([
        ("cot_prompt", cot_prompt.text.as_str()),
        ("partial_cot", partial_cot),
        ("sentence_prefix", item.prefix_before_blank()),
    ]);
    RenderedPrompt {
        text: fill(template(EARLY_LOGPROB), &slots),
        ..cot_prompt.clone()
    }
}

/// Early answer by generation: the partial explanation followed only by
/// `Final answer:`.
pub fn render_early_answer_freetext(cot_prompt: &RenderedPrompt, partial_cot: &str) -> RenderedPrompt {
    let slots = HashMap::from([
        ("cot_prompt", cot_prompt.text.as_str()),
        ("partial_cot", partial_cot),
    ]);
    RenderedPrompt {
        text: fill(template(EARLY_FREETEXT), &slots),
        ..cot_prompt.clone()
    }
}
