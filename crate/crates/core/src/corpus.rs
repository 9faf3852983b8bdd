//! Retrieval corpus ingestion and fixed-size word chunking.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::sha256;

pub const DEFAULT_CHUNK_SIZE: usize = 250;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("chunk manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// On-disk layout of a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// Every non-empty line is a document.
    PlainLines,
    /// Every file is a document.
    OneDocPerFile,
    /// JSON object per line, text under a configurable field.
    #[serde(alias = "jsonl")]
    JsonlWithTextField,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain-lines" => Ok(Self::PlainLines),
            "one-doc-per-file" => Ok(Self::OneDocPerFile),
            "jsonl" | "jsonl-with-text-field" => Ok(Self::JsonlWithTextField),
            other => Err(format!("unknown corpus format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    /// Corpus tag, e.g. `wikitext103`.
    pub source: String,
    pub text: String,
}

/// A record that could not be turned into a [`Document`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordError {
    pub file: PathBuf,
    pub record: usize,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct LoadedCorpus {
    pub documents: Vec<Document>,
    pub record_errors: Vec<RecordError>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub format: CorpusFormat,
    pub source: String,
    pub text_field: String,
    pub id_field: Option<String>,
}

impl LoadOptions {
    pub fn new(format: CorpusFormat, source: impl Into<String>) -> Self {
        Self {
            format,
            source: source.into(),
            text_field: "text".to_string(),
            id_field: None,
        }
    }
}

/// Collapses whitespace runs into single spaces and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn list_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let meta = fs::metadata(path).map_err(|e| CorpusError::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| CorpusError::io(path, e))? {
        let entry = entry.map_err(|e| CorpusError::io(path, e))?;
        let p = entry.path();
        if p.is_file() {
            files.push(p);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

fn file_stem(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads every document under `path` (a file or a directory of files).
///
/// Files are visited in lexicographic filename order, records in file order.
/// Malformed records are collected in [`LoadedCorpus::record_errors`] and do
/// not abort the load.
pub fn load_corpus(path: &Path, opts: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut seen = std::collections::HashSet::new();
    for file in list_files(path)? {
        let raw = fs::read(&file).map_err(|e| CorpusError::io(&file, e))?;
        let text = String::from_utf8_lossy(&raw).replace("\r\n", "\n").replace('\r', "\n");
        let name = file_stem(&file);
        let before = out.documents.len() + out.record_errors.len();

        let mut push = |out: &mut LoadedCorpus, record: usize, doc_id: String, body: &str| {
            let normalized = normalize_whitespace(body);
            if normalized.is_empty() {
                return;
            }
            if !seen.insert(doc_id.clone()) {
                out.record_errors.push(RecordError {
                    file: file.clone(),
                    record,
                    message: format!("duplicate doc_id `{doc_id}`"),
                });
                return;
            }
            out.documents.push(Document {
                doc_id,
                source: opts.source.clone(),
                text: normalized,
            });
        };

        match opts.format {
            CorpusFormat::OneDocPerFile => push(&mut out, 0, name.clone(), &text),
            CorpusFormat::PlainLines => {
                for (i, line) in text.lines().enumerate() {
                    push(&mut out, i, format!("{name}:{i}"), line);
                }
            }
            CorpusFormat::JsonlWithTextField => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let value: serde_json::Value = match serde_json::from_str(line) {
                        Ok(v) => v,
                        Err(e) => {
                            out.record_errors.push(RecordError {
                                file: file.clone(),
                                record: i,
                                message: format!("invalid JSON: {e}"),
                            });
                            continue;
                        }
                    };
                    let Some(body) = value.get(&opts.text_field).and_then(|v| v.as_str()) else {
                        out.record_errors.push(RecordError {
                            file: file.clone(),
                            record: i,
                            message: format!("missing string field `{}`", opts.text_field),
                        });
                        continue;
                    };
                    let doc_id = opts
                        .id_field
                        .as_ref()
                        .and_then(|f| value.get(f))
                        .map(|v| match v {
                            serde_json::Value::String(s) => s.clone(),
                            other => other.to_string(),
                        })
                        .unwrap_or_else(|| format!("{name}:{i}"));
                    push(&mut out, i, doc_id, body);
                }
            }
        }

        if out.documents.len() + out.record_errors.len() == before {
            let msg = format!("{} yielded no documents", file.display());
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    if !out.record_errors.is_empty() {
        log::warn!(
            "{} malformed record(s) skipped under {}",
            out.record_errors.len(),
            path.display()
        );
    }
    Ok(out)
}

/// Keeps each document independently with probability `fraction`.
///
/// The decision for a document depends only on `seed` and its position, so the
/// same seed always yields the same subset.
pub fn sample_documents(docs: Vec<Document>, fraction: f64, seed: u64) -> Vec<Document> {
    if fraction >= 1.0 {
        return docs;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.into_iter()
        .filter(|_| rng.random::<f64>() < fraction)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub word_count: usize,
    pub text: String,
}

/// Stable identifier derived from the parent document and position.
pub fn chunk_id(doc_id: &str, ordinal: usize) -> String {
    let mut key = Vec::with_capacity(doc_id.len() + 9);
    key.extend_from_slice(doc_id.as_bytes());
    key.push(0);
    key.extend_from_slice(&(ordinal as u64).to_le_bytes());
    hex::encode(&sha256(&key)[..16])
}

/// Greedy split into chunks of exactly `chunk_size` words; the last chunk
/// holds the remainder. No overlap.
///
/// # Panics
///
/// If `chunk_size` is zero.
pub fn chunk_document(doc: &Document, chunk_size: usize) -> Vec<Chunk> {
    assert!(chunk_size >= 1, "chunk_size must be at least 1");
    let words: Vec<&str> = doc.text.split_whitespace().collect();
    words
        .chunks(chunk_size)
        .enumerate()
        .map(|(ordinal, ws)| Chunk {
            chunk_id: chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            word_count: ws.len(),
            text: ws.join(" "),
        })
        .collect()
}

pub fn chunk_corpus(docs: &[Document], chunk_size: usize) -> Vec<Chunk> {
    docs.iter().flat_map(|d| chunk_document(d, chunk_size)).collect()
}

pub fn write_chunk_manifest(path: &Path, chunks: &[Chunk]) -> Result<(), CorpusError> {
    let mut buf = Vec::new();
    for c in chunks {
        serde_json::to_writer(&mut buf, c).expect("chunk serializes");
        buf.push(b'\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CorpusError::io(path, e))
}

pub fn read_chunk_manifest(path: &Path) -> Result<Vec<Chunk>, CorpusError> {
    let f = fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut chunks = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let chunk: Chunk = serde_json::from_str(&line).map_err(|e| CorpusError::Manifest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        chunks.push(chunk);
    }
    Ok(chunks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(words: usize) -> Document {
        Document {
            doc_id: "d".into(),
            source: "test".into(),
            text: (0..words).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "),
        }
    }

    #[test]
    fn six_hundred_words() {
        let sizes: Vec<_> = chunk_document(&doc(600), 250).iter().map(|c| c.word_count).collect();
        assert_eq!(sizes, vec![250, 250, 100]);
    }

    #[test]
    fn exact_fit_and_single_word() {
        assert_eq!(chunk_document(&doc(250), 250).len(), 1);
        let one = chunk_document(&doc(1), 250);
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].word_count, 1);
        assert!(chunk_document(&doc(0), 250).is_empty());
    }

    #[test]
    fn ordinals_contiguous_and_ids_stable() {
        let a = chunk_document(&doc(1000), 250);
        let b = chunk_document(&doc(1000), 250);
        assert_eq!(a, b);
        for (i, c) in a.iter().enumerate() {
            assert_eq!(c.ordinal, i);
            assert_eq!(c.chunk_id.len(), 32);
        }
        assert_ne!(a[0].chunk_id, a[1].chunk_id);
    }

    #[test]
    #[should_panic]
    fn zero_chunk_size_panics() {
        chunk_document(&doc(3), 0);
    }

    #[test]
    fn sampling_is_seeded() {
        let docs: Vec<_> = (0..1000)
            .map(|i| Document {
                doc_id: i.to_string(),
                source: "c4".into(),
                text: "x".into(),
            })
            .collect();
        let a = sample_documents(docs.clone(), 0.1, 7);
        let b = sample_documents(docs.clone(), 0.1, 7);
        assert_eq!(a, b);
        assert!(a.len() > 50 && a.len() < 150, "{}", a.len());
        assert_eq!(sample_documents(docs.clone(), 1.0, 7).len(), 1000);
    }
}
