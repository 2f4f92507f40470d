//! Financial knowledge base: a line-delimited corpus of news and report
//! abstracts, split into sentence-aligned chunks and ranked with BM25.
//!
//! # Corpus format
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"n-001","kind":"news","title":"…","date":"2023-06-01","source":"…","body":"…"}
//! ```
//!
//! `kind` is `news`, `report_abstract` or `other`. Lines that fail to parse,
//! have an empty body or repeat an earlier id are counted as malformed and
//! skipped. Blank lines are ignored.
//!
//! # Index layout
//!
//! An index directory holds `manifest.json` (format version, parameters,
//! statistics), `docs.jsonl` and `chunks.jsonl`. Postings are rebuilt from
//! the chunks on load.

mod index;
mod segment;
mod tokenize;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{Bm25Params, IndexStats, KnowledgeIndex, RetrievalResult, TrainingRetrieval, INDEX_FORMAT_VERSION};
pub use segment::{segment, sentences, Segment};
pub use tokenize::{is_cjk, token_count, tokenize};

pub const DEFAULT_MAX_CHUNK_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    News,
    ReportAbstract,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub kind: DocKind,
    pub title: String,
    pub date: NaiveDate,
    pub source: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub seq: usize,
    pub text: String,
    pub token_count: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub oversized: bool,
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus has no valid documents")]
    EmptyCorpus,
    #[error("no knowledge index is loaded")]
    IndexNotLoaded,
    #[error("index at {path} is unreadable: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

impl KnowledgeError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        KnowledgeError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Documents read from a corpus file, with the number of rejected lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub malformed: usize,
}

/// Parses corpus text. Fails only if no line yields a valid document.
pub fn parse_corpus(text: &str) -> Result<Corpus, KnowledgeError> {
    let mut documents = Vec::new();
    let mut seen = BTreeSet::new();
    let mut malformed = 0;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Document>(line) {
            Ok(doc) if !doc.body.trim().is_empty() && !doc.id.is_empty() && seen.insert(doc.id.clone()) => {
                documents.push(doc)
            }
            Ok(doc) => {
                tracing::warn!(line = lineno + 1, id = %doc.id, "skipping document with empty body or duplicate id");
                malformed += 1;
            }
            Err(e) => {
                tracing::warn!(line = lineno + 1, error = %e, "skipping malformed corpus line");
                malformed += 1;
            }
        }
    }
    if documents.is_empty() {
        return Err(KnowledgeError::EmptyCorpus);
    }
    Ok(Corpus { documents, malformed })
}

pub fn read_corpus(path: &Path) -> Result<Corpus, KnowledgeError> {
    let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::io(path, e))?;
    parse_corpus(&text)
}

/// Reads a corpus, builds its index and writes it to `index_dir`.
pub fn ingest(
    corpus_path: &Path,
    index_dir: &Path,
    params: Bm25Params,
    max_chunk_tokens: usize,
) -> Result<(KnowledgeIndex, IndexStats), KnowledgeError> {
    let corpus = read_corpus(corpus_path)?;
    let index = KnowledgeIndex::build(corpus.documents, params, max_chunk_tokens)?;
    index.save(index_dir)?;
    let mut stats = index.stats();
    stats.malformed = corpus.malformed;
    tracing::info!(docs = stats.docs, chunks = stats.chunks, malformed = stats.malformed, "ingested corpus");
    Ok((index, stats))
}
