//! Tokenizer, corpus loading, and segment/task construction.

mod segments;
mod tokenizer;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use segments::{copy_task, make_segments, segment_manifest, to_task, Segment, TaskExample, TaskKind};
pub use tokenizer::{Tokenizer, BOS, BYTE_OFFSET, MIN_VOCAB, PAD, SEP_TEXT};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("target vocabulary {requested} is below the minimum of 259 (256 bytes + 3 specials)")]
    VocabTooSmall { requested: usize },
    #[error("token id {id} is outside the vocabulary of {vocab}")]
    IdOutOfRange { id: u32, vocab: usize },
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("tokenizer file line {line}: {detail}")]
    Format { line: usize, detail: String },
    #[error("corpus too small: need {required} tokens, have {available}")]
    InsufficientCorpus { required: usize, available: usize },
    #[error("{0}")]
    Task(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path} line {line}: {detail}")]
    Record { path: PathBuf, line: usize, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

/// Reads documents from files or directories.
///
/// `.jsonl` files hold one JSON record per line with a `"text"` field; any
/// other file is one document. Directories are walked non-recursively in
/// name order, picking up `.txt` and `.jsonl` files.
pub fn load_documents(paths: &[PathBuf]) -> Result<Vec<String>, CorpusError> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .map_err(io_err(p))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|e| e.to_str()), Some("txt" | "jsonl")))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    let mut docs = Vec::new();
    for f in &files {
        let text = fs::read_to_string(f).map_err(io_err(f))?;
        if f.extension().and_then(|e| e.to_str()) == Some("jsonl") {
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let rec = |detail: String| CorpusError::Record { path: f.clone(), line: i + 1, detail };
                let v: serde_json::Value = serde_json::from_str(line).map_err(|e| rec(e.to_string()))?;
                let t = v.get("text").and_then(|t| t.as_str()).ok_or_else(|| rec("missing string field `text`".into()))?;
                docs.push(t.to_string());
            }
        } else {
            docs.push(text);
        }
    }
    if docs.iter().all(|d| d.is_empty()) {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(docs)
}

/// Encodes documents one by one and concatenates the token streams. No
/// separator id is inserted between documents.
pub fn encode_documents(tok: &Tokenizer, docs: &[String]) -> Vec<u32> {
    docs.iter().flat_map(|d| tok.encode(d)).collect()
}
