//! The modeling engine's command library in a neutral JSON format, with lexical
//! retrieval over its documentation and depth accounting for programs.

mod bm25;
mod depth;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{tokenize, Bm25Index, ScoredChunk};
pub use depth::ast_depth;

pub const DEFAULT_CHUNK_SIZE: usize = 512;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reading catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog schema violation: {0}")]
    SchemaViolation(String),
    #[error("catalog has no entries")]
    EmptyCatalog,
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
}

impl ParamSchema {
    pub fn default_number(&self) -> Option<f64> {
        self.default.as_ref().and_then(|v| v.as_f64())
    }

    pub fn clamp(&self, v: f64) -> f64 {
        match self.range {
            Some([lo, hi]) => v.clamp(lo, hi),
            None => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Signature {
    pub name: String,
    pub params: Vec<ParamSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEntry {
    pub command_id: String,
    pub signature: Signature,
    pub parent_chain: Vec<String>,
    pub doc: String,
}

impl CatalogEntry {
    pub fn depth(&self) -> usize {
        self.parent_chain.len()
    }

    pub fn param(&self, name: &str) -> Option<&ParamSchema> {
        self.signature.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogChunk {
    pub chunk_id: String,
    pub entry_id: String,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    #[serde(default)]
    version: Option<String>,
    entries: Vec<CatalogEntry>,
    #[serde(default)]
    chunk_size: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    entries: Vec<CatalogEntry>,
    chunks: Vec<CatalogChunk>,
    index: Bm25Index,
}

impl Catalog {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CatalogError> {
        let file: CatalogFile =
            serde_json::from_str(text).map_err(|e| CatalogError::SchemaViolation(e.to_string()))?;
        if let Some(v) = &file.version {
            if v != "v1" {
                return Err(CatalogError::SchemaViolation(format!("unsupported version `{v}`")));
            }
        }
        let chunk_size = file.chunk_size.unwrap_or(DEFAULT_CHUNK_SIZE);
        if chunk_size == 0 {
            return Err(CatalogError::SchemaViolation("chunk_size must be positive".into()));
        }
        Self::from_entries(file.entries, chunk_size)
    }

    pub fn from_entries(entries: Vec<CatalogEntry>, chunk_size: usize) -> Result<Self, CatalogError> {
        if entries.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.command_id.as_str()) {
                return Err(CatalogError::SchemaViolation(format!(
                    "duplicate command_id `{}`",
                    e.command_id
                )));
            }
            if e.parent_chain.is_empty() {
                return Err(CatalogError::SchemaViolation(format!(
                    "`{}` has an empty parent_chain",
                    e.command_id
                )));
            }
            let mut names = HashSet::new();
            for p in &e.signature.params {
                if !names.insert(p.name.as_str()) {
                    return Err(CatalogError::SchemaViolation(format!(
                        "`{}` declares parameter `{}` twice",
                        e.command_id, p.name
                    )));
                }
                if let Some([lo, hi]) = p.range {
                    if lo.is_nan() || hi.is_nan() || lo > hi {
                        return Err(CatalogError::SchemaViolation(format!(
                            "`{}.{}` has an empty range",
                            e.command_id, p.name
                        )));
                    }
                }
            }
        }
        let chunks = chunk_entries(&entries, chunk_size);
        let index = Bm25Index::build(chunks.iter().map(|c| c.text.as_str()));
        Ok(Catalog { entries, chunks, index })
    }

    pub fn entries(&self) -> &[CatalogEntry] {
        &self.entries
    }

    pub fn chunks(&self) -> &[CatalogChunk] {
        &self.chunks
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, command_id: &str) -> Result<&CatalogEntry, CatalogError> {
        self.entries
            .iter()
            .find(|e| e.command_id == command_id)
            .ok_or_else(|| CatalogError::UnknownCommand(command_id.to_string()))
    }

    pub fn contains(&self, command_id: &str) -> bool {
        self.entries.iter().any(|e| e.command_id == command_id)
    }

    /// Smallest entry depth in the catalog; entries at this depth are the coarsest commands.
    pub fn min_depth(&self) -> usize {
        self.entries.iter().map(CatalogEntry::depth).min().unwrap_or(0)
    }

    pub fn median_depth(&self) -> f64 {
        let mut d: Vec<usize> = self.entries.iter().map(CatalogEntry::depth).collect();
        d.sort_unstable();
        let n = d.len();
        if n % 2 == 1 {
            d[n / 2] as f64
        } else {
            (d[n / 2 - 1] + d[n / 2]) as f64 / 2.0
        }
    }

    /// Top-`k` chunks by BM25 score; chunks that share no term with the query are not returned.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<ScoredChunk> {
        let mut scored: Vec<ScoredChunk> = self
            .index
            .scores(query)
            .into_iter()
            .enumerate()
            .filter(|(_, s)| *s > 0.0)
            .map(|(i, score)| ScoredChunk { chunk: self.chunks[i].clone(), score })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.chunk.chunk_id.cmp(&b.chunk.chunk_id))
        });
        scored.truncate(k);
        scored
    }
}

/// Splits each entry's documentation into windows of at most `size` tokens.
/// The command id and parameter names lead the first window so that a command
/// is findable by name.
fn chunk_entries(entries: &[CatalogEntry], size: usize) -> Vec<CatalogChunk> {
    let mut out = Vec::new();
    for e in entries {
        let params: Vec<&str> = e.signature.params.iter().map(|p| p.name.as_str()).collect();
        let header = format!("{} {}", e.command_id, params.join(" "));
        let words: Vec<&str> = header
            .split_whitespace()
            .chain(e.doc.split_whitespace())
            .collect();
        let mut start = 0;
        let mut n = 0;
        while start < words.len() {
            // Count tokens, not words, so the bound holds for the tokenizer used by the index.
            let mut end = start;
            let mut tokens = 0;
            while end < words.len() {
                let t = tokenize(words[end]).len();
                if tokens + t > size && end > start {
                    break;
                }
                tokens += t;
                end += 1;
            }
            out.push(CatalogChunk {
                chunk_id: format!("{}#{:03}", e.command_id, n),
                entry_id: e.command_id.clone(),
                text: words[start..end].join(" "),
            });
            n += 1;
            start = end;
        }
    }
    out
}
