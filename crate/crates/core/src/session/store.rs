//! Append-only JSON-lines persistence. Every session has its own event log and
//! the data directory keeps an index of sessions. Each event is written with a
//! single write followed by a sync, so after a crash a log ends either with a
//! complete event or with one torn line, which loading discards.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{SessionError, StepRecord};
use crate::metrics::StepRanking;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Created { session_id: String, domain: String, max_steps: usize, created_at_ms: u64 },
    Step { record: Box<StepRecord> },
    Ranking { step: u32, ranking: StepRanking },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session_id: String,
    pub domain: String,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

const INDEX: &str = "index.jsonl";

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        Ok(Store { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.root.join("sessions").join(format!("{session_id}.jsonl"))
    }

    /// Sessions listed in the index, in creation order.
    pub fn index(&self) -> Result<Vec<IndexEntry>, SessionError> {
        read_lines(&self.root.join(INDEX))
    }

    pub fn create(&self, created: &Event) -> Result<(), SessionError> {
        let Event::Created { session_id, domain, .. } = created else {
            return Err(SessionError::Corrupt("a session log must start with its creation".into()));
        };
        // The log is written first: an index entry never points at a missing log.
        append(&self.log_path(session_id), created)?;
        append(
            &self.root.join(INDEX),
            &IndexEntry { session_id: session_id.clone(), domain: domain.clone() },
        )
    }

    pub fn append(&self, session_id: &str, e: &Event) -> Result<(), SessionError> {
        append(&self.log_path(session_id), e)
    }

    pub fn events(&self, session_id: &str) -> Result<Vec<Event>, SessionError> {
        let path = self.log_path(session_id);
        if !path.exists() {
            return Err(SessionError::UnknownSession(session_id.to_string()));
        }
        read_lines(&path)
    }
}

fn append<T: Serialize>(path: &Path, value: &T) -> Result<(), SessionError> {
    let mut line = serde_json::to_string(value).map_err(|e| SessionError::Corrupt(e.to_string()))?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Parses a JSON-lines file. A final line that is unterminated or does not
/// parse is a torn write: it is dropped and the file truncated to the last
/// complete line so later appends start clean. Damage anywhere else is an error.
fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let mut out = Vec::new();
    let mut valid = 0usize;
    let mut offset = 0usize;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        offset += raw.len();
        let last = i + 1 == lines.len();
        let complete = raw.ends_with('\n');
        if raw.trim().is_empty() {
            valid = offset;
            continue;
        }
        match serde_json::from_str::<T>(raw.trim_end()) {
            Ok(v) if complete => {
                out.push(v);
                valid = offset;
            }
            _ if last => {
                log::warn!("dropping torn final line of {}", path.display());
                break;
            }
            Ok(_) => unreachable!("only the final line can lack a newline"),
            Err(e) => {
                return Err(SessionError::Corrupt(format!("{} line {}: {e}", path.display(), i + 1)));
            }
        }
    }
    if valid < text.len() {
        File::options().write(true).open(path)?.set_len(valid as u64)?;
    }
    Ok(out)
}
