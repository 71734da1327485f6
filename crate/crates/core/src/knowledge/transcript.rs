//! JSON-lines transcripts of provider traffic. Recording wraps a live
//! transport; replay answers identical requests from the file, in order.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::live::Transport;
use super::KnowledgeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub request: Json,
    pub response: Json,
}

/// Key-sorted compact rendering, so that field order never affects lookup.
pub fn canonical_request(v: &Json) -> String {
    fn sorted(v: &Json) -> Json {
        match v {
            Json::Object(m) => {
                let mut keys: Vec<&String> = m.keys().collect();
                keys.sort();
                Json::Object(keys.into_iter().map(|k| (k.clone(), sorted(&m[k]))).collect())
            }
            Json::Array(a) => Json::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    sorted(v).to_string()
}

pub struct ReplayTransport {
    responses: Mutex<HashMap<String, VecDeque<Json>>>,
}

impl ReplayTransport {
    pub fn from_records(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut responses: HashMap<String, VecDeque<Json>> = HashMap::new();
        for r in records {
            responses.entry(canonical_request(&r.request)).or_default().push_back(r.response);
        }
        ReplayTransport { responses: Mutex::new(responses) }
    }

    /// Reads a transcript. A torn final line from an interrupted recording is ignored.
    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let reader = BufReader::new(File::open(path)?);
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let n = lines.len();
        let mut records = Vec::new();
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<TranscriptRecord>(&line) {
                Ok(r) => records.push(r),
                Err(_) if i + 1 == n => log::warn!("ignoring torn last transcript line"),
                Err(e) => return Err(KnowledgeError::Fixture(format!("transcript line {}: {e}", i + 1))),
            }
        }
        Ok(Self::from_records(records))
    }
}

impl Transport for ReplayTransport {
    fn complete(&self, request: &Json) -> Result<Json, KnowledgeError> {
        let key = canonical_request(request);
        let mut map = self.responses.lock().expect("replay map poisoned");
        let queue = map.get_mut(&key).ok_or_else(|| KnowledgeError::ReplayMiss(short(&key)))?;
        // The last response for a request keeps answering once the queue is drained.
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty queue"))
        } else {
            queue.front().cloned().ok_or_else(|| KnowledgeError::ReplayMiss(short(&key)))
        }
    }
}

fn short(key: &str) -> String {
    key.chars().take(120).collect()
}

pub struct RecordingTransport<T> {
    inner: T,
    file: Mutex<File>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn create(inner: T, path: &Path) -> Result<Self, KnowledgeError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingTransport { inner, file: Mutex::new(file) })
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn complete(&self, request: &Json) -> Result<Json, KnowledgeError> {
        let response = self.inner.complete(request)?;
        let mut line = serde_json::to_string(&TranscriptRecord {
            request: request.clone(),
            response: response.clone(),
        })
        .map_err(|e| KnowledgeError::Fixture(e.to_string()))?;
        line.push('\n');
        let mut f = self.file.lock().expect("transcript file poisoned");
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(response)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::*;

    struct Echo;

    impl Transport for Echo {
        fn complete(&self, request: &Json) -> Result<Json, KnowledgeError> {
            Ok(json!({"echo": request}))
        }
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let rec = RecordingTransport::create(Echo, &path).unwrap();
        let a = rec.complete(&json!({"b": 1, "a": [1, 2]})).unwrap();
        rec.complete(&json!({"x": 2})).unwrap();
        drop(rec);
        std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"request\":").unwrap();

        let replay = ReplayTransport::load(&path).unwrap();
        assert_eq!(replay.complete(&json!({"a": [1, 2], "b": 1})).unwrap(), a);
        assert!(matches!(replay.complete(&json!({"y": 0})), Err(KnowledgeError::ReplayMiss(_))));
    }
}
