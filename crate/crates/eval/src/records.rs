//! Append-only JSONL store of [`ClassificationRecord`]s, one per line.
//!
//! Each append writes a whole line in a single call. A crash can therefore
//! leave at most one partial line at the end of the file, which
//! [`RecordStore::open`] cuts off.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;
use unitarget_core::ClassificationRecord;

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("record ({experiment}, {persona_id}, {instance_id}) already stored")]
    Duplicate {
        experiment: String,
        persona_id: String,
        instance_id: String,
    },
}

pub type RecordKey = (String, String, String);

fn key_of(r: &ClassificationRecord) -> RecordKey {
    (r.experiment.clone(), r.persona_id.clone(), r.instance_id.clone())
}

#[derive(Debug)]
pub struct RecordStore {
    path: PathBuf,
    file: File,
    keys: HashSet<RecordKey>,
}

impl RecordStore {
    /// Opens or creates the store, dropping a trailing partial line.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, RecordError> {
        let path = path.into();
        let io = |source| RecordError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let records = match std::fs::read(&path) {
            Ok(bytes) => {
                let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
                if complete < bytes.len() {
                    log::warn!(
                        "{}: dropping {} bytes of an incomplete last record",
                        path.display(),
                        bytes.len() - complete
                    );
                    let f = OpenOptions::new().write(true).open(&path).map_err(io)?;
                    f.set_len(complete as u64).map_err(io)?;
                }
                parse(&path, &bytes[..complete])?
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io(e)),
        };
        let mut keys = HashSet::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if !keys.insert(key_of(r)) {
                return Err(RecordError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("duplicate key ({}, {}, {})", r.experiment, r.persona_id, r.instance_id),
                });
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(Self { path, file, keys })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn contains(&self, experiment: &str, persona_id: &str, instance_id: &str) -> bool {
        self.keys
            .contains(&(experiment.to_string(), persona_id.to_string(), instance_id.to_string()))
    }

    /// Appends a record whose key is not stored yet.
    pub fn append(&mut self, record: &ClassificationRecord) -> Result<(), RecordError> {
        let key = key_of(record);
        if self.keys.contains(&key) {
            return Err(RecordError::Duplicate {
                experiment: key.0,
                persona_id: key.1,
                instance_id: key.2,
            });
        }
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        self.file.write_all(&line).map_err(|source| RecordError::Io {
            path: self.path.clone(),
            source,
        })?;
        self.keys.insert(key);
        Ok(())
    }

    /// Every stored record in file order.
    pub fn records(&self) -> Result<Vec<ClassificationRecord>, RecordError> {
        read_all(&self.path)
    }
}

/// Reads a record file without modifying it. A trailing partial line is ignored.
pub fn read_all(path: &Path) -> Result<Vec<ClassificationRecord>, RecordError> {
    let bytes = std::fs::read(path).map_err(|source| RecordError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    parse(path, &bytes[..complete])
}

fn parse(path: &Path, bytes: &[u8]) -> Result<Vec<ClassificationRecord>, RecordError> {
    let text = std::str::from_utf8(bytes).map_err(|e| RecordError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RecordError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(persona: &str, instance: &str) -> ClassificationRecord {
        ClassificationRecord {
            experiment: "e".into(),
            persona_id: persona.into(),
            instance_id: instance.into(),
            target: "jews".into(),
            model_id: "m".into(),
            verdict: Some(true),
            raw_response: r#"{"is_hate_speech": "true"}"#.into(),
            attempts: 1,
            timestamp: "2026-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn append_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut store = RecordStore::open(&path).unwrap();
        store.append(&record("a", "1")).unwrap();
        store.append(&record("b", "1")).unwrap();
        assert!(matches!(store.append(&record("a", "1")), Err(RecordError::Duplicate { .. })));
        drop(store);
        let store = RecordStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        assert!(store.contains("e", "b", "1"));
        assert_eq!(store.records().unwrap(), vec![record("a", "1"), record("b", "1")]);
    }

    #[test]
    fn partial_last_line_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        let mut store = RecordStore::open(&path).unwrap();
        store.append(&record("a", "1")).unwrap();
        drop(store);
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"experiment": "e", "persona_"#).unwrap();
        drop(f);
        assert_eq!(read_all(&path).unwrap().len(), 1);
        let mut store = RecordStore::open(&path).unwrap();
        store.append(&record("a", "2")).unwrap();
        assert_eq!(read_all(&path).unwrap().len(), 2);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(RecordStore::open(&path), Err(RecordError::Corrupt { line: 1, .. })));
    }
}
