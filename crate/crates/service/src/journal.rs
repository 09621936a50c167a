//! Append-only JSON-lines journal of service instance snapshots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use tokio::fs::OpenOptions;
use tokio::io::AsyncWriteExt;
use tokio::sync::Mutex;

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("corrupt journal {path} at byte offset {offset}: {reason}")]
    Corrupt { path: PathBuf, offset: u64, reason: String },
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Journal {
    path: PathBuf,
    writer: Mutex<()>,
}

/// Records carry an id; replay keeps the last record per id.
pub trait Keyed {
    fn key(&self) -> &str;
}

impl Journal {
    pub fn new(path: impl Into<PathBuf>) -> Journal {
        Journal { path: path.into(), writer: Mutex::new(()) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub async fn append<T: Serialize>(&self, record: &T) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let _guard = self.writer.lock().await;
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).await?;
        f.write_all(&line).await?;
        f.flush().await?;
        Ok(())
    }

    /// Replays the journal. A missing file is an empty journal; any line that
    /// does not decode, including an unterminated last line, is corruption.
    pub fn replay<T: DeserializeOwned + Keyed>(path: &Path) -> Result<BTreeMap<String, T>, JournalError> {
        let bytes = match std::fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
            Err(e) => return Err(e.into()),
        };
        let corrupt = |offset: usize, reason: String| JournalError::Corrupt {
            path: path.to_owned(),
            offset: offset as u64,
            reason,
        };
        let mut out = BTreeMap::new();
        let mut offset = 0;
        while offset < bytes.len() {
            let Some(len) = bytes[offset..].iter().position(|b| *b == b'\n') else {
                return Err(corrupt(offset, "truncated record".into()));
            };
            let line = &bytes[offset..offset + len];
            let record: T = serde_json::from_slice(line).map_err(|e| corrupt(offset, e.to_string()))?;
            out.insert(record.key().to_owned(), record);
            offset += len + 1;
        }
        Ok(out)
    }
}
