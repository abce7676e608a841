//! Append-only record log. Platform state is a fold over these records, so
//! anything accepted before a crash is rebuilt on restart.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::Assignment;
use crate::experiment::{EntitySet, Experiment, ExperimentStatus};
use crate::telemetry::{ClientEvent, Session};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalRecord {
    EntitySetUploaded {
        set: EntitySet,
    },
    ExperimentCreated {
        experiment: Experiment,
    },
    StatusChanged {
        experiment_id: String,
        status: ExperimentStatus,
    },
    Assigned {
        experiment_id: String,
        assignment: Assignment,
    },
    /// A session enters the feed with its fully built display feed.
    SessionStarted {
        session: Box<Session>,
    },
    EventsAppended {
        session_id: String,
        events: Vec<ClientEvent>,
        received_at: DateTime<Utc>,
        /// Set when the batch carried feed_finished.
        feed_finished: Option<u64>,
    },
    SurveySubmitted {
        session_id: String,
        responses: BTreeMap<String, serde_json::Value>,
        at: DateTime<Utc>,
    },
    Abandoned {
        session_id: String,
        at: DateTime<Utc>,
    },
}

#[derive(Debug, Error)]
pub enum JournalError {
    #[error("journal I/O: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt journal record at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

pub trait Journal: Send + Sync {
    /// Durably appends one record. Returns only once the record will survive
    /// a process crash.
    fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError>;

    /// Every record appended so far, oldest first.
    fn load(&mut self) -> Result<Vec<JournalRecord>, JournalError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Durability {
    /// Write through to the OS; survives process death.
    Flush,
    /// Also fsync; survives power loss.
    Fsync,
}

/// One JSON record per line. A torn trailing line left by a crash is
/// discarded on open.
pub struct FileJournal {
    path: PathBuf,
    file: File,
    durability: Durability,
}

impl FileJournal {
    pub fn open(path: impl AsRef<Path>, durability: Durability) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut journal = Self {
            path,
            file,
            durability,
        };
        journal.repair_tail()?;
        Ok(journal)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Truncates any bytes after the last newline.
    fn repair_tail(&mut self) -> Result<(), JournalError> {
        let len = self.file.metadata()?.len();
        if len == 0 {
            return Ok(());
        }
        let mut reader = BufReader::new(File::open(&self.path)?);
        let mut good = 0u64;
        let mut buf = Vec::new();
        loop {
            buf.clear();
            let n = reader.read_until(b'\n', &mut buf)?;
            if n == 0 || buf.last() != Some(&b'\n') {
                break;
            }
            good += n as u64;
        }
        if good < len {
            tracing::warn!(path = %self.path.display(), dropped = len - good, "discarding torn journal tail");
            self.file.set_len(good)?;
            self.file.seek(SeekFrom::End(0))?;
        }
        Ok(())
    }
}

impl Journal for FileJournal {
    fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        let mut line = serde_json::to_vec(record).expect("journal records serialize");
        line.push(b'\n');
        self.file.write_all(&line)?;
        self.file.flush()?;
        if self.durability == Durability::Fsync {
            self.file.sync_data()?;
        }
        Ok(())
    }

    fn load(&mut self) -> Result<Vec<JournalRecord>, JournalError> {
        let reader = BufReader::new(File::open(&self.path)?);
        let mut out = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record = serde_json::from_str(&line).map_err(|e| JournalError::Corrupt {
                line: i + 1,
                reason: e.to_string(),
            })?;
            out.push(record);
        }
        Ok(out)
    }
}

/// In-memory journal; clones share the same record list.
#[derive(Clone, Default)]
pub struct MemoryJournal {
    records: Arc<Mutex<Vec<JournalRecord>>>,
}

impl MemoryJournal {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<JournalRecord> {
        self.records.lock().unwrap().clone()
    }
}

impl Journal for MemoryJournal {
    fn append(&mut self, record: &JournalRecord) -> Result<(), JournalError> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }

    fn load(&mut self) -> Result<Vec<JournalRecord>, JournalError> {
        Ok(self.records())
    }
}
