//! On-disk layout under the data directory:
//!
//! ```text
//! cases/<case_id>.json
//! runs/index.ndjson            one RunEntry per line, appended at creation
//! runs/<run_id>/events.ndjson  the run's event log, appended one line per event
//! ```
//!
//! Nothing is rewritten in place. Recovery only truncates a torn final
//! line and appends.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use feat_core::case::{parse_dossier, CaseDossier};
use feat_core::pipeline::{PipelineConfig, RunState, RunStatus};
use feat_core::trace::{Clock, Event, EventKind, Tracer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("invalid id {0:?}: use 1-128 of [A-Za-z0-9._-], not starting with '.'")]
    InvalidId(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("run {run_id}: line {line} is corrupt: {message}")]
    Corrupt { run_id: String, line: usize, message: String },
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> StoreError + '_ {
    move |e| StoreError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn valid_id(id: &str) -> bool {
    (1..=128).contains(&id.len())
        && !id.starts_with('.')
        && id.bytes().all(|b| b.is_ascii_alphanumeric() || b"._-".contains(&b))
}

fn check_id(id: &str) -> Result<(), StoreError> {
    if valid_id(id) {
        Ok(())
    } else {
        Err(StoreError::InvalidId(id.to_string()))
    }
}

/// What a run was created with; enough to start it again.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    pub case_id: String,
    pub nonce: String,
    pub created_at_ms: u64,
    pub config: PipelineConfig,
}

/// A parsed log. `raw` holds the complete lines exactly as stored.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub raw: Vec<u8>,
    pub events: Vec<Event>,
    /// Bytes after the last newline: a record cut short by a crash.
    pub torn_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Recovery {
    /// Never started; safe to start again.
    Queued { run_id: String },
    /// Interrupted mid-run and now closed with `run_failed`.
    Failed { run_id: String, events: usize, torn_bytes: usize },
    /// A line other than the last does not parse. The log is left as is.
    Corrupt { run_id: String, line: usize, message: String },
}

pub const INTERRUPTED: &str = "interrupted: the service stopped while this run was executing";

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    index_lock: Arc<Mutex<()>>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for d in [root.join("cases"), root.join("runs")] {
            fs::create_dir_all(&d).map_err(io(&d))?;
        }
        Ok(Store {
            root,
            index_lock: Arc::new(Mutex::new(())),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn case_path(&self, case_id: &str) -> PathBuf {
        self.root.join("cases").join(format!("{case_id}.json"))
    }

    fn index_path(&self) -> PathBuf {
        self.root.join("runs").join("index.ndjson")
    }

    pub fn log_path(&self, run_id: &str) -> PathBuf {
        self.root.join("runs").join(run_id).join("events.ndjson")
    }

    /// Stores a case. Returns false when an identical case already exists;
    /// a different case under the same id is a conflict.
    pub fn put_case(&self, dossier: &CaseDossier) -> Result<bool, StoreError> {
        check_id(&dossier.case_id)?;
        let path = self.case_path(&dossier.case_id);
        if let Some(existing) = self.get_case(&dossier.case_id)? {
            if existing == *dossier {
                return Ok(false);
            }
            return Err(StoreError::Conflict(format!(
                "case {} already exists with different content",
                dossier.case_id
            )));
        }
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, dossier.to_json()).map_err(io(&tmp))?;
        fs::rename(&tmp, &path).map_err(io(&path))?;
        Ok(true)
    }

    pub fn get_case(&self, case_id: &str) -> Result<Option<CaseDossier>, StoreError> {
        check_id(case_id)?;
        let path = self.case_path(case_id);
        match fs::read(&path) {
            Ok(bytes) => parse_dossier(&bytes).map(Some).map_err(|e| StoreError::Io {
                path,
                message: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&path)(e)),
        }
    }

    /// Registers a run and creates its empty log.
    pub fn create_run(&self, entry: &RunEntry) -> Result<(), StoreError> {
        check_id(&entry.run_id)?;
        let _guard = self.index_lock.lock().unwrap();
        let dir = self.root.join("runs").join(&entry.run_id);
        match fs::create_dir(&dir) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::Conflict(format!("run {} already exists", entry.run_id)))
            }
            Err(e) => return Err(io(&dir)(e)),
        }
        let log = self.log_path(&entry.run_id);
        File::create(&log).map_err(io(&log))?;
        let index = self.index_path();
        let mut f = OpenOptions::new().create(true).append(true).open(&index).map_err(io(&index))?;
        let line = format!("{}\n", serde_json::to_string(entry).unwrap());
        f.write_all(line.as_bytes()).and_then(|_| f.sync_data()).map_err(io(&index))
    }

    /// Index entries in creation order. A torn final line is skipped.
    pub fn runs(&self) -> Result<Vec<RunEntry>, StoreError> {
        let path = self.index_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io(&path)(e)),
        };
        let complete = &text[..text.rfind('\n').map_or(0, |i| i + 1)];
        complete
            .lines()
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt {
                    run_id: "index".into(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect()
    }

    pub fn run(&self, run_id: &str) -> Result<RunEntry, StoreError> {
        check_id(run_id)?;
        self.runs()?
            .into_iter()
            .find(|e| e.run_id == run_id)
            .ok_or_else(|| StoreError::NotFound(format!("run {run_id}")))
    }

    pub fn read_log(&self, run_id: &str) -> Result<RunLog, StoreError> {
        check_id(run_id)?;
        let path = self.log_path(run_id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(format!("run {run_id}")))
            }
            Err(e) => return Err(io(&path)(e)),
        };
        parse_log(run_id, bytes)
    }

    /// Appends to an existing log.
    pub fn log_writer(&self, run_id: &str) -> Result<File, StoreError> {
        let path = self.log_path(run_id);
        OpenOptions::new().append(true).open(&path).map_err(io(&path))
    }

    /// Status and contents per the log alone. `None` for a run that has
    /// not started.
    pub fn replay(&self, run_id: &str) -> Result<Option<RunState>, StoreError> {
        let log = self.read_log(run_id)?;
        if log.events.is_empty() {
            return Ok(None);
        }
        RunState::replay(&log.events).map(Some).map_err(|e| StoreError::Corrupt {
            run_id: run_id.to_string(),
            line: 0,
            message: e.to_string(),
        })
    }

    /// Closes every run that was executing when the service stopped, except
    /// those in `active`. Runs awaiting review stay open: they need no
    /// worker. A torn final record is cut off and noted with a warning
    /// before the closing `run_failed`.
    pub fn recover(&self, clock: Arc<dyn Clock>, active: &HashSet<String>) -> Result<Vec<Recovery>, StoreError> {
        let mut out = Vec::new();
        for entry in self.runs()? {
            if active.contains(&entry.run_id) {
                continue;
            }
            let log = match self.read_log(&entry.run_id) {
                Ok(l) => l,
                Err(StoreError::Corrupt { run_id, line, message }) => {
                    tracing::error!(%run_id, line, %message, "corrupt run log left untouched");
                    out.push(Recovery::Corrupt { run_id, line, message });
                    continue;
                }
                Err(e) => return Err(e),
            };
            if log.events.is_empty() && log.torn_bytes == 0 {
                out.push(Recovery::Queued { run_id: entry.run_id });
                continue;
            }
            let status = match RunState::replay(&log.events) {
                Ok(s) => Some(s.status),
                Err(_) if log.events.is_empty() => None,
                Err(e) => {
                    out.push(Recovery::Corrupt {
                        run_id: entry.run_id,
                        line: 0,
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            if matches!(status, Some(s) if s.is_terminal() || s == RunStatus::AwaitingReview) && log.torn_bytes == 0 {
                continue;
            }
            let path = self.log_path(&entry.run_id);
            if log.torn_bytes > 0 {
                let f = OpenOptions::new().write(true).open(&path).map_err(io(&path))?;
                f.set_len(log.raw.len() as u64).map_err(io(&path))?;
                f.sync_data().map_err(io(&path))?;
            }
            let tracer = Tracer::resume(clock.clone(), log.events.len() as u64, Some(Box::new(self.log_writer(&entry.run_id)?)));
            if log.torn_bytes > 0 {
                tracer.warn(format!("recovery dropped a torn final record of {} bytes", log.torn_bytes));
            }
            if log.events.is_empty() {
                // Torn before the first record completed: nothing to close.
                out.push(Recovery::Queued { run_id: entry.run_id });
                continue;
            }
            if !matches!(status, Some(s) if s.is_terminal() || s == RunStatus::AwaitingReview) {
                tracer.emit(EventKind::RunFailed { error: INTERRUPTED.into() });
            }
            if let Some(e) = tracer.sink_error() {
                return Err(StoreError::Io { path, message: e });
            }
            tracing::warn!(run_id = %entry.run_id, events = log.events.len(), torn = log.torn_bytes, "recovered interrupted run");
            out.push(Recovery::Failed {
                run_id: entry.run_id,
                events: log.events.len(),
                torn_bytes: log.torn_bytes,
            });
        }
        Ok(out)
    }
}

fn parse_log(run_id: &str, mut bytes: Vec<u8>) -> Result<RunLog, StoreError> {
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let torn_bytes = bytes.len() - complete;
    bytes.truncate(complete);
    let text = std::str::from_utf8(&bytes).map_err(|e| StoreError::Corrupt {
        run_id: run_id.to_string(),
        line: bytes[..e.valid_up_to()].iter().filter(|b| **b == b'\n').count() + 1,
        message: "invalid UTF-8".into(),
    })?;
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let event = Event::parse_line(line).map_err(|e| StoreError::Corrupt {
            run_id: run_id.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if event.seq != i as u64 {
            return Err(StoreError::Corrupt {
                run_id: run_id.to_string(),
                line: i + 1,
                message: format!("sequence {} where {i} was expected", event.seq),
            });
        }
        events.push(event);
    }
    Ok(RunLog {
        raw: bytes,
        events,
        torn_bytes,
    })
}
