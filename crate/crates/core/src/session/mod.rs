//! Append-only session log: one JSON header line followed by one JSON line
//! per event. The log is self-contained, carrying the score it was recorded
//! against, so it can be replayed and mined without any other file.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conductor::{ConductorEvent, Emission};
use crate::ptz::CameraPose;
use crate::score::{PartId, Pitch, Score};

mod replay;
pub mod serve;

pub use replay::{replay, ReplayError, ReplayReport};

pub const LOG_FORMAT: &str = "guided-harmony-session/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartPitch {
    pub part: PartId,
    pub midi: Pitch,
}

/// Everything that can appear in a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    /// An event fed to the conductor.
    Input(ConductorEvent),
    /// Something the conductor emitted in response.
    Emission(Emission),
    CameraPose(CameraPose),
    /// A raised hand seen by the keypoint detector, before it enters the bus.
    Detection {
        part: PartId,
        #[serde(rename = "signal_ms")]
        t_ms: u64,
    },
    /// What the ensemble is sounding.
    PitchState { pitches: Vec<PartPitch> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub score_hash: String,
    pub score: Score,
    #[serde(default)]
    pub configs: serde_json::Value,
    pub started_unix_ms: u64,
}

impl LogHeader {
    pub fn new(score: &Score, configs: serde_json::Value) -> Self {
        let started_unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or_default();
        LogHeader {
            format: LOG_FORMAT.to_owned(),
            score_hash: score.content_hash(),
            score: score.clone(),
            configs,
            started_unix_ms,
        }
    }

    pub fn with_start(mut self, started_unix_ms: u64) -> Self {
        self.started_unix_ms = started_unix_ms;
        self
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("session log is closed")]
    Closed,
    #[error("session log write failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log encode failed: {0}")]
    Encode(serde_json::Error),
}

impl From<serde_json::Error> for StorageError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            StorageError::Io(e.into())
        } else {
            StorageError::Encode(e)
        }
    }
}

struct RecorderInner {
    writer: Option<Box<dyn Write + Send>>,
    kept: Option<Vec<SessionEvent>>,
    header: Option<LogHeader>,
    seq: u64,
    last_t: u64,
    closed: bool,
}

/// Shared handle to the session's single log writer. Clones append to the
/// same log; sequence numbers are assigned under one lock, so concurrent
/// posters get distinct consecutive values.
#[derive(Clone)]
pub struct SessionRecorder {
    inner: Arc<Mutex<RecorderInner>>,
}

impl SessionRecorder {
    fn build(header: Option<LogHeader>, writer: Option<Box<dyn Write + Send>>, keep: bool) -> Result<Self, StorageError> {
        let mut inner = RecorderInner {
            writer,
            kept: keep.then(Vec::new),
            header,
            seq: 0,
            last_t: 0,
            closed: false,
        };
        if let (Some(w), Some(h)) = (inner.writer.as_mut(), inner.header.as_ref()) {
            serde_json::to_writer(&mut *w, h)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Ok(SessionRecorder { inner: Arc::new(Mutex::new(inner)) })
    }

    /// Assigns sequence numbers but stores nothing.
    pub fn disabled() -> Self {
        Self::build(None, None, false).expect("no io")
    }

    /// Keeps events in memory; see [`SessionRecorder::snapshot`].
    pub fn in_memory(header: LogHeader) -> Self {
        Self::build(Some(header), None, true).expect("no io")
    }

    pub fn to_writer(header: LogHeader, writer: impl Write + Send + 'static) -> Result<Self, StorageError> {
        Self::build(Some(header), Some(Box::new(writer)), false)
    }

    pub fn create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self, StorageError> {
        let file = File::create(path)?;
        Self::to_writer(header, BufWriter::new(file))
    }

    /// Append one event and flush it. Timestamps never run backwards: an
    /// event stamped earlier than its predecessor takes the predecessor's time.
    pub fn record(&self, t_ms: u64, payload: Payload) -> Result<SessionEvent, StorageError> {
        let mut inner = self.inner.lock().expect("recorder lock");
        if inner.closed {
            return Err(StorageError::Closed);
        }
        let t_ms = t_ms.max(inner.last_t);
        let event = SessionEvent { seq: inner.seq + 1, t_ms, payload };
        if let Some(w) = inner.writer.as_mut() {
            serde_json::to_writer(&mut *w, &event)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        inner.seq += 1;
        inner.last_t = t_ms;
        if let Some(kept) = inner.kept.as_mut() {
            kept.push(event.clone());
        }
        Ok(event)
    }

    pub fn close(&self) -> Result<(), StorageError> {
        let mut inner = self.inner.lock().expect("recorder lock");
        inner.closed = true;
        if let Some(mut w) = inner.writer.take() {
            w.flush()?;
        }
        Ok(())
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("recorder lock").seq
    }

    /// The log so far, when recording in memory.
    pub fn snapshot(&self) -> Option<SessionLog> {
        let inner = self.inner.lock().expect("recorder lock");
        Some(SessionLog { header: inner.header.clone()?, events: inner.kept.clone()? })
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("corrupt session log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("reading session log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        Self::read(File::open(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, LogError> {
        Self::read(text.as_bytes())
    }

    /// Parse a JSON-lines log. A final line without its newline is treated as
    /// an interrupted write and dropped; any other undecodable line is corrupt.
    pub fn read(reader: impl Read) -> Result<Self, LogError> {
        let corrupt = |line: usize, reason: String| LogError::Corrupt { line, reason };
        let mut reader = BufReader::new(reader);
        let mut header: Option<LogHeader> = None;
        let mut events: Vec<SessionEvent> = Vec::new();
        let mut buf = String::new();
        let mut line_no = 0;
        loop {
            buf.clear();
            if reader.read_line(&mut buf)? == 0 {
                break;
            }
            line_no += 1;
            let complete = buf.ends_with('\n');
            let text = buf.trim();
            if text.is_empty() {
                continue;
            }
            if header.is_none() {
                let h: LogHeader =
                    serde_json::from_str(text).map_err(|e| corrupt(line_no, format!("header: {e}")))?;
                if h.format != LOG_FORMAT {
                    return Err(corrupt(line_no, format!("unknown format {:?}", h.format)));
                }
                if h.score.content_hash() != h.score_hash {
                    return Err(corrupt(line_no, "score hash does not match embedded score".into()));
                }
                header = Some(h);
                continue;
            }
            let ev: SessionEvent = match serde_json::from_str(text) {
                Ok(ev) => ev,
                Err(_) if !complete => break,
                Err(e) => return Err(corrupt(line_no, e.to_string())),
            };
            if let Some(prev) = events.last() {
                if ev.seq <= prev.seq {
                    return Err(corrupt(line_no, format!("seq {} after {}", ev.seq, prev.seq)));
                }
                if ev.t_ms < prev.t_ms {
                    return Err(corrupt(line_no, format!("time {} after {}", ev.t_ms, prev.t_ms)));
                }
            }
            events.push(ev);
        }
        let header = header.ok_or_else(|| corrupt(0, "missing header".into()))?;
        Ok(SessionLog { header, events })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for ev in &self.events {
            out.push_str(&serde_json::to_string(ev).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn score(&self) -> &Score {
        &self.header.score
    }
}
