//! Append-only JSON-lines run log.
//!
//! The first line is a [`RunManifest`]; each following line is one
//! [`RunEvent`] with contiguous sequence numbers starting at 1. Events carry
//! logical ticks only, so two runs with the same inputs produce the same
//! event lines byte for byte. Wall-clock time appears in the manifest alone.

mod events;
mod report;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use events::{EventKind, RunEvent};
pub use report::{
    build_report, emit_report, render_markdown, ReportFormat, RoundReport, RunReport,
};

use crate::engine::prompts::feedback_role;
use crate::engine::{EngineConfig, EngineError, EngineState};
use crate::gateway::{BackendDescriptor, ModelRole};
use crate::scoring::ReferenceCorpus;

pub const LOG_FORMAT: &str = "promptloop-run-log";
pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("event ordering violated: {0}")]
    Ordering(String),
    #[error("run already finished")]
    AlreadyFinished,
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt run log, line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("run log is empty")]
    Empty,
    #[error("{which} digest mismatch: log has {logged}, supplied {supplied}")]
    DigestMismatch {
        which: &'static str,
        logged: String,
        supplied: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// SHA-256 of the canonical JSON encoding of an engine configuration.
pub fn config_digest(config: &EngineConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&canonical))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub format_version: u32,
    pub run_id: String,
    pub config_digest: String,
    pub corpus_digest: String,
    pub backend: BackendDescriptor,
    pub artifact_version: String,
    /// Wall-clock creation time, seconds since the Unix epoch.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn new(
        config: &EngineConfig,
        corpus: &ReferenceCorpus,
        backend: &BackendDescriptor,
        task_prompt: &str,
    ) -> Self {
        let config_digest = config_digest(config);
        let corpus_digest = corpus.digest();
        let mut h = Sha256::new();
        h.update(config_digest.as_bytes());
        h.update(corpus_digest.as_bytes());
        h.update(task_prompt.as_bytes());
        let run_id = hex::encode(&h.finalize()[..8]);
        Self {
            format: LOG_FORMAT.to_string(),
            format_version: LOG_FORMAT_VERSION,
            run_id,
            config_digest,
            corpus_digest,
            backend: backend.clone(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    fn to_line(&self) -> String {
        serde_json::to_string(self).expect("manifest serializes")
    }
}

/// Checks the append contract of `event` against the events before it.
fn check_next(previous: &[RunEvent], event: &RunEvent) -> Result<(), StoreError> {
    let expected = previous.len() as u64 + 1;
    if event.seq != expected {
        return Err(StoreError::Ordering(format!(
            "expected sequence number {expected}, got {}",
            event.seq
        )));
    }
    if event.tick != event.seq {
        return Err(StoreError::Ordering(format!(
            "tick {} does not match sequence number {}",
            event.tick, event.seq
        )));
    }
    let is_start = matches!(event.kind, EventKind::RunStarted { .. });
    if previous.is_empty() != is_start {
        return Err(StoreError::Ordering(if is_start {
            "RunStarted may only appear first".into()
        } else {
            format!("first event must be RunStarted, got {}", event.kind.name())
        }));
    }
    if matches!(previous.last(), Some(e) if matches!(e.kind, EventKind::RunFinished { .. })) {
        return Err(StoreError::AlreadyFinished);
    }
    Ok(())
}

/// An append-only event log, optionally backed by a file.
#[derive(Debug)]
pub struct RunLog {
    manifest: RunManifest,
    events: Vec<RunEvent>,
    file: Option<(PathBuf, BufWriter<File>)>,
}

impl RunLog {
    pub fn in_memory(manifest: RunManifest) -> Self {
        Self {
            manifest,
            events: Vec::new(),
            file: None,
        }
    }

    /// Creates a new log file; refuses to overwrite an existing one.
    pub fn create(path: &Path, manifest: RunManifest) -> Result<Self, StoreError> {
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(io_err(path))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", manifest.to_line()).map_err(io_err(path))?;
        writer.flush().map_err(io_err(path))?;
        Ok(Self {
            manifest,
            events: Vec::new(),
            file: Some((path.to_path_buf(), writer)),
        })
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.events.last(), Some(e) if matches!(e.kind, EventKind::RunFinished { .. }))
    }

    pub fn append(&mut self, event: RunEvent) -> Result<(), StoreError> {
        check_next(&self.events, &event)?;
        if let Some((path, writer)) = &mut self.file {
            writeln!(writer, "{}", event.to_line()).map_err(io_err(path))?;
        }
        self.events.push(event);
        Ok(())
    }

    /// Flushes buffered lines and syncs them to disk.
    pub fn sync(&mut self) -> Result<(), StoreError> {
        if let Some((path, writer)) = &mut self.file {
            writer.flush().map_err(io_err(path))?;
            writer.get_ref().sync_data().map_err(io_err(path))?;
        }
        Ok(())
    }

    /// The event lines, newline-terminated, without the manifest.
    pub fn canonical_events(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        out
    }

    /// Manifest line followed by the event lines.
    pub fn to_jsonl(&self) -> String {
        format!("{}\n{}", self.manifest.to_line(), self.canonical_events())
    }
}

/// A log read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedLog {
    pub manifest: RunManifest,
    pub events: Vec<RunEvent>,
    /// An unterminated, unparsable last line was dropped.
    pub torn_tail: bool,
}

impl LoadedLog {
    pub fn is_finished(&self) -> bool {
        self.events
            .iter()
            .any(|e| matches!(e.kind, EventKind::RunFinished { .. }))
    }

    /// Prefix of events ending at the last closed batch.
    pub fn committed(&self) -> &[RunEvent] {
        let end = self
            .events
            .iter()
            .rposition(|e| e.kind.closes_batch())
            .map_or(0, |i| i + 1);
        &self.events[..end]
    }
}

/// Parses and validates a log from its text.
pub fn parse_log(text: &str) -> Result<LoadedLog, StoreError> {
    if text.trim().is_empty() {
        return Err(StoreError::Empty);
    }
    let terminated = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    let manifest: RunManifest =
        serde_json::from_str(lines[0]).map_err(|e| StoreError::Corrupt {
            line: 1,
            reason: format!("bad manifest: {e}"),
        })?;
    if manifest.format != LOG_FORMAT {
        return Err(StoreError::Corrupt {
            line: 1,
            reason: format!("not a {LOG_FORMAT} file"),
        });
    }
    let mut events: Vec<RunEvent> = Vec::with_capacity(lines.len());
    let mut torn_tail = false;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let last = i + 1 == lines.len();
        let event: RunEvent = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(_) if last && !terminated => {
                torn_tail = true;
                break;
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        };
        check_next(&events, &event).map_err(|e| StoreError::Corrupt {
            line: i + 1,
            reason: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(LoadedLog {
        manifest,
        events,
        torn_tail,
    })
}

pub fn read_log(path: &Path) -> Result<LoadedLog, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_log(&text)
}

/// Chat replies each role produced for the given committed events. A scripted
/// mock fast-forwarded by these counts continues exactly where the logged run
/// stopped. Calls made by a round that later failed are not logged, so the
/// count is exact only for logs without `BackendFailure` events.
pub fn replies_consumed(events: &[RunEvent]) -> BTreeMap<ModelRole, usize> {
    let mut counts = BTreeMap::new();
    let mut bump = |role| *counts.entry(role).or_insert(0) += 1;
    for event in events {
        match &event.kind {
            EventKind::PromptRegenerated { .. } => bump(ModelRole::Prompting),
            EventKind::SampleGenerated { .. } => bump(ModelRole::Actor),
            EventKind::FeedbackIssued { route, .. } => bump(feedback_role(*route)),
            EventKind::RoundSummarized { .. } => bump(ModelRole::Summarizer),
            EventKind::MutationApplied { .. } => bump(ModelRole::Mutator),
            EventKind::MutationRejected {
                sentence_index: Some(_),
                ..
            } => bump(ModelRole::Mutator),
            _ => {}
        }
    }
    counts
}

/// Reopens an interrupted run: verifies digests, drops any uncommitted tail
/// (rewriting the file), and rebuilds the engine state by replay.
pub fn resume(
    path: &Path,
    config: &EngineConfig,
    corpus: &ReferenceCorpus,
) -> Result<(EngineState, RunLog), EngineError> {
    let loaded = read_log(path)?;
    let supplied = config_digest(config);
    if loaded.manifest.config_digest != supplied {
        return Err(StoreError::DigestMismatch {
            which: "config",
            logged: loaded.manifest.config_digest.clone(),
            supplied,
        }
        .into());
    }
    let supplied = corpus.digest();
    if loaded.manifest.corpus_digest != supplied {
        return Err(StoreError::DigestMismatch {
            which: "corpus",
            logged: loaded.manifest.corpus_digest.clone(),
            supplied,
        }
        .into());
    }
    if loaded.is_finished() {
        return Err(StoreError::AlreadyFinished.into());
    }
    let committed = loaded.committed().to_vec();
    if committed.is_empty() {
        return Err(StoreError::Corrupt {
            line: 2,
            reason: "no committed events to resume from".into(),
        }
        .into());
    }
    let dropped = loaded.events.len() - committed.len();
    if dropped > 0 || loaded.torn_tail {
        log::warn!(
            "{}: discarding {dropped} uncommitted event(s){}",
            path.display(),
            if loaded.torn_tail {
                " and a torn line"
            } else {
                ""
            }
        );
    }
    let state = EngineState::replay(config, &committed)?;

    let mut log = RunLog {
        manifest: loaded.manifest,
        events: committed,
        file: None,
    };
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, log.to_jsonl()).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    let file = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    log.file = Some((path.to_path_buf(), BufWriter::new(file)));
    Ok((state, log))
}
