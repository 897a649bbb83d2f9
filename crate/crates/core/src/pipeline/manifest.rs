//! Append-only JSONL provenance log.
//!
//! Every run appends a header line carrying its effective configuration,
//! followed by one line per finished plan entry. Replaying the file keeps
//! the latest line per `(source_image_id, copy_index)`.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Done,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source_image_id: u64,
    pub copy_index: u32,
    /// Relative to the manifest's directory.
    pub output_file: String,
    pub prompt: String,
    pub step_budget: u32,
    pub freedom: f64,
    pub guidance_scale: f64,
    pub erosion_kernel: usize,
    pub seed: u64,
    pub background_ratio: f64,
    pub backend: String,
    /// SHA-256 of the written PNG; present iff `status` is done.
    pub checksum: Option<String>,
    pub status: EntryStatus,
    /// Nothing was left to regenerate after erosion; the source was copied.
    #[serde(default)]
    pub noop: bool,
    pub finished_at_ms: u64,
    pub wall_time_ms: u64,
}

impl ManifestEntry {
    pub fn key(&self) -> (u64, u32) {
        (self.source_image_id, self.copy_index)
    }

    pub fn is_done(&self) -> bool {
        self.status == EntryStatus::Done
    }

    /// The entry without its timing fields, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self { finished_at_ms: 0, wall_time_ms: 0, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub started_at_ms: u64,
    pub plan_entries: usize,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
pub enum ManifestRecord {
    Header(ManifestHeader),
    Entry(ManifestEntry),
}

/// State reconstructed from a manifest file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ManifestState {
    pub headers: Vec<ManifestHeader>,
    pub entries: BTreeMap<(u64, u32), ManifestEntry>,
}

impl ManifestState {
    pub fn replay(path: &Path) -> Result<Self, PipelineError> {
        let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| PipelineError::io(path, e))?;
        let mut state = ManifestState::default();
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<ManifestRecord>(line) {
                Ok(ManifestRecord::Header(h)) => state.headers.push(h),
                Ok(ManifestRecord::Entry(e)) => {
                    state.entries.insert(e.key(), e);
                }
                // A torn final line is what an interrupted append leaves behind.
                Err(e) if i == last => {
                    log::warn!("{}: ignoring truncated last line: {e}", path.display());
                }
                Err(e) => {
                    return Err(PipelineError::Manifest(format!("{} line {}: {e}", path.display(), i + 1)));
                }
            }
        }
        Ok(state)
    }

    pub fn load_or_default(path: &Path) -> Result<Self, PipelineError> {
        if path.exists() {
            Self::replay(path)
        } else {
            Ok(Self::default())
        }
    }

    pub fn done(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.values().filter(|e| e.is_done())
    }

    /// Plan size declared by the most recent run.
    pub fn expected_entries(&self) -> Option<usize> {
        self.headers.last().map(|h| h.plan_entries)
    }
}

/// Single writer; every record is flushed as one line.
pub struct ManifestWriter {
    path: PathBuf,
    file: File,
}

impl ManifestWriter {
    pub fn append(path: &Path) -> Result<Self, PipelineError> {
        if path.exists() {
            // Drop a torn final line left by an interrupted run.
            let text = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
            if !text.is_empty() && text.last() != Some(&b'\n') {
                let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
                log::warn!("{}: discarding {} bytes of torn record", path.display(), text.len() - keep);
                let f = OpenOptions::new().write(true).open(path).map_err(|e| PipelineError::io(path, e))?;
                f.set_len(keep as u64).map_err(|e| PipelineError::io(path, e))?;
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| PipelineError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), file })
    }

    pub fn write(&mut self, record: &ManifestRecord) -> Result<(), PipelineError> {
        let mut line = serde_json::to_vec(record).map_err(|e| PipelineError::Manifest(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(|e| PipelineError::io(&self.path, e))?;
        self.file.flush().map_err(|e| PipelineError::io(&self.path, e))
    }
}
