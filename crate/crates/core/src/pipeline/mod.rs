//! End-to-end batch stages: plan, augment, merge, preview and validate.
//!
//! Each stage reads and writes plain files so a run can be inspected,
//! resumed or re-merged at any point.

mod augment;
mod config;
pub mod imaging;
pub mod manifest;
mod merge;
mod plan;
mod preview;
mod validate;

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;

use crate::annotation::AnnotationError;
use crate::inpaint::InpaintError;
use crate::mask::MaskError;
use crate::policy::PolicyError;
use crate::remote::RemoteError;

pub use augment::{run_augment, AugmentOptions, AugmentReport};
pub use config::{BackendSelection, ConfigOverrides, RunConfig};
pub use manifest::{EntryStatus, ManifestEntry, ManifestHeader, ManifestRecord, ManifestState, ManifestWriter};
pub use merge::{run_merge, MergeOptions, MergeReport};
pub use plan::{background_ratios, run_plan, PlanOptions, PlanOutput, PlanSummary};
pub use preview::{run_preview, PreviewOptions, PreviewReport};
pub use validate::{run_validate, Finding, FindingKind, Severity, ValidationReport};

pub const PLAN_FILE: &str = "plan.jsonl";
pub const PLAN_SUMMARY_FILE: &str = "plan_summary.json";
pub const SELECTED_FILE: &str = "selected.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const MERGED_FILE: &str = "augmented.json";
pub const PREVIEW_FILE: &str = "preview.png";
pub const IMAGES_SUBDIR: &str = "images";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("image file missing: {0}")]
    MissingImageFile(PathBuf),
    #[error("image codec: {0}")]
    Image(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("manifest is not terminal: {missing} planned entries have no outcome yet")]
    NonTerminalManifest { missing: usize },
    #[error("no finished entries to preview")]
    NothingToPreview,
    #[error("output directory {0} is not writable")]
    UnwritableOutput(PathBuf),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Inpaint(#[from] InpaintError),
    #[error(transparent)]
    Remote(#[from] RemoteError),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        PipelineError::Io { path: path.to_path_buf(), message: err.to_string() }
    }
}

pub(crate) fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub(crate) fn read_dataset(path: &Path) -> Result<crate::annotation::AnnotatedDataset, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(crate::annotation::parse_dataset(&bytes)?)
}

/// Path of `target` relative to directory `base`, both resolved first.
pub fn relative_path(base: &Path, target: &Path) -> Result<PathBuf, PipelineError> {
    let base = base.canonicalize().map_err(|e| PipelineError::io(base, e))?;
    let target = target.canonicalize().map_err(|e| PipelineError::io(target, e))?;
    let b: Vec<_> = base.components().collect();
    let t: Vec<_> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    Ok(out)
}
