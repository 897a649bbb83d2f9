use std::path::PathBuf;

use super::manifest::ManifestState;
use super::{read_dataset, relative_path, PipelineError};
use crate::annotation::{merge_augmented, AnnotatedDataset, GeneratedImage};

#[derive(Debug, Clone)]
pub struct MergeOptions {
    /// The original dataset; generated records are appended to it.
    pub annotations: PathBuf,
    pub manifest: PathBuf,
    /// Root the merged `file_name`s are relative to (the original images
    /// directory), so one root resolves every record.
    pub images_dir: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeReport {
    pub original_images: usize,
    pub generated_images: usize,
    pub failed_entries: usize,
    pub total_images: usize,
    pub total_annotations: usize,
}

/// Appends every successfully generated image to the original dataset.
///
/// Refuses a manifest whose latest run still has planned entries without an
/// outcome; failed entries are reported and left out.
pub fn run_merge(opts: &MergeOptions) -> Result<(AnnotatedDataset, MergeReport), PipelineError> {
    let original = read_dataset(&opts.annotations)?;
    let state = ManifestState::replay(&opts.manifest)?;
    let expected = state
        .expected_entries()
        .ok_or_else(|| PipelineError::Manifest(format!("{} has no run header", opts.manifest.display())))?;
    if state.entries.len() < expected {
        return Err(PipelineError::NonTerminalManifest { missing: expected - state.entries.len() });
    }
    let manifest_dir = opts
        .manifest
        .parent()
        .map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.to_path_buf() })
        .unwrap_or_else(|| PathBuf::from("."));

    // `entries` is a BTreeMap, so this is (source id, copy) order.
    let mut generated = Vec::new();
    for entry in state.done() {
        let file = manifest_dir.join(&entry.output_file);
        if !file.is_file() {
            return Err(PipelineError::MissingImageFile(file));
        }
        let rel = relative_path(&opts.images_dir, &file)?;
        generated.push(GeneratedImage {
            source_image_id: entry.source_image_id,
            file_name: rel.to_string_lossy().replace('\\', "/"),
        });
    }
    let failed = state.entries.len() - generated.len();
    if failed > 0 {
        log::warn!("{failed} failed entries are left out of the merge");
    }

    let merged = merge_augmented(&original, &generated)?;
    if let Some(dir) = opts.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|_| PipelineError::UnwritableOutput(dir.to_path_buf()))?;
    }
    super::imaging::write_atomic(&opts.output, &merged.to_json_bytes())?;
    let report = MergeReport {
        original_images: original.images.len(),
        generated_images: generated.len(),
        failed_entries: failed,
        total_images: merged.images.len(),
        total_annotations: merged.annotations.len(),
    };
    log::info!(
        "merged {} generated images into {} originals ({} images, {} annotations)",
        report.generated_images,
        report.original_images,
        report.total_images,
        report.total_annotations
    );
    Ok((merged, report))
}
