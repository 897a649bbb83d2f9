use std::path::PathBuf;

use image::{imageops, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::imaging::{self, Letterbox};
use super::manifest::{ManifestEntry, ManifestState};
use super::{read_dataset, PipelineError, RunConfig};
use crate::annotation::image_foreground;
use crate::mask::background_mask;

const OVERLAY: Rgb<u8> = Rgb([255, 0, 255]);

#[derive(Debug, Clone)]
pub struct PreviewOptions {
    pub annotations: PathBuf,
    pub images_dir: PathBuf,
    pub manifest: PathBuf,
    pub output: PathBuf,
    pub count: usize,
    pub seed: u64,
    /// Side of each square tile.
    pub tile: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreviewReport {
    pub rows: usize,
    pub skipped: usize,
    pub width: u32,
    pub height: u32,
}

/// Renders `count` sampled entries as rows of original, regenerate-mask
/// overlay and augmented result.
pub fn run_preview(opts: &PreviewOptions) -> Result<PreviewReport, PipelineError> {
    let ds = read_dataset(&opts.annotations)?;
    let state = ManifestState::replay(&opts.manifest)?;
    let config = state.headers.last().map(|h| h.config.clone()).unwrap_or_default();
    let done: Vec<&ManifestEntry> = state.done().collect();
    if done.is_empty() || opts.count == 0 {
        return Err(PipelineError::NothingToPreview);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picked = rand::seq::index::sample(&mut rng, done.len(), opts.count.min(done.len())).into_vec();
    picked.sort_unstable();

    let manifest_dir = opts.manifest.parent().map(PathBuf::from).unwrap_or_default();
    let by_image = ds.annotations_by_image();
    let mut rows = Vec::new();
    let mut skipped = 0;
    for i in picked {
        let entry = done[i];
        match render_row(opts, &config, &ds, &by_image, &manifest_dir, entry) {
            Ok(row) => rows.push(row),
            Err(e) => {
                log::warn!("preview: skipping ({}, {}): {e}", entry.source_image_id, entry.copy_index);
                skipped += 1;
            }
        }
    }
    if rows.is_empty() {
        return Err(PipelineError::NothingToPreview);
    }

    let t = opts.tile;
    let mut grid = RgbImage::new(3 * t, rows.len() as u32 * t);
    for (r, tiles) in rows.iter().enumerate() {
        for (c, tile) in tiles.iter().enumerate() {
            imageops::replace(&mut grid, tile, (c as u32 * t) as i64, (r as u32 * t) as i64);
        }
    }
    imaging::write_atomic(&opts.output, &imaging::encode_png(&grid)?)?;
    Ok(PreviewReport { rows: rows.len(), skipped, width: grid.width(), height: grid.height() })
}

fn render_row(
    opts: &PreviewOptions,
    config: &RunConfig,
    ds: &crate::annotation::AnnotatedDataset,
    by_image: &std::collections::HashMap<u64, Vec<&crate::annotation::AnnotationRecord>>,
    manifest_dir: &std::path::Path,
    entry: &ManifestEntry,
) -> Result<[RgbImage; 3], PipelineError> {
    let record = ds
        .image(entry.source_image_id)
        .ok_or_else(|| PipelineError::Config(format!("unknown source image {}", entry.source_image_id)))?;
    let src_path = opts.images_dir.join(&record.file_name);
    let out_path = manifest_dir.join(&entry.output_file);
    for p in [&src_path, &out_path] {
        if !p.is_file() {
            return Err(PipelineError::MissingImageFile(p.clone()));
        }
    }
    let original = imaging::load_rgb(&src_path)?;
    let augmented = imaging::load_rgb(&out_path)?;

    let anns = by_image.get(&record.id).map(Vec::as_slice).unwrap_or(&[]);
    let background = background_mask(&image_foreground(record, anns)?);
    let lb = Letterbox::new(record.width, record.height, config.inpaint_size);
    let (_, regen) = imaging::regeneration_masks(&background, &lb, entry.erosion_kernel)?;
    let mut overlay = original.clone();
    for (x, y, px) in overlay.enumerate_pixels_mut() {
        if regen.get(y as usize, x as usize) {
            for c in 0..3 {
                px[c] = ((px[c] as u16 + OVERLAY[c] as u16) / 2) as u8;
            }
        }
    }

    let tile = Letterbox::new(record.width, record.height, opts.tile);
    Ok([tile.to_canvas(&original), tile.to_canvas(&overlay), tile.to_canvas(&augmented)])
}
