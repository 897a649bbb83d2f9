use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_dataset, PipelineError, RunConfig, PLAN_FILE, PLAN_SUMMARY_FILE, SELECTED_FILE};
use crate::annotation::{image_foreground, sample_subset, AnnotatedDataset};
use crate::mask::{area_ratio, background_mask};
use crate::policy::{build_sampling_plan, AugmentationPlan};

#[derive(Debug, Clone)]
pub struct PlanOptions {
    pub annotations: PathBuf,
    pub images_dir: PathBuf,
    pub out_dir: PathBuf,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub images: usize,
    pub annotations: usize,
    pub mean_objects_per_image: f64,
    pub mean_background_ratio: f64,
    pub entries: usize,
    pub min_step_budget: Option<u32>,
    pub max_step_budget: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct PlanOutput {
    pub plan: AugmentationPlan,
    pub summary: PlanSummary,
    pub selected: AnnotatedDataset,
    pub plan_path: PathBuf,
}

/// Background-area ratio of every image, from the un-eroded background mask
/// at source resolution. Order follows `ds.images`.
pub fn background_ratios(ds: &AnnotatedDataset) -> Result<Vec<(u64, f64)>, PipelineError> {
    let by_image = ds.annotations_by_image();
    ds.images
        .par_iter()
        .map(|im| {
            let anns = by_image.get(&im.id).map(Vec::as_slice).unwrap_or(&[]);
            let fg = image_foreground(im, anns)?;
            Ok((im.id, area_ratio(&background_mask(&fg))))
        })
        .collect()
}

pub fn run_plan(opts: &PlanOptions) -> Result<PlanOutput, PipelineError> {
    let cfg = &opts.config;
    cfg.validate()?;
    let full = read_dataset(&opts.annotations)?;
    let selected = sample_subset(&full, cfg.subset_fraction, cfg.seed)?;
    for im in &selected.images {
        let path = opts.images_dir.join(&im.file_name);
        if !path.is_file() {
            return Err(PipelineError::MissingImageFile(path));
        }
    }

    let ratios = background_ratios(&selected)?;
    let plan = build_sampling_plan(&ratios, &cfg.policy, cfg.seed)?;

    let n = selected.images.len();
    let summary = PlanSummary {
        images: n,
        annotations: selected.annotations.len(),
        mean_objects_per_image: selected.annotations.len() as f64 / n as f64,
        mean_background_ratio: ratios.iter().map(|(_, r)| r).sum::<f64>() / n as f64,
        entries: plan.len(),
        min_step_budget: plan.entries.iter().map(|e| e.step_budget).min(),
        max_step_budget: plan.entries.iter().map(|e| e.step_budget).max(),
    };

    std::fs::create_dir_all(&opts.out_dir).map_err(|_| PipelineError::UnwritableOutput(opts.out_dir.clone()))?;
    let plan_path = opts.out_dir.join(PLAN_FILE);
    let file = File::create(&plan_path).map_err(|e| PipelineError::io(&plan_path, e))?;
    plan.write_jsonl(BufWriter::new(file))?;

    let summary_path = opts.out_dir.join(PLAN_SUMMARY_FILE);
    let summary_json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, summary_json).map_err(|e| PipelineError::io(&summary_path, e))?;

    let selected_path = opts.out_dir.join(SELECTED_FILE);
    std::fs::write(&selected_path, selected.to_json_bytes()).map_err(|e| PipelineError::io(&selected_path, e))?;

    log::info!(
        "planned {} entries over {} images (mean {:.2} objects/image, mean background {:.3})",
        summary.entries,
        summary.images,
        summary.mean_objects_per_image,
        summary.mean_background_ratio
    );
    Ok(PlanOutput { plan, summary, selected, plan_path })
}
