use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use image::RgbImage;

use super::imaging::{self, Letterbox};
use super::manifest::{EntryStatus, ManifestEntry, ManifestHeader, ManifestRecord, ManifestState, ManifestWriter};
use super::{now_ms, read_dataset, BackendSelection, PipelineError, RunConfig, IMAGES_SUBDIR, MANIFEST_FILE, PLAN_FILE};
use crate::annotation::{image_foreground, AnnotatedDataset, AnnotationRecord, ImageRecord};
use crate::inpaint::{inpaint, make_stub_backend, DenoiserBackend, InpaintParams, NoiseSchedule, StubBackend, StubKind};
use crate::mask::{self, background_mask};
use crate::policy::{AugmentationPlan, PlanEntry};
use crate::remote::{InpaintJob, RemoteClient, RemoteOptions};

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub annotations: PathBuf,
    pub images_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Defaults to `<out_dir>/plan.jsonl`.
    pub plan: Option<PathBuf>,
    pub config: RunConfig,
    /// Continue an existing manifest instead of refusing to touch it.
    pub resume: bool,
    /// Stop after this many entries have been processed in this run.
    pub max_entries: Option<usize>,
    pub remote: RemoteOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentReport {
    pub planned: usize,
    /// Already done in the manifest before this run.
    pub skipped: usize,
    pub done: usize,
    pub noop: usize,
    pub failed: usize,
    /// Entries still without a done outcome when this run ended.
    pub remaining: usize,
    pub manifest: PathBuf,
}

enum Generator {
    Local { backend: StubBackend, schedule: NoiseSchedule, factor: usize },
    Remote(RemoteClient),
}

impl Generator {
    fn build(cfg: &RunConfig, remote: &RemoteOptions) -> Result<(Self, String), PipelineError> {
        let kind = match cfg.backend {
            BackendSelection::StubOracle => StubKind::Oracle,
            BackendSelection::StubNoise => StubKind::SeededNoise,
            BackendSelection::StubConstant => StubKind::Constant,
            BackendSelection::Remote => {
                let url = cfg.remote_url.as_deref().ok_or_else(|| PipelineError::Config("remote backend needs a URL".into()))?;
                let client = RemoteClient::new(url, remote.clone());
                let info = client.healthcheck()?;
                log::info!("remote backend {} at {url}", info.descriptor());
                return Ok((Generator::Remote(client), info.descriptor()));
            }
        };
        let backend = make_stub_backend(kind);
        let info = backend.metadata();
        let schedule = NoiseSchedule::linear(cfg.policy.max_steps, 1.0)?;
        Ok((Generator::Local { backend, schedule, factor: info.latent_factor }, info.descriptor()))
    }

    /// Regenerates the canvas where `regen` (canvas resolution) is set.
    fn generate(&self, canvas: &RgbImage, regen: &mask::BinaryMask, entry: &PlanEntry, cfg: &RunConfig) -> Result<RgbImage, PipelineError> {
        match self {
            Generator::Local { backend, schedule, factor } => {
                let latent_mask = mask::resize_to_latent(regen, *factor, cfg.latent_threshold)?;
                let params = InpaintParams {
                    prompt: entry.prompt.clone(),
                    steps: entry.step_budget,
                    guidance_scale: cfg.policy.guidance_scale,
                    seed: entry.seed,
                };
                Ok(inpaint(backend, canvas, &latent_mask, &params, schedule)?)
            }
            Generator::Remote(client) => {
                let job = InpaintJob::new(canvas, regen, &entry.prompt, entry.step_budget, cfg.policy.guidance_scale, entry.seed)?;
                let result = client.submit(&job)?;
                let img = image::load_from_memory(&result.image).map_err(|e| PipelineError::Image(e.to_string()))?;
                Ok(img.to_rgb8())
            }
        }
    }
}

struct Context<'a> {
    images: HashMap<u64, &'a ImageRecord>,
    annotations: HashMap<u64, Vec<&'a AnnotationRecord>>,
    images_dir: &'a Path,
    out_dir: &'a Path,
    cfg: &'a RunConfig,
    generator: Generator,
    backend_name: String,
}

pub fn output_file_name(entry: &PlanEntry) -> String {
    format!("{IMAGES_SUBDIR}/{:012}_{:03}.png", entry.source_image_id, entry.copy_index)
}

fn load_plan(path: &Path) -> Result<AugmentationPlan, PipelineError> {
    let file = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(AugmentationPlan::read_jsonl(BufReader::new(file))?)
}

pub fn run_augment(opts: &AugmentOptions) -> Result<AugmentReport, PipelineError> {
    let cfg = &opts.config;
    cfg.validate()?;
    let plan_path = opts.plan.clone().unwrap_or_else(|| opts.out_dir.join(PLAN_FILE));
    let plan = load_plan(&plan_path)?;
    let ds: AnnotatedDataset = read_dataset(&opts.annotations)?;

    let images_out = opts.out_dir.join(IMAGES_SUBDIR);
    std::fs::create_dir_all(&images_out).map_err(|_| PipelineError::UnwritableOutput(images_out.clone()))?;
    let probe = images_out.join(".write_probe");
    std::fs::write(&probe, b"").map_err(|_| PipelineError::UnwritableOutput(images_out.clone()))?;
    let _ = std::fs::remove_file(&probe);

    let manifest_path = opts.out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() && !opts.resume {
        return Err(PipelineError::Config(format!(
            "{} already exists; pass --resume to continue it",
            manifest_path.display()
        )));
    }
    let state = ManifestState::load_or_default(&manifest_path)?;
    let pending: Vec<&PlanEntry> = plan
        .entries
        .iter()
        .filter(|e| !state.entries.get(&e.key()).is_some_and(ManifestEntry::is_done))
        .collect();
    let mut report = AugmentReport {
        planned: plan.len(),
        skipped: plan.len() - pending.len(),
        manifest: manifest_path.clone(),
        ..Default::default()
    };
    let limit = opts.max_entries.map_or(pending.len(), |m| m.min(pending.len()));

    let (generator, backend_name) = Generator::build(cfg, &opts.remote)?;
    let ctx = Context {
        images: ds.images.iter().map(|im| (im.id, im)).collect(),
        annotations: ds.annotations_by_image(),
        images_dir: &opts.images_dir,
        out_dir: &opts.out_dir,
        cfg,
        generator,
        backend_name,
    };

    let mut writer = ManifestWriter::append(&manifest_path)?;
    writer.write(&ManifestRecord::Header(ManifestHeader {
        started_at_ms: now_ms(),
        plan_entries: plan.len(),
        config: cfg.clone(),
    }))?;
    log::info!(
        "augmenting {limit} of {} pending entries ({} already done) with {} workers",
        pending.len(),
        report.skipped,
        cfg.workers
    );

    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<ManifestEntry>();
    let write_result = std::thread::scope(|s| {
        for _ in 0..cfg.workers {
            let tx = tx.clone();
            let (ctx, pending, next, stop) = (&ctx, &pending, &next, &stop);
            s.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= limit {
                    break;
                }
                if tx.send(process_entry(ctx, pending[i])).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for entry in rx {
            match &entry.status {
                EntryStatus::Done if entry.noop => report.noop += 1,
                EntryStatus::Done => report.done += 1,
                EntryStatus::Failed(msg) => {
                    log::warn!("entry ({}, {}) failed: {msg}", entry.source_image_id, entry.copy_index);
                    report.failed += 1;
                }
            }
            if let Err(e) = writer.write(&ManifestRecord::Entry(entry)) {
                stop.store(true, Ordering::Relaxed);
                return Err(e);
            }
        }
        Ok(())
    });
    write_result?;

    report.remaining = pending.len() - report.done - report.noop;
    log::info!(
        "done {}, unchanged {}, failed {}, remaining {}",
        report.done,
        report.noop,
        report.failed,
        report.remaining
    );
    Ok(report)
}

fn process_entry(ctx: &Context<'_>, entry: &PlanEntry) -> ManifestEntry {
    let started = Instant::now();
    let output_file = output_file_name(entry);
    let outcome = generate_entry(ctx, entry).and_then(|(png, noop)| {
        imaging::write_atomic(&ctx.out_dir.join(&output_file), &png)?;
        Ok((imaging::sha256_hex(&png), noop))
    });
    let (checksum, status, noop) = match outcome {
        Ok((sum, noop)) => (Some(sum), EntryStatus::Done, noop),
        Err(e) => (None, EntryStatus::Failed(e.to_string()), false),
    };
    ManifestEntry {
        source_image_id: entry.source_image_id,
        copy_index: entry.copy_index,
        output_file,
        prompt: entry.prompt.clone(),
        step_budget: entry.step_budget,
        freedom: ctx.cfg.policy.freedom,
        guidance_scale: ctx.cfg.policy.guidance_scale,
        erosion_kernel: ctx.cfg.policy.erosion_kernel,
        seed: entry.seed,
        background_ratio: entry.background_ratio,
        backend: ctx.backend_name.clone(),
        checksum,
        status,
        noop,
        finished_at_ms: now_ms(),
        wall_time_ms: started.elapsed().as_millis() as u64,
    }
}

/// Produces the PNG bytes for one entry and whether it was left unchanged.
fn generate_entry(ctx: &Context<'_>, entry: &PlanEntry) -> Result<(Vec<u8>, bool), PipelineError> {
    let record = ctx.images.get(&entry.source_image_id).ok_or_else(|| {
        PipelineError::Config(format!("plan references unknown image {}", entry.source_image_id))
    })?;
    let path = ctx.images_dir.join(&record.file_name);
    if !path.is_file() {
        return Err(PipelineError::MissingImageFile(path));
    }
    let original = imaging::load_rgb(&path)?;
    if original.dimensions() != (record.width, record.height) {
        return Err(PipelineError::Image(format!(
            "{} is {:?}, annotations say {}x{}",
            path.display(),
            original.dimensions(),
            record.width,
            record.height
        )));
    }
    let anns = ctx.annotations.get(&record.id).map(Vec::as_slice).unwrap_or(&[]);
    let background = background_mask(&image_foreground(record, anns)?);
    let letterbox = Letterbox::new(record.width, record.height, ctx.cfg.inpaint_size);
    let (canvas_regen, source_regen) = imaging::regeneration_masks(&background, &letterbox, ctx.cfg.policy.erosion_kernel)?;

    if !source_regen.any() {
        log::debug!("image {}: nothing left to regenerate after erosion", record.id);
        return Ok((imaging::encode_png(&original)?, true));
    }
    let canvas = letterbox.to_canvas(&original);
    let generated = ctx.generator.generate(&canvas, &canvas_regen, entry, ctx.cfg)?;
    if generated.dimensions() != canvas.dimensions() {
        return Err(PipelineError::Image(format!(
            "backend returned {:?}, expected {:?}",
            generated.dimensions(),
            canvas.dimensions()
        )));
    }
    let restored = letterbox.from_canvas(&generated);
    let out = imaging::composite(&original, &restored, &source_regen);
    Ok((imaging::encode_png(&out)?, false))
}
