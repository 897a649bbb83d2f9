use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use bgforge_core::pipeline::{
    self, AugmentOptions, BackendSelection, ConfigOverrides, MergeOptions, PlanOptions, PreviewOptions, RunConfig,
};
use bgforge_core::policy::SamplingMode;
use bgforge_core::remote::RemoteOptions;
use clap::{Args, Parser, Subcommand};

/// Background regeneration for COCO-style detection datasets.
#[derive(Parser, Debug)]
#[command(author, version, about, long_about = None)]
struct Cli {
    /// Log more (-v debug, -vv trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Select images, compute background ratios and step budgets, write plan.jsonl.
    Plan {
        #[command(flatten)]
        inputs: Inputs,
        /// Directory for the plan, summary and selected subset.
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Generate one image per plan entry and record it in manifest.jsonl.
    Augment {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out_dir: PathBuf,
        /// Plan to execute [default: <out-dir>/plan.jsonl].
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Continue an existing manifest, skipping entries already done.
        #[arg(long)]
        resume: bool,
        /// Stop after this many entries.
        #[arg(long)]
        max_entries: Option<usize>,
        /// Per-request timeout for the remote backend, in seconds.
        #[arg(long, default_value_t = 120)]
        remote_timeout: u64,
        /// Retries per request for the remote backend.
        #[arg(long, default_value_t = 3)]
        remote_retries: u32,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Append generated images and cloned annotations to the original dataset.
    Merge {
        /// Original annotations.
        #[arg(long)]
        annotations: PathBuf,
        /// Root the merged file names are made relative to.
        #[arg(long)]
        images_dir: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Merged COCO JSON to write.
        #[arg(long)]
        output: PathBuf,
    },
    /// Render a grid of (original, regenerate-mask overlay, augmented) rows.
    Preview {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Number of sampled rows.
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Tile side in pixels.
        #[arg(long, default_value_t = 256)]
        tile: u32,
    },
    /// Check a dataset against its files (and a manifest); exits 1 on errors.
    Validate {
        #[command(flatten)]
        inputs: Inputs,
        /// Also verify generated files against this manifest's checksums.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args, Debug)]
struct Inputs {
    /// COCO-style annotation JSON.
    #[arg(long)]
    annotations: PathBuf,
    /// Directory image `file_name`s are relative to.
    #[arg(long)]
    images_dir: PathBuf,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML file with run settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fraction of images to select, in (0, 1].
    #[arg(long)]
    subset_fraction: Option<f64>,
    /// Generated copies per image (average, for nonuniform sampling).
    #[arg(long)]
    alpha: Option<u32>,
    #[arg(long, value_parser = parse_sampling)]
    sampling: Option<SamplingMode>,
    /// Full denoising step count T.
    #[arg(long)]
    max_steps: Option<u32>,
    /// How strongly background area shortens the step budget, in (0, 1).
    #[arg(long)]
    freedom: Option<f64>,
    /// Odd erosion kernel side.
    #[arg(long)]
    erosion_kernel: Option<usize>,
    #[arg(long)]
    guidance_scale: Option<f64>,
    /// Prompt sent with every entry.
    #[arg(long)]
    prompt: Option<String>,
    /// Side of the square working canvas.
    #[arg(long)]
    inpaint_size: Option<u32>,
    /// stub:oracle, stub:noise, stub:constant or remote.
    #[arg(long, value_parser = parse_backend)]
    backend: Option<BackendSelection>,
    #[arg(long)]
    remote_url: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_sampling(s: &str) -> Result<SamplingMode, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_backend(s: &str) -> Result<BackendSelection, String> {
    s.parse()
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = self
            .config
            .as_deref()
            .map(ConfigOverrides::from_toml_file)
            .transpose()?;
        let flags = ConfigOverrides {
            subset_fraction: self.subset_fraction,
            alpha: self.alpha,
            sampling: self.sampling,
            max_steps: self.max_steps,
            freedom: self.freedom,
            erosion_kernel: self.erosion_kernel,
            guidance_scale: self.guidance_scale,
            prompt: self.prompt.clone(),
            inpaint_size: self.inpaint_size,
            latent_threshold: None,
            backend: self.backend,
            remote_url: self.remote_url.clone(),
            seed: self.seed,
            workers: self.workers,
        };
        Ok(RunConfig::resolve(file.as_ref(), &flags)?)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Plan { inputs, out_dir, config } => {
            let out = pipeline::run_plan(&PlanOptions {
                annotations: inputs.annotations,
                images_dir: inputs.images_dir,
                out_dir,
                config: config.resolve()?,
            })?;
            let s = &out.summary;
            println!(
                "plan: {} entries over {} images; {:.2} objects/image; mean background ratio {:.4}",
                s.entries, s.images, s.mean_objects_per_image, s.mean_background_ratio
            );
            println!("wrote {}", out.plan_path.display());
        }
        Command::Augment { inputs, out_dir, plan, resume, max_entries, remote_timeout, remote_retries, config } => {
            let config = config.resolve()?;
            let remote = RemoteOptions {
                timeout: Duration::from_secs(remote_timeout),
                retries: remote_retries,
                max_in_flight: config.workers,
                ..RemoteOptions::default()
            };
            let report = pipeline::run_augment(&AugmentOptions {
                annotations: inputs.annotations,
                images_dir: inputs.images_dir,
                out_dir,
                plan,
                config,
                resume,
                max_entries,
                remote,
            })?;
            println!(
                "augment: {} planned, {} already done, {} generated, {} unchanged, {} failed, {} remaining",
                report.planned, report.skipped, report.done, report.noop, report.failed, report.remaining
            );
            println!("manifest {}", report.manifest.display());
        }
        Command::Merge { annotations, images_dir, manifest, output } => {
            let (_, report) = pipeline::run_merge(&MergeOptions { annotations, manifest, images_dir, output: output.clone() })?;
            println!(
                "merge: {} originals + {} generated = {} images, {} annotations ({} failed entries left out)",
                report.original_images,
                report.generated_images,
                report.total_images,
                report.total_annotations,
                report.failed_entries
            );
            println!("wrote {}", output.display());
        }
        Command::Preview { inputs, manifest, output, count, seed, tile } => {
            let report = pipeline::run_preview(&PreviewOptions {
                annotations: inputs.annotations,
                images_dir: inputs.images_dir,
                manifest,
                output: output.clone(),
                count,
                seed,
                tile,
            })?;
            println!(
                "preview: {} rows ({} skipped), {}x{} -> {}",
                report.rows,
                report.skipped,
                report.width,
                report.height,
                output.display()
            );
        }
        Command::Validate { inputs, manifest, json } => {
            let report = pipeline::run_validate(&inputs.annotations, &inputs.images_dir, manifest.as_deref());
            if json {
                println!("{}", serde_json::to_string_pretty(&report).context("serializing report")?);
            } else {
                for finding in &report.findings {
                    println!("{finding}");
                }
                println!(
                    "validate: {} images, {} annotations, {} manifest entries; {} errors, {} warnings",
                    report.images_checked,
                    report.annotations_checked,
                    report.manifest_entries_checked,
                    report.errors().count(),
                    report.warnings().count()
                );
            }
            if !report.is_clean() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
