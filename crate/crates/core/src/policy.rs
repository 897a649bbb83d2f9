//! Per-image augmentation decisions: prompt, adaptive step budget and how
//! many copies each source image receives.

use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotation::ImageRecord;

pub const DEFAULT_PROMPT: &str = "Generate a clean background";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{name} out of range: {value}")]
    DomainError { name: &'static str, value: f64 },
    #[error("non-uniform sampling needs at least one image with background")]
    AllZeroRatios,
    #[error("plan line {line}: {message}")]
    PlanFormat { line: usize, message: String },
    #[error("plan I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    #[default]
    Uniform,
    Nonuniform,
}

impl std::str::FromStr for SamplingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "nonuniform" | "non-uniform" => Ok(Self::Nonuniform),
            other => Err(format!("unknown sampling mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    /// Maximum diffusion step `T`.
    pub max_steps: u32,
    /// Augmentation freedom `D`, strictly inside (0, 1). Not a published
    /// value; 0.5 sits mid-range.
    pub freedom: f64,
    /// Copies per image (uniform) or average copies per image (non-uniform).
    pub alpha: u32,
    pub sampling_mode: SamplingMode,
    pub prompt_template: String,
    pub guidance_scale: f64,
    pub erosion_kernel: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            max_steps: 50,
            freedom: 0.5,
            alpha: 1,
            sampling_mode: SamplingMode::Uniform,
            prompt_template: DEFAULT_PROMPT.to_string(),
            guidance_scale: 7.5,
            erosion_kernel: 7,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_steps == 0 {
            return Err(PolicyError::DomainError { name: "max_steps", value: 0.0 });
        }
        if !(self.freedom > 0.0 && self.freedom < 1.0) {
            return Err(PolicyError::DomainError { name: "freedom", value: self.freedom });
        }
        if !(self.guidance_scale.is_finite() && self.guidance_scale >= 0.0) {
            return Err(PolicyError::DomainError { name: "guidance_scale", value: self.guidance_scale });
        }
        if self.erosion_kernel % 2 == 0 {
            return Err(PolicyError::DomainError { name: "erosion_kernel", value: self.erosion_kernel as f64 });
        }
        Ok(())
    }
}

/// Step budget `T * (1 - D * ratio)`, rounded half-up and clamped to `[1, T]`.
pub fn adaptive_steps(max_steps: u32, freedom: f64, ratio: f64) -> Result<u32, PolicyError> {
    if max_steps == 0 {
        return Err(PolicyError::DomainError { name: "max_steps", value: 0.0 });
    }
    if !(freedom > 0.0 && freedom < 1.0) {
        return Err(PolicyError::DomainError { name: "freedom", value: freedom });
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(PolicyError::DomainError { name: "ratio", value: ratio });
    }
    let raw = max_steps as f64 * (1.0 - freedom * ratio);
    Ok(((raw + 0.5).floor() as u32).clamp(1, max_steps))
}

/// The prompt for an image is the configured template with control
/// characters removed. Captions are never used.
pub fn prompt_for(_image: &ImageRecord, cfg: &PolicyConfig) -> String {
    sanitize_prompt(&cfg.prompt_template)
}

pub fn sanitize_prompt(template: &str) -> String {
    let clean: String = template.chars().filter(|c| !c.is_control()).collect();
    if clean.len() != template.len() {
        log::warn!("stripped control characters from prompt template {template:?}");
    }
    clean
}

/// Seed for one generated copy; depends only on its inputs, never on
/// scheduling. The key is injective for ids and copy indices below 2^32 and
/// the mixer is a bijection, so such seeds never collide.
pub fn entry_seed(global_seed: u64, image_id: u64, copy_index: u32) -> u64 {
    let key = image_id.rotate_left(32) ^ copy_index as u64;
    splitmix64(key ^ splitmix64(global_seed))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub source_image_id: u64,
    pub copy_index: u32,
    pub seed: u64,
    pub prompt: String,
    pub step_budget: u32,
    pub background_ratio: f64,
}

impl PlanEntry {
    pub fn key(&self) -> (u64, u32) {
        (self.source_image_id, self.copy_index)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentationPlan {
    pub entries: Vec<PlanEntry>,
}

impl AugmentationPlan {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copies assigned to each source image, in first-appearance order.
    pub fn copies_per_image(&self) -> Vec<(u64, u32)> {
        let mut out: Vec<(u64, u32)> = Vec::new();
        for e in &self.entries {
            match out.last_mut() {
                Some((id, n)) if *id == e.source_image_id => *n += 1,
                _ => out.push((e.source_image_id, 1)),
            }
        }
        out
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), PolicyError> {
        for e in &self.entries {
            let line = serde_json::to_string(e).map_err(|e| PolicyError::Io(e.to_string()))?;
            writeln!(out, "{line}").map_err(|e| PolicyError::Io(e.to_string()))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, PolicyError> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| PolicyError::Io(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: PlanEntry = serde_json::from_str(&line).map_err(|e| PolicyError::PlanFormat {
                line: i + 1,
                message: e.to_string(),
            })?;
            if entry.step_budget == 0 {
                return Err(PolicyError::PlanFormat { line: i + 1, message: "step_budget must be >= 1".into() });
            }
            entries.push(entry);
        }
        Ok(Self { entries })
    }
}

/// Assigns copies to images and fills in seed, prompt and step budget.
///
/// Uniform mode gives every image exactly `alpha` copies. Non-uniform mode
/// draws `alpha * N` copies with replacement, each image weighted by its
/// background ratio, so images dominated by background (small objects) are
/// favoured. Entries are emitted grouped by image in input order with copy
/// indices `0..count`, independent of draw order.
pub fn build_sampling_plan(
    images: &[(u64, f64)],
    cfg: &PolicyConfig,
    global_seed: u64,
) -> Result<AugmentationPlan, PolicyError> {
    cfg.validate()?;
    for &(_, ratio) in images {
        if !(0.0..=1.0).contains(&ratio) {
            return Err(PolicyError::DomainError { name: "ratio", value: ratio });
        }
    }
    if cfg.alpha == 0 || images.is_empty() {
        return Ok(AugmentationPlan::default());
    }
    let counts: Vec<u32> = match cfg.sampling_mode {
        SamplingMode::Uniform => vec![cfg.alpha; images.len()],
        SamplingMode::Nonuniform => {
            let dist = WeightedIndex::new(images.iter().map(|&(_, r)| r))
                .map_err(|_| PolicyError::AllZeroRatios)?;
            let mut rng = ChaCha8Rng::seed_from_u64(global_seed);
            let mut counts = vec![0u32; images.len()];
            for _ in 0..cfg.alpha as usize * images.len() {
                counts[dist.sample(&mut rng)] += 1;
            }
            counts
        }
    };
    let prompt = sanitize_prompt(&cfg.prompt_template);
    let mut entries = Vec::with_capacity(counts.iter().map(|&c| c as usize).sum());
    for (&(image_id, ratio), &count) in images.iter().zip(&counts) {
        let step_budget = adaptive_steps(cfg.max_steps, cfg.freedom, ratio)?;
        for copy_index in 0..count {
            entries.push(PlanEntry {
                source_image_id: image_id,
                copy_index,
                seed: entry_seed(global_seed, image_id, copy_index),
                prompt: prompt.clone(),
                step_budget,
                background_ratio: ratio,
            });
        }
    }
    Ok(AugmentationPlan { entries })
}
