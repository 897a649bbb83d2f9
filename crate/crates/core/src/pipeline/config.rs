use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::policy::{PolicyConfig, SamplingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSelection {
    #[serde(rename = "stub:oracle")]
    StubOracle,
    #[serde(rename = "stub:noise")]
    StubNoise,
    #[serde(rename = "stub:constant")]
    StubConstant,
    #[serde(rename = "remote")]
    Remote,
}

impl std::str::FromStr for BackendSelection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stub:oracle" => Ok(Self::StubOracle),
            "stub:noise" => Ok(Self::StubNoise),
            "stub:constant" => Ok(Self::StubConstant),
            "remote" => Ok(Self::Remote),
            other => Err(format!("unknown backend {other:?} (expected stub:oracle, stub:noise, stub:constant or remote)")),
        }
    }
}

/// Fully resolved settings for a run; embedded in every manifest header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub policy: PolicyConfig,
    pub subset_fraction: f64,
    /// Side of the square working canvas images are letterboxed into.
    pub inpaint_size: u32,
    /// Block coverage needed for a latent pixel to be regenerated.
    pub latent_threshold: f64,
    pub backend: BackendSelection,
    pub remote_url: Option<String>,
    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            subset_fraction: 1.0,
            inpaint_size: 512,
            latent_threshold: 0.5,
            backend: BackendSelection::StubOracle,
            remote_url: None,
            seed: 0,
            workers: 1,
        }
    }
}

/// Partial settings, as read from a TOML file or collected from flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    pub subset_fraction: Option<f64>,
    pub alpha: Option<u32>,
    pub sampling: Option<SamplingMode>,
    pub max_steps: Option<u32>,
    pub freedom: Option<f64>,
    pub erosion_kernel: Option<usize>,
    pub guidance_scale: Option<f64>,
    pub prompt: Option<String>,
    pub inpaint_size: Option<u32>,
    pub latent_threshold: Option<f64>,
    pub backend: Option<BackendSelection>,
    pub remote_url: Option<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl ConfigOverrides {
    pub fn from_toml_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = &self.$src {
                    cfg.$($dst)+ = v.clone();
                }
            };
        }
        set!(subset_fraction => subset_fraction);
        set!(alpha => policy.alpha);
        set!(sampling => policy.sampling_mode);
        set!(max_steps => policy.max_steps);
        set!(freedom => policy.freedom);
        set!(erosion_kernel => policy.erosion_kernel);
        set!(guidance_scale => policy.guidance_scale);
        set!(prompt => policy.prompt_template);
        set!(inpaint_size => inpaint_size);
        set!(latent_threshold => latent_threshold);
        set!(backend => backend);
        set!(seed => seed);
        set!(workers => workers);
        if self.remote_url.is_some() {
            cfg.remote_url = self.remote_url.clone();
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file, then command-line flags.
    pub fn resolve(file: Option<&ConfigOverrides>, flags: &ConfigOverrides) -> Result<Self, PipelineError> {
        let mut cfg = RunConfig::default();
        if let Some(file) = file {
            file.apply(&mut cfg);
        }
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.policy.validate()?;
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(PipelineError::Config(format!("subset_fraction must lie in (0, 1], got {}", self.subset_fraction)));
        }
        if self.inpaint_size == 0 {
            return Err(PipelineError::Config("inpaint_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.latent_threshold) {
            return Err(PipelineError::Config("latent_threshold must lie in [0, 1]".into()));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        if self.backend == BackendSelection::Remote && self.remote_url.is_none() {
            return Err(PipelineError::Config("the remote backend needs --remote-url".into()));
        }
        Ok(())
    }
}
