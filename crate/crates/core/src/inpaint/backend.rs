use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::LatentTensor;

/// Self-description a backend reports; recorded in manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub kind: String,
    /// Image pixels per latent pixel along each axis.
    pub latent_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u32>,
}

impl BackendInfo {
    pub fn descriptor(&self) -> String {
        let mut s = format!("{}/f{}", self.kind, self.latent_factor);
        if let Some(model) = &self.model {
            s.push('/');
            s.push_str(model);
        }
        s
    }
}

/// Arguments of a single noise prediction besides the latent itself.
#[derive(Debug, Clone, Copy)]
pub struct NoiseQuery<'a> {
    pub step: u32,
    pub seed: u64,
    pub prompt: &'a str,
    pub conditional: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct BackendError(pub String);

/// Encoder, decoder and noise predictor used by the local denoising loop.
///
/// Implementations must return predictions with the latent's shape and be
/// deterministic in their inputs.
pub trait DenoiserBackend: Send + Sync {
    fn metadata(&self) -> BackendInfo;

    fn encode(&self, image: &RgbImage) -> Result<LatentTensor, BackendError>;

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError>;

    fn predict_noise(&self, latent: &LatentTensor, query: &NoiseQuery<'_>) -> Result<LatentTensor, BackendError>;

    /// Same as `predict_noise` but writes into `out`, so the loop can reuse
    /// one buffer per estimate across steps.
    fn predict_noise_into(
        &self,
        latent: &LatentTensor,
        query: &NoiseQuery<'_>,
        out: &mut LatentTensor,
    ) -> Result<(), BackendError> {
        *out = self.predict_noise(latent, query)?;
        Ok(())
    }

    /// Whether one instance may serve several jobs at once.
    fn shareable(&self) -> bool {
        true
    }

    /// Called by the loop with the noise it injects into the starting latent.
    fn record_injected_noise(&self, _seed: u64, _step: u32, _noise: &LatentTensor) {}

    /// Called once a job using `seed` is finished.
    fn release(&self, _seed: u64) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StubKind {
    /// Returns exactly the noise the loop injected, which makes the reverse
    /// process reproduce the input.
    Oracle,
    /// Predicts a constant 0.1 everywhere.
    Constant,
    /// Predicts fresh Gaussian noise derived from `(seed, step, conditional)`.
    SeededNoise,
}

impl StubKind {
    pub fn name(self) -> &'static str {
        match self {
            StubKind::Oracle => "oracle",
            StubKind::Constant => "constant",
            StubKind::SeededNoise => "seeded-noise",
        }
    }
}

pub const CONSTANT_STUB_VALUE: f64 = 0.1;

/// Identity-codec stub: the latent is the RGB image scaled to [0, 1].
#[derive(Debug)]
pub struct StubBackend {
    kind: StubKind,
    injected: Mutex<HashMap<u64, Arc<LatentTensor>>>,
}

pub fn make_stub_backend(kind: StubKind) -> StubBackend {
    StubBackend {
        kind,
        injected: Mutex::new(HashMap::new()),
    }
}

impl StubBackend {
    pub fn kind(&self) -> StubKind {
        self.kind
    }
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DenoiserBackend for StubBackend {
    fn metadata(&self) -> BackendInfo {
        BackendInfo {
            kind: self.kind.name().to_string(),
            latent_factor: 1,
            model: None,
            max_steps: None,
        }
    }

    fn encode(&self, image: &RgbImage) -> Result<LatentTensor, BackendError> {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut latent = LatentTensor::zeros(3, h, w);
        for (x, y, px) in image.enumerate_pixels() {
            for c in 0..3 {
                let i = latent.index(c, y as usize, x as usize);
                latent.values_mut()[i] = px[c] as f64 / 255.0;
            }
        }
        Ok(latent)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage, BackendError> {
        if latent.channels() != 3 {
            return Err(BackendError(format!("identity codec needs 3 channels, got {}", latent.channels())));
        }
        let v = latent.values();
        Ok(RgbImage::from_fn(latent.width() as u32, latent.height() as u32, |x, y| {
            let px = |c: usize| {
                let val = v[latent.index(c, y as usize, x as usize)];
                (val.clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        }))
    }

    fn predict_noise(&self, latent: &LatentTensor, query: &NoiseQuery<'_>) -> Result<LatentTensor, BackendError> {
        let (c, h, w) = latent.shape();
        let mut out = LatentTensor::zeros(c, h, w);
        self.predict_noise_into(latent, query, &mut out)?;
        Ok(out)
    }

    fn predict_noise_into(
        &self,
        latent: &LatentTensor,
        query: &NoiseQuery<'_>,
        out: &mut LatentTensor,
    ) -> Result<(), BackendError> {
        out.reshape_for(latent.shape());
        match self.kind {
            StubKind::Constant => out.values_mut().fill(CONSTANT_STUB_VALUE),
            StubKind::SeededNoise => out.fill_gaussian(mix(mix(query.seed, query.step as u64), query.conditional as u64)),
            StubKind::Oracle => {
                let noise = self
                    .injected
                    .lock()
                    .expect("oracle noise table poisoned")
                    .get(&query.seed)
                    .cloned()
                    .ok_or_else(|| BackendError(format!("no injected noise recorded for seed {}", query.seed)))?;
                if noise.shape() != latent.shape() {
                    return Err(BackendError("recorded noise has a different shape".into()));
                }
                out.values_mut().copy_from_slice(noise.values());
            }
        }
        Ok(())
    }

    fn record_injected_noise(&self, seed: u64, _step: u32, noise: &LatentTensor) {
        if self.kind == StubKind::Oracle {
            self.injected
                .lock()
                .expect("oracle noise table poisoned")
                .insert(seed, Arc::new(noise.clone()));
        }
    }

    fn release(&self, seed: u64) {
        if self.kind == StubKind::Oracle {
            self.injected.lock().expect("oracle noise table poisoned").remove(&seed);
        }
    }
}
