//! Masked denoising loop over an abstract encoder/decoder/denoiser.
//!
//! The masked region starts from the original latent noised to the step
//! budget and is denoised with classifier-free guidance. Everything outside
//! the mask is pinned to the forward-noised original at every step, so it
//! lands exactly on the original latent at step 0.

mod backend;
mod schedule;
mod tensor;

use image::RgbImage;
use thiserror::Error;

use crate::mask::BinaryMask;

pub use backend::{
    make_stub_backend, BackendError, BackendInfo, DenoiserBackend, NoiseQuery, StubBackend, StubKind,
    CONSTANT_STUB_VALUE,
};
pub use schedule::NoiseSchedule;
pub use tensor::LatentTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InpaintError {
    #[error("tensor shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("non-finite value in noise estimate or guidance scale")]
    NonFinite,
    #[error("backend failure: {0}")]
    BackendFailure(String),
    #[error("latent became non-finite at step {step}")]
    NonFiniteLatent { step: u32 },
    #[error("latent mask is {mask:?} but latent is {latent:?}")]
    MaskShapeMismatch { mask: (usize, usize), latent: (usize, usize) },
    #[error("step budget {steps} outside 1..={max}")]
    InvalidSteps { steps: u32, max: u32 },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
}

impl From<BackendError> for InpaintError {
    fn from(e: BackendError) -> Self {
        InpaintError::BackendFailure(e.0)
    }
}

#[inline]
fn guide(cond: f64, uncond: f64, w: f64) -> f64 {
    w * cond + (1.0 - w) * uncond
}

/// Classifier-free guidance: `w * cond + (1 - w) * uncond`.
pub fn guided_noise(cond: &LatentTensor, uncond: &LatentTensor, w: f64) -> Result<LatentTensor, InpaintError> {
    if cond.shape() != uncond.shape() {
        return Err(InpaintError::ShapeMismatch(cond.shape(), uncond.shape()));
    }
    if !w.is_finite() || !cond.is_finite() || !uncond.is_finite() {
        return Err(InpaintError::NonFinite);
    }
    let values = cond
        .values()
        .iter()
        .zip(uncond.values())
        .map(|(&c, &u)| guide(c, u, w))
        .collect();
    let (ch, h, wd) = cond.shape();
    Ok(LatentTensor::from_vec(ch, h, wd, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintParams {
    pub prompt: String,
    /// Starting step `T̂`; larger budgets move further from the original.
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
}

struct Release<'a> {
    backend: &'a dyn DenoiserBackend,
    seed: u64,
}

impl Drop for Release<'_> {
    fn drop(&mut self) {
        self.backend.release(self.seed);
    }
}

/// Regenerates the pixels selected by `latent_mask` (1 = regenerate).
///
/// `latent_mask` must already be at latent resolution. An empty mask
/// returns the input untouched without calling the backend.
pub fn inpaint(
    backend: &dyn DenoiserBackend,
    image: &RgbImage,
    latent_mask: &BinaryMask,
    params: &InpaintParams,
    schedule: &NoiseSchedule,
) -> Result<RgbImage, InpaintError> {
    if params.steps == 0 || params.steps > schedule.max_steps() {
        return Err(InpaintError::InvalidSteps { steps: params.steps, max: schedule.max_steps() });
    }
    if !latent_mask.any() {
        return Ok(image.clone());
    }
    let original = backend.encode(image)?;
    let (channels, lh, lw) = original.shape();
    if latent_mask.dims() != (lh, lw) {
        return Err(InpaintError::MaskShapeMismatch { mask: latent_mask.dims(), latent: (lh, lw) });
    }
    if !original.is_finite() {
        return Err(InpaintError::NonFiniteLatent { step: params.steps });
    }

    let noise = LatentTensor::gaussian(channels, lh, lw, params.seed);
    backend.record_injected_noise(params.seed, params.steps, &noise);
    let _release = Release { backend, seed: params.seed };

    let plane = lh * lw;
    let selected: Vec<bool> = (0..plane).map(|p| latent_mask.get(p / lw, p % lw)).collect();

    let start_level = schedule.level(params.steps);
    let mut latent = original.clone();
    for (x, &n) in latent.values_mut().iter_mut().zip(noise.values()) {
        *x += start_level * n;
    }

    let w = params.guidance_scale;
    if !w.is_finite() {
        return Err(InpaintError::NonFiniteLatent { step: params.steps });
    }
    let mut cond = LatentTensor::zeros(channels, lh, lw);
    let mut uncond = LatentTensor::zeros(channels, lh, lw);
    for step in (1..=params.steps).rev() {
        let query = |conditional| NoiseQuery { step, seed: params.seed, prompt: &params.prompt, conditional };
        backend.predict_noise_into(&latent, &query(true), &mut cond)?;
        backend.predict_noise_into(&latent, &query(false), &mut uncond)?;
        for est in [&cond, &uncond] {
            if est.shape() != latent.shape() {
                return Err(InpaintError::BackendFailure(format!(
                    "noise estimate shape {:?} does not match latent {:?}",
                    est.shape(),
                    latent.shape()
                )));
            }
        }

        let delta = schedule.level(step) - schedule.level(step - 1);
        let prev_level = schedule.level(step - 1);
        let (c, u, o, n) = (cond.values(), uncond.values(), original.values(), noise.values());
        let values = latent.values_mut();
        for ch in 0..channels {
            let base = ch * plane;
            for (p, &sel) in selected.iter().enumerate() {
                let i = base + p;
                if sel {
                    let eps = guide(c[i], u[i], w);
                    let next = values[i] - delta * eps;
                    if !next.is_finite() {
                        return Err(InpaintError::NonFiniteLatent { step });
                    }
                    values[i] = next;
                } else {
                    values[i] = o[i] + prev_level * n[i];
                }
            }
        }
    }

    let out = backend.decode(&latent)?;
    if out.dimensions() != image.dimensions() {
        return Err(InpaintError::BackendFailure(format!(
            "decoded image is {:?}, expected {:?}",
            out.dimensions(),
            image.dimensions()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> LatentTensor {
        LatentTensor::from_vec(1, 1, 1, vec![v])
    }

    #[test]
    fn guidance_collapse_and_scalar_example() {
        let c = LatentTensor::gaussian(2, 3, 3, 1);
        let u = LatentTensor::gaussian(2, 3, 3, 2);
        assert_eq!(guided_noise(&c, &u, 1.0).unwrap(), c);
        assert_eq!(guided_noise(&c, &u, 0.0).unwrap(), u);
        assert_eq!(guided_noise(&scalar(1.0), &scalar(0.5), 7.5).unwrap(), scalar(4.25));
    }

    #[test]
    fn guidance_errors() {
        assert!(matches!(
            guided_noise(&LatentTensor::zeros(1, 2, 2), &LatentTensor::zeros(1, 2, 3), 1.0),
            Err(InpaintError::ShapeMismatch(..))
        ));
        assert_eq!(guided_noise(&scalar(f64::NAN), &scalar(0.0), 1.0), Err(InpaintError::NonFinite));
        assert_eq!(guided_noise(&scalar(1.0), &scalar(0.0), f64::INFINITY), Err(InpaintError::NonFinite));
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 17 % 256) as u8, (y * 29 % 256) as u8, ((x + y) * 7 % 256) as u8]))
    }

    fn params(steps: u32, seed: u64) -> InpaintParams {
        InpaintParams { prompt: "Generate a clean background".into(), steps, guidance_scale: 7.5, seed }
    }

    #[test]
    fn empty_mask_short_circuits() {
        let b = make_stub_backend(StubKind::Constant);
        let img = gradient(8, 6);
        let out = inpaint(&b, &img, &BinaryMask::zeros(6, 8), &params(30, 1), &NoiseSchedule::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn oracle_reconstructs_input() {
        let b = make_stub_backend(StubKind::Oracle);
        let img = gradient(8, 6);
        let out = inpaint(&b, &img, &BinaryMask::ones(6, 8), &params(50, 3), &NoiseSchedule::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn constant_denoiser_changes_only_masked_half() {
        let b = make_stub_backend(StubKind::Constant);
        let img = RgbImage::from_pixel(8, 4, image::Rgb([128, 128, 128]));
        let mask = BinaryMask::from_fn(4, 8, |_, c| c >= 4);
        let out = inpaint(&b, &img, &mask, &params(20, 5), &NoiseSchedule::default()).unwrap();
        for (x, y, px) in out.enumerate_pixels() {
            if x < 4 {
                assert_eq!(px, img.get_pixel(x, y));
            }
        }
        assert!((4..8).any(|x| out.get_pixel(x, 0) != img.get_pixel(x, 0)));
    }

    #[test]
    fn rejects_bad_inputs() {
        let b = make_stub_backend(StubKind::Constant);
        let img = gradient(8, 6);
        let s = NoiseSchedule::default();
        assert!(matches!(
            inpaint(&b, &img, &BinaryMask::ones(6, 8), &params(0, 1), &s),
            Err(InpaintError::InvalidSteps { .. })
        ));
        assert!(matches!(
            inpaint(&b, &img, &BinaryMask::ones(6, 8), &params(51, 1), &s),
            Err(InpaintError::InvalidSteps { .. })
        ));
        assert!(matches!(
            inpaint(&b, &img, &BinaryMask::ones(3, 4), &params(5, 1), &s),
            Err(InpaintError::MaskShapeMismatch { .. })
        ));
    }

    #[test]
    fn non_finite_guidance_reports_step() {
        let b = make_stub_backend(StubKind::Constant);
        let img = gradient(4, 4);
        let p = InpaintParams { guidance_scale: f64::NAN, ..params(10, 1) };
        assert_eq!(
            inpaint(&b, &img, &BinaryMask::ones(4, 4), &p, &NoiseSchedule::default()),
            Err(InpaintError::NonFiniteLatent { step: 10 })
        );
    }
}
