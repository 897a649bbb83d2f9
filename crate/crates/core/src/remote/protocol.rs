//! Wire types for `POST /v1/inpaint` and `GET /v1/health`.
//!
//! Requests are serialized with keys in alphabetical order so identical jobs
//! always produce identical bytes.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{GrayImage, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RemoteError;
use crate::inpaint::BackendInfo;
use crate::mask::BinaryMask;

/// One inpainting request. `mask` is 8-bit gray: 255 regenerates the pixel,
/// 0 preserves it.
#[derive(Debug, Clone, PartialEq)]
pub struct InpaintJob {
    pub image: Vec<u8>,
    pub mask: Vec<u8>,
    pub prompt: String,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintResult {
    pub image: Vec<u8>,
    pub backend_info: String,
    pub wall_time_ms: u64,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    guidance_scale: f64,
    height: u32,
    image: String,
    mask: String,
    prompt: &'a str,
    seed: u64,
    steps: u32,
    width: u32,
}

#[derive(Serialize, Deserialize)]
pub(super) struct WireResponse {
    pub backend_info: String,
    pub image: String,
    pub wall_time_ms: u64,
}

#[derive(Serialize, Deserialize)]
pub(super) struct WireHealth {
    pub backend: String,
    pub latent_factor: usize,
    pub max_steps: u32,
    pub model: String,
}

pub fn encode_png_rgb(image: &RgbImage) -> Result<Vec<u8>, RemoteError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| RemoteError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn encode_png_gray(image: &GrayImage) -> Result<Vec<u8>, RemoteError> {
    let mut buf = Cursor::new(Vec::new());
    image
        .write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| RemoteError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn png_dimensions(bytes: &[u8]) -> Result<(u32, u32), RemoteError> {
    image::ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png)
        .into_dimensions()
        .map_err(|e| RemoteError::Image(e.to_string()))
}

impl InpaintJob {
    /// Packages an image and its regenerate mask (1 = regenerate).
    pub fn new(
        image: &RgbImage,
        mask: &BinaryMask,
        prompt: &str,
        steps: u32,
        guidance_scale: f64,
        seed: u64,
    ) -> Result<Self, RemoteError> {
        let job = Self {
            image: encode_png_rgb(image)?,
            mask: encode_png_gray(&mask.to_gray_image())?,
            prompt: prompt.to_string(),
            steps,
            guidance_scale,
            seed,
            width: image.width(),
            height: image.height(),
        };
        job.validate()?;
        Ok(job)
    }

    pub fn validate(&self) -> Result<(), RemoteError> {
        if self.steps == 0 {
            return Err(RemoteError::InvalidJob("steps must be >= 1".into()));
        }
        if !self.guidance_scale.is_finite() {
            return Err(RemoteError::InvalidJob("guidance_scale must be finite".into()));
        }
        let expected = (self.width, self.height);
        for (name, bytes) in [("image", &self.image), ("mask", &self.mask)] {
            let dims = png_dimensions(bytes)?;
            if dims != expected {
                return Err(RemoteError::InvalidJob(format!(
                    "{name} is {}x{}, job declares {}x{}",
                    dims.0, dims.1, expected.0, expected.1
                )));
            }
        }
        Ok(())
    }

    /// Canonical JSON request body.
    pub fn to_request_body(&self) -> Vec<u8> {
        let wire = WireRequest {
            guidance_scale: self.guidance_scale,
            height: self.height,
            image: B64.encode(&self.image),
            mask: B64.encode(&self.mask),
            prompt: &self.prompt,
            seed: self.seed,
            steps: self.steps,
            width: self.width,
        };
        serde_json::to_vec(&wire).expect("request serializes")
    }

    /// Hex SHA-256 of the canonical body; the seed is part of the body.
    pub fn job_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_request_body()))
    }
}

pub(super) fn decode_response(status: u16, body: &[u8]) -> Result<InpaintResult, RemoteError> {
    let wire: WireResponse = serde_json::from_slice(body).map_err(|e| RemoteError::ProtocolError {
        status,
        body: format!("invalid response JSON: {e}"),
    })?;
    let image = B64.decode(wire.image.as_bytes()).map_err(|e| RemoteError::ProtocolError {
        status,
        body: format!("invalid base64 image: {e}"),
    })?;
    Ok(InpaintResult { image, backend_info: wire.backend_info, wall_time_ms: wire.wall_time_ms })
}

pub(super) fn decode_health(status: u16, body: &[u8]) -> Result<BackendInfo, RemoteError> {
    let wire: WireHealth = serde_json::from_slice(body).map_err(|e| RemoteError::ProtocolError {
        status,
        body: format!("invalid health JSON: {e}"),
    })?;
    Ok(BackendInfo {
        kind: wire.backend,
        latent_factor: wire.latent_factor,
        model: Some(wire.model),
        max_steps: Some(wire.max_steps),
    })
}

/// Encodes a response the way a conforming server would; used by fakes and
/// by the mirror checks in tests.
pub fn encode_response(image_png: &[u8], backend_info: &str, wall_time_ms: u64) -> Vec<u8> {
    serde_json::to_vec(&WireResponse {
        backend_info: backend_info.to_string(),
        image: B64.encode(image_png),
        wall_time_ms,
    })
    .expect("response serializes")
}

/// Decodes a request body the way a conforming server would.
pub fn decode_request(body: &[u8]) -> Result<InpaintJob, RemoteError> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Incoming {
        guidance_scale: f64,
        height: u32,
        image: String,
        mask: String,
        prompt: String,
        seed: u64,
        steps: u32,
        width: u32,
    }
    let w: Incoming =
        serde_json::from_slice(body).map_err(|e| RemoteError::InvalidJob(format!("request JSON: {e}")))?;
    let decode = |s: &str| B64.decode(s.as_bytes()).map_err(|e| RemoteError::InvalidJob(e.to_string()));
    Ok(InpaintJob {
        image: decode(&w.image)?,
        mask: decode(&w.mask)?,
        prompt: w.prompt,
        steps: w.steps,
        guidance_scale: w.guidance_scale,
        seed: w.seed,
        width: w.width,
        height: w.height,
    })
}
