//! Image I/O and the letterbox round trip between source resolution and the
//! square working canvas.

use std::io::Cursor;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::mask::{self, BinaryMask};

/// Placement of a `src_w × src_h` image inside a `size × size` canvas,
/// aspect preserved and centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Letterbox {
    pub size: u32,
    pub src_w: u32,
    pub src_h: u32,
    pub content_w: u32,
    pub content_h: u32,
    pub offset_x: u32,
    pub offset_y: u32,
}

impl Letterbox {
    pub fn new(src_w: u32, src_h: u32, size: u32) -> Self {
        let scale = (size as f64 / src_w as f64).min(size as f64 / src_h as f64);
        let content_w = ((src_w as f64 * scale).round() as u32).clamp(1, size);
        let content_h = ((src_h as f64 * scale).round() as u32).clamp(1, size);
        Self {
            size,
            src_w,
            src_h,
            content_w,
            content_h,
            offset_x: (size - content_w) / 2,
            offset_y: (size - content_h) / 2,
        }
    }

    pub fn to_canvas(&self, image: &RgbImage) -> RgbImage {
        let resized = if (self.content_w, self.content_h) == image.dimensions() {
            image.clone()
        } else {
            imageops::resize(image, self.content_w, self.content_h, FilterType::Triangle)
        };
        let mut canvas = RgbImage::from_pixel(self.size, self.size, image::Rgb([0, 0, 0]));
        imageops::replace(&mut canvas, &resized, self.offset_x as i64, self.offset_y as i64);
        canvas
    }

    pub fn from_canvas(&self, canvas: &RgbImage) -> RgbImage {
        let content = imageops::crop_imm(canvas, self.offset_x, self.offset_y, self.content_w, self.content_h).to_image();
        if content.dimensions() == (self.src_w, self.src_h) {
            content
        } else {
            imageops::resize(&content, self.src_w, self.src_h, FilterType::Triangle)
        }
    }

    /// Nearest-neighbour copy of a source-resolution mask onto the canvas;
    /// the padding stays 0 (preserve).
    pub fn mask_to_canvas(&self, m: &BinaryMask) -> BinaryMask {
        let (h, w) = (self.src_h as f64, self.src_w as f64);
        let mut out = BinaryMask::zeros(self.size as usize, self.size as usize);
        for cy in 0..self.content_h {
            let sy = (((cy as f64 + 0.5) * h / self.content_h as f64) as usize).min(self.src_h as usize - 1);
            for cx in 0..self.content_w {
                let sx = (((cx as f64 + 0.5) * w / self.content_w as f64) as usize).min(self.src_w as usize - 1);
                if m.get(sy, sx) {
                    out.set((cy + self.offset_y) as usize, (cx + self.offset_x) as usize, true);
                }
            }
        }
        out
    }

    /// Nearest-neighbour read-back of a canvas mask at source resolution.
    pub fn mask_from_canvas(&self, m: &BinaryMask) -> BinaryMask {
        let (cw, ch) = (self.content_w as f64, self.content_h as f64);
        BinaryMask::from_fn(self.src_h as usize, self.src_w as usize, |y, x| {
            let cy = (((y as f64 + 0.5) * ch / self.src_h as f64) as u32).min(self.content_h - 1);
            let cx = (((x as f64 + 0.5) * cw / self.src_w as f64) as u32).min(self.content_w - 1);
            m.get((cy + self.offset_y) as usize, (cx + self.offset_x) as usize)
        })
    }
}

/// Regenerate masks for one image: on the working canvas (eroded there) and
/// read back at source resolution.
pub fn regeneration_masks(
    background: &BinaryMask,
    letterbox: &Letterbox,
    kernel: usize,
) -> Result<(BinaryMask, BinaryMask), PipelineError> {
    let canvas = mask::erode(&letterbox.mask_to_canvas(background), kernel)?;
    let source = letterbox.mask_from_canvas(&canvas);
    Ok((canvas, source))
}

/// Takes `generated` where `regen` is set and `original` elsewhere.
pub fn composite(original: &RgbImage, generated: &RgbImage, regen: &BinaryMask) -> RgbImage {
    RgbImage::from_fn(original.width(), original.height(), |x, y| {
        if regen.get(y as usize, x as usize) {
            *generated.get_pixel(x, y)
        } else {
            *original.get_pixel(x, y)
        }
    })
}

pub fn load_rgb(path: &Path) -> Result<RgbImage, PipelineError> {
    let img = image::ImageReader::open(path)
        .map_err(|e| PipelineError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| PipelineError::io(path, e))?
        .decode()
        .map_err(|e| PipelineError::Image(format!("{}: {e}", path.display())))?;
    Ok(img.to_rgb8())
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| PipelineError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    std::fs::write(&tmp, bytes).map_err(|e| PipelineError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| PipelineError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letterbox_geometry() {
        let lb = Letterbox::new(640, 480, 512);
        assert_eq!((lb.content_w, lb.content_h), (512, 384));
        assert_eq!((lb.offset_x, lb.offset_y), (0, 64));
        let tall = Letterbox::new(100, 400, 512);
        assert_eq!((tall.content_w, tall.content_h, tall.offset_x), (128, 512, 192));
        let tiny = Letterbox::new(1, 1000, 64);
        assert_eq!(tiny.content_w, 1);
    }

    #[test]
    fn padding_is_never_regenerated() {
        let lb = Letterbox::new(40, 20, 64);
        let canvas = lb.mask_to_canvas(&BinaryMask::ones(20, 40));
        assert_eq!(canvas.count_ones(), (lb.content_w * lb.content_h) as u64);
        assert!(!canvas.get(0, 0));
    }

    #[test]
    fn identity_when_already_square() {
        let lb = Letterbox::new(16, 16, 16);
        let img = RgbImage::from_fn(16, 16, |x, y| image::Rgb([x as u8, y as u8, 3]));
        assert_eq!(lb.from_canvas(&lb.to_canvas(&img)), img);
        let m = BinaryMask::from_fn(16, 16, |r, c| r > c);
        assert_eq!(lb.mask_from_canvas(&lb.mask_to_canvas(&m)), m);
    }

    #[test]
    fn round_trip_restores_dimensions() {
        let lb = Letterbox::new(37, 23, 64);
        let img = RgbImage::from_pixel(37, 23, image::Rgb([10, 20, 30]));
        let back = lb.from_canvas(&lb.to_canvas(&img));
        assert_eq!(back.dimensions(), (37, 23));
    }

    #[test]
    fn composite_selects_per_pixel() {
        let a = RgbImage::from_pixel(3, 2, image::Rgb([0, 0, 0]));
        let b = RgbImage::from_pixel(3, 2, image::Rgb([9, 9, 9]));
        let m = BinaryMask::from_fn(2, 3, |_, c| c == 2);
        let out = composite(&a, &b, &m);
        assert_eq!(out.get_pixel(2, 1)[0], 9);
        assert_eq!(out.get_pixel(1, 1)[0], 0);
    }
}
