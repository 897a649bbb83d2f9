//! Bit-packed binary masks and the handful of kernels the augmentation
//! pipeline needs: union of instance masks, background complement,
//! minimum-filter erosion, block downscaling to latent resolution and
//! area statistics.
//!
//! Pixels are stored row-major, one row per run of `u64` words. Bit `c % 64`
//! of word `c / 64` holds column `c`. Bits past `width` in the last word of a
//! row are always zero.

use image::GrayImage;
use thiserror::Error;

const WORD: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions differ: {expected:?} vs {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("cannot take the union of an empty mask list")]
    EmptyList,
    #[error("erosion kernel must be odd and positive, got {0}")]
    EvenKernel(usize),
    #[error("mask {height}x{width} is not divisible by factor {factor}")]
    NotDivisible {
        height: usize,
        width: usize,
        factor: usize,
    },
    #[error("coverage threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("buffer of {found} pixels does not match {height}x{width}")]
    BufferLength {
        height: usize,
        width: usize,
        found: usize,
    },
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    stride: usize,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.height, self.width)?;
        if self.height * self.width <= 32 * 32 {
            for r in 0..self.height {
                let row: String = (0..self.width)
                    .map(|c| if self.get(r, c) { '#' } else { '.' })
                    .collect();
                writeln!(f, "  {row}")?;
            }
        }
        Ok(())
    }
}

#[inline]
fn stride_for(width: usize) -> usize {
    width.div_ceil(WORD)
}

/// Mask selecting the valid (non-pad) bits of the last word of a row.
#[inline]
fn tail_mask(width: usize) -> u64 {
    match width % WORD {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl BinaryMask {
    pub fn zeros(height: usize, width: usize) -> Self {
        let stride = stride_for(width);
        Self {
            height,
            width,
            stride,
            words: vec![0; stride * height],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        let mut m = Self::zeros(height, width);
        m.words.fill(u64::MAX);
        m.clear_padding();
        m
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                if f(r, c) {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Builds a mask from row-major bytes, any non-zero byte counting as set.
    pub fn from_row_major(height: usize, width: usize, pixels: &[u8]) -> Result<Self, MaskError> {
        if pixels.len() != height * width {
            return Err(MaskError::BufferLength {
                height,
                width,
                found: pixels.len(),
            });
        }
        Ok(Self::from_fn(height, width, |r, c| pixels[r * width + c] != 0))
    }

    pub fn to_row_major(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.height * self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(self.get(r, c) as u8);
            }
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.height && col < self.width);
        (self.words[row * self.stride + col / WORD] >> (col % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        debug_assert!(row < self.height && col < self.width);
        let w = &mut self.words[row * self.stride + col / WORD];
        let bit = 1u64 << (col % WORD);
        if value {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    /// Sets columns `start..end` of `row`.
    pub fn fill_span(&mut self, row: usize, start: usize, end: usize) {
        let end = end.min(self.width);
        if start >= end {
            return;
        }
        let base = row * self.stride;
        let (first, last) = (start / WORD, (end - 1) / WORD);
        for wi in first..=last {
            let lo = if wi == first { start % WORD } else { 0 };
            let hi = if wi == last { (end - 1) % WORD + 1 } else { WORD };
            let bits = if hi - lo == WORD {
                u64::MAX
            } else {
                ((1u64 << (hi - lo)) - 1) << lo
            };
            self.words[base + wi] |= bits;
        }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|&w| w != 0)
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.words[row * self.stride..(row + 1) * self.stride]
    }

    fn clear_padding(&mut self) {
        if self.stride == 0 {
            return;
        }
        let tail = tail_mask(self.width);
        for r in 0..self.height {
            self.words[r * self.stride + self.stride - 1] &= tail;
        }
    }

    fn check_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() != other.dims() {
            return Err(MaskError::DimensionMismatch {
                expected: self.dims(),
                found: other.dims(),
            });
        }
        Ok(())
    }

    /// In-place OR with another mask of the same shape.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<(), MaskError> {
        self.check_dims(other)?;
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
        Ok(())
    }

    /// Gray PNG-ready rendering: 0 → black, 1 → white.
    pub fn to_gray_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            image::Luma([if self.get(y as usize, x as usize) { 255 } else { 0 }])
        })
    }

    /// Inverse of [`BinaryMask::to_gray_image`]; pixels ≥ 128 are set.
    pub fn from_gray_image(img: &GrayImage) -> Self {
        Self::from_fn(img.height() as usize, img.width() as usize, |r, c| {
            img.get_pixel(c as u32, r as u32)[0] >= 128
        })
    }
}

/// Per-pixel OR of all input masks.
pub fn foreground_union(masks: &[BinaryMask]) -> Result<BinaryMask, MaskError> {
    let (first, rest) = masks.split_first().ok_or(MaskError::EmptyList)?;
    let mut out = first.clone();
    for m in rest {
        out.union_with(m)?;
    }
    Ok(out)
}

/// Background of an image given the union of its object masks.
///
/// Overlapping instances are saturated by the union first, so the result
/// stays in {0, 1} even where objects overlap.
pub fn background_mask(foreground: &BinaryMask) -> BinaryMask {
    let mut out = foreground.clone();
    for w in out.words.iter_mut() {
        *w = !*w;
    }
    out.clear_padding();
    out
}

/// Minimum filter over a `kernel`×`kernel` window with replicate padding.
///
/// Replicate padding makes the window simply truncate at the image border,
/// which lets the filter split into a vertical pass followed by an in-place
/// horizontal pass. Only the output buffer is allocated.
pub fn erode(mask: &BinaryMask, kernel: usize) -> Result<BinaryMask, MaskError> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(MaskError::EvenKernel(kernel));
    }
    let radius = kernel / 2;
    if radius == 0 || mask.is_empty() {
        return Ok(mask.clone());
    }
    let (h, stride) = (mask.height, mask.stride);
    let mut out = BinaryMask::zeros(mask.height, mask.width);

    for r in 0..h {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        let dst = &mut out.words[r * stride..(r + 1) * stride];
        dst.copy_from_slice(&mask.words[lo * stride..(lo + 1) * stride]);
        for rr in lo + 1..=hi {
            let src = &mask.words[rr * stride..(rr + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src) {
                *d &= s;
            }
        }
    }

    let tail = tail_mask(mask.width);
    for r in 0..h {
        let row = &mut out.words[r * stride..(r + 1) * stride];
        // Pad bits act as "outside the image", which replicate padding makes
        // neutral for a minimum.
        row[stride - 1] |= !tail;
        for _ in 0..radius {
            erode_row_by_one(row);
        }
        row[stride - 1] &= tail;
    }
    Ok(out)
}

/// One-pixel horizontal minimum filter on a single packed row, treating
/// out-of-row neighbours as set.
#[inline]
fn erode_row_by_one(row: &mut [u64]) {
    let n = row.len();
    let mut prev = u64::MAX;
    for i in 0..n {
        let cur = row[i];
        let next = if i + 1 < n { row[i + 1] } else { u64::MAX };
        let left = (cur << 1) | (prev >> 63);
        let right = (cur >> 1) | (next << 63);
        row[i] = cur & left & right;
        prev = cur;
    }
}

/// Downscale by an integer factor; a block becomes 1 when its mean coverage
/// is at least `threshold`.
pub fn resize_to_latent(
    mask: &BinaryMask,
    factor: usize,
    threshold: f64,
) -> Result<BinaryMask, MaskError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(MaskError::InvalidThreshold(threshold));
    }
    if factor == 0 || mask.height % factor != 0 || mask.width % factor != 0 {
        return Err(MaskError::NotDivisible {
            height: mask.height,
            width: mask.width,
            factor,
        });
    }
    // At threshold 0 every block qualifies, even an empty one.
    if factor == 1 && threshold > 0.0 {
        return Ok(mask.clone());
    }
    let (lh, lw) = (mask.height / factor, mask.width / factor);
    let block = (factor * factor) as f64;
    let mut out = BinaryMask::zeros(lh, lw);
    let mut counts = vec![0u32; lw];
    for lr in 0..lh {
        counts.fill(0);
        for r in lr * factor..(lr + 1) * factor {
            for (lc, count) in counts.iter_mut().enumerate() {
                *count += span_ones(mask.row_words(r), lc * factor, (lc + 1) * factor);
            }
        }
        for (lc, &count) in counts.iter().enumerate() {
            if count as f64 / block >= threshold {
                out.set(lr, lc, true);
            }
        }
    }
    Ok(out)
}

fn span_ones(row: &[u64], start: usize, end: usize) -> u32 {
    let mut total = 0;
    let mut c = start;
    while c < end {
        let wi = c / WORD;
        let lo = c % WORD;
        let hi = (end - wi * WORD).min(WORD);
        let bits = if hi - lo == WORD {
            u64::MAX
        } else {
            ((1u64 << (hi - lo)) - 1) << lo
        };
        total += (row[wi] & bits).count_ones();
        c = wi * WORD + hi;
    }
    total
}

/// Fraction of set pixels. An empty (0-pixel) mask reports 0.
pub fn area_ratio(mask: &BinaryMask) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.count_ones() as f64 / mask.len() as f64
}
