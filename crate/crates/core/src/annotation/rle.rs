//! Uncompressed COCO run-length encoding.
//!
//! Runs walk the mask in column-major order and alternate between zeros and
//! ones, always starting with a (possibly empty) zero run.

use super::AnnotationError;
use crate::mask::BinaryMask;

pub fn rle_decode(counts: &[u32], height: usize, width: usize) -> Result<BinaryMask, AnnotationError> {
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let expected = (height * width) as u64;
    if total != expected {
        return Err(AnnotationError::LengthMismatch { expected, found: total });
    }
    let mut mask = BinaryMask::zeros(height, width);
    let mut idx = 0usize;
    for (i, &run) in counts.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 {
            for p in idx..idx + run {
                mask.set(p % height, p / height, true);
            }
        }
        idx += run;
    }
    Ok(mask)
}

pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for c in 0..w {
        for r in 0..h {
            let v = mask.get(r, c);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    counts
}
