//! Scanline polygon fill.
//!
//! A pixel is inside when its center `(col + 0.5, row + 0.5)` has non-zero
//! winding number. Edges are half-open in y (top endpoint included) and a
//! center lying exactly on a crossing is counted with that crossing, so left
//! and top edges are filled while right and bottom edges are not. Each ring
//! is filled on its own and the results are OR-ed together, which matches
//! how multi-part COCO polygons are meant to be read.

use super::AnnotationError;
use crate::mask::BinaryMask;

pub type Ring = Vec<(f64, f64)>;

/// Converts COCO's flat `[x0, y0, x1, y1, ...]` lists to vertex rings.
pub fn rings_from_flat(flat: &[Vec<f64>]) -> Vec<Ring> {
    flat.iter()
        .map(|coords| coords.chunks_exact(2).map(|p| (p[0], p[1])).collect())
        .collect()
}

pub fn rasterize_polygons(rings: &[Ring], height: usize, width: usize) -> Result<BinaryMask, AnnotationError> {
    let mut mask = BinaryMask::zeros(height, width);
    let mut crossings: Vec<(f64, i32)> = Vec::new();
    for (index, ring) in rings.iter().enumerate() {
        if ring.len() < 3 {
            return Err(AnnotationError::DegenerateRing { index, vertices: ring.len() });
        }
        if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(AnnotationError::DegenerateRing { index, vertices: ring.len() });
        }
        let (ymin, ymax) = ring
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
        let first_row = (ymin - 0.5).ceil().max(0.0) as usize;
        let last_row = ((ymax - 0.5).floor()).min(height as f64 - 1.0);
        if last_row < 0.0 {
            continue;
        }
        for row in first_row..=last_row as usize {
            let y = row as f64 + 0.5;
            crossings.clear();
            for i in 0..ring.len() {
                let (x0, y0) = ring[i];
                let (x1, y1) = ring[(i + 1) % ring.len()];
                let dir = if y0 <= y && y < y1 {
                    1
                } else if y1 <= y && y < y0 {
                    -1
                } else {
                    continue;
                };
                let x = x0 + (y - y0) * (x1 - x0) / (y1 - y0);
                crossings.push((x, dir));
            }
            crossings.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut winding = 0;
            for pair in crossings.windows(2) {
                winding += pair[0].1;
                if winding == 0 {
                    continue;
                }
                // Columns whose centers satisfy left <= c + 0.5 < right.
                let start = (pair[0].0 - 0.5).ceil().max(0.0);
                let end = (pair[1].0 - 0.5).ceil().min(width as f64);
                if end > start {
                    mask.fill_span(row, start as usize, end as usize);
                }
            }
        }
    }
    Ok(mask)
}
