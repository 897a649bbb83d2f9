//! COCO-style dataset model: parsing, validation, instance masks, subset
//! sampling and merging generated images back in.

mod polygon;
mod rle;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::mask::{self, BinaryMask};

pub use polygon::{rasterize_polygons, rings_from_flat, Ring};
pub use rle::{rle_decode, rle_encode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("malformed dataset JSON: {0}")]
    MalformedJson(String),
    #[error("annotation {annotation_id} references missing {field} {target}")]
    DanglingReference {
        annotation_id: u64,
        field: &'static str,
        target: u64,
    },
    #[error("annotation {annotation_id}: unsupported segmentation ({kind})")]
    UnsupportedSegmentation { annotation_id: u64, kind: String },
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("image {id} has invalid size {width}x{height}")]
    InvalidImage { id: u64, width: u32, height: u32 },
    #[error("RLE counts sum to {found}, expected {expected}")]
    LengthMismatch { expected: u64, found: u64 },
    #[error("polygon ring {index} has {vertices} vertices (need at least 3)")]
    DegenerateRing { index: usize, vertices: usize },
    #[error("annotation {annotation_id}: RLE size {found:?} does not match image {expected:?}")]
    MaskSizeMismatch {
        annotation_id: u64,
        expected: [usize; 2],
        found: [usize; 2],
    },
    #[error("dataset has no images")]
    EmptyDataset,
    #[error("subset fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("generated image refers to unknown source image {0}")]
    UnknownSource(u64),
    #[error("unknown image id {0}")]
    UnknownImage(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Segmentation {
    /// Flat `[x0, y0, x1, y1, ...]` rings.
    Polygons(Vec<Vec<f64>>),
    /// Uncompressed RLE; `size` is `[height, width]`.
    Rle { counts: Vec<u32>, size: [usize; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]` in pixels.
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    pub iscrowd: u8,
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
    #[serde(default)]
    area: Option<f64>,
    #[serde(default)]
    segmentation: Option<Value>,
    #[serde(default)]
    iscrowd: u8,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Deserialize)]
struct RawDataset {
    images: Vec<ImageRecord>,
    #[serde(default)]
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    categories: Vec<Category>,
    #[serde(flatten)]
    extra: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatedDataset {
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<Category>,
    /// Top-level keys other than the three above (`info`, `licenses`, ...).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

fn parse_segmentation(annotation_id: u64, value: Value) -> Result<Option<Segmentation>, AnnotationError> {
    let unsupported = |kind: &str| AnnotationError::UnsupportedSegmentation {
        annotation_id,
        kind: kind.to_string(),
    };
    match value {
        Value::Null => Ok(None),
        Value::Array(rings) => {
            let mut out = Vec::with_capacity(rings.len());
            for ring in rings {
                let coords: Vec<f64> =
                    serde_json::from_value(ring).map_err(|_| unsupported("non-numeric polygon"))?;
                if coords.len() % 2 != 0 {
                    return Err(unsupported("odd polygon coordinate count"));
                }
                out.push(coords);
            }
            Ok(Some(Segmentation::Polygons(out)))
        }
        Value::Object(obj) => {
            let size: [usize; 2] = obj
                .get("size")
                .cloned()
                .and_then(|s| serde_json::from_value(s).ok())
                .ok_or_else(|| unsupported("RLE without size"))?;
            match obj.get("counts") {
                Some(Value::String(_)) => Err(unsupported("compressed RLE")),
                Some(counts @ Value::Array(_)) => {
                    let counts: Vec<u32> = serde_json::from_value(counts.clone())
                        .map_err(|_| unsupported("non-integer RLE counts"))?;
                    Ok(Some(Segmentation::Rle { counts, size }))
                }
                _ => Err(unsupported("RLE without counts")),
            }
        }
        other => Err(unsupported(match other {
            Value::String(_) => "string",
            Value::Number(_) => "number",
            _ => "boolean",
        })),
    }
}

impl AnnotatedDataset {
    pub fn parse(bytes: &[u8]) -> Result<Self, AnnotationError> {
        parse_dataset(bytes)
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        // Maps are BTreeMap-backed, so object keys come out sorted.
        let value = serde_json::to_value(self).expect("dataset is always representable as JSON");
        serde_json::to_vec(&value).expect("JSON values always serialize")
    }

    pub fn to_json_pretty(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("dataset is always representable as JSON");
        serde_json::to_vec_pretty(&value).expect("JSON values always serialize")
    }

    pub fn image(&self, id: u64) -> Option<&ImageRecord> {
        self.images.iter().find(|im| im.id == id)
    }

    /// Annotations grouped by image id, in file order.
    pub fn annotations_by_image(&self) -> HashMap<u64, Vec<&AnnotationRecord>> {
        let mut map: HashMap<u64, Vec<&AnnotationRecord>> = HashMap::new();
        for ann in &self.annotations {
            map.entry(ann.image_id).or_default().push(ann);
        }
        map
    }

    /// Checks the referential invariants. `parse_dataset` calls this; callers
    /// that build datasets by hand can too.
    pub fn check_integrity(&self) -> Result<(), AnnotationError> {
        let mut image_ids = HashSet::with_capacity(self.images.len());
        for im in &self.images {
            if !image_ids.insert(im.id) {
                return Err(AnnotationError::DuplicateId { kind: "image", id: im.id });
            }
            if im.width == 0 || im.height == 0 {
                return Err(AnnotationError::InvalidImage {
                    id: im.id,
                    width: im.width,
                    height: im.height,
                });
            }
        }
        let mut category_ids = HashSet::with_capacity(self.categories.len());
        for cat in &self.categories {
            if !category_ids.insert(cat.id) {
                return Err(AnnotationError::DuplicateId { kind: "category", id: cat.id });
            }
        }
        let mut ann_ids = HashSet::with_capacity(self.annotations.len());
        for ann in &self.annotations {
            if !ann_ids.insert(ann.id) {
                return Err(AnnotationError::DuplicateId { kind: "annotation", id: ann.id });
            }
            if !image_ids.contains(&ann.image_id) {
                return Err(AnnotationError::DanglingReference {
                    annotation_id: ann.id,
                    field: "image_id",
                    target: ann.image_id,
                });
            }
            if !category_ids.contains(&ann.category_id) {
                return Err(AnnotationError::DanglingReference {
                    annotation_id: ann.id,
                    field: "category_id",
                    target: ann.category_id,
                });
            }
        }
        Ok(())
    }

    /// Union of all object masks of one image, at the image's resolution.
    pub fn foreground_mask(&self, image_id: u64) -> Result<BinaryMask, AnnotationError> {
        let image = self.image(image_id).ok_or(AnnotationError::UnknownImage(image_id))?;
        let anns: Vec<&AnnotationRecord> = self.annotations.iter().filter(|a| a.image_id == image_id).collect();
        image_foreground(image, &anns)
    }

    /// Background mask of one image: complement of the object union.
    pub fn background_mask(&self, image_id: u64) -> Result<BinaryMask, AnnotationError> {
        Ok(mask::background_mask(&self.foreground_mask(image_id)?))
    }
}

/// Union of the given annotations' masks at `image`'s resolution; all zeros
/// when there are none.
pub fn image_foreground(image: &ImageRecord, anns: &[&AnnotationRecord]) -> Result<BinaryMask, AnnotationError> {
    let mut fg = BinaryMask::zeros(image.height as usize, image.width as usize);
    for ann in anns {
        fg.union_with(&instance_mask(ann, image)?)
            .expect("instance masks are built at image size");
    }
    Ok(fg)
}

/// Rasterizes one annotation at its image's resolution.
///
/// Crowd regions are treated like any other instance. Annotations without a
/// segmentation (detection-only data) fall back to their bounding box. Rings
/// with fewer than three vertices are dropped with a warning so a single bad
/// polygon does not block a whole image.
pub fn instance_mask(ann: &AnnotationRecord, image: &ImageRecord) -> Result<BinaryMask, AnnotationError> {
    let (h, w) = (image.height as usize, image.width as usize);
    match &ann.segmentation {
        Some(Segmentation::Rle { counts, size }) => {
            if *size != [h, w] {
                return Err(AnnotationError::MaskSizeMismatch {
                    annotation_id: ann.id,
                    expected: [h, w],
                    found: *size,
                });
            }
            rle_decode(counts, h, w)
        }
        Some(Segmentation::Polygons(flat)) if !flat.is_empty() => {
            let rings: Vec<Ring> = rings_from_flat(flat)
                .into_iter()
                .filter(|r| {
                    if r.len() < 3 {
                        log::warn!("annotation {}: skipping ring with {} vertices", ann.id, r.len());
                    }
                    r.len() >= 3
                })
                .collect();
            rasterize_polygons(&rings, h, w)
        }
        _ => {
            let [x, y, bw, bh] = ann.bbox;
            let rect = vec![(x, y), (x + bw, y), (x + bw, y + bh), (x, y + bh)];
            rasterize_polygons(&[rect], h, w)
        }
    }
}

pub fn parse_dataset(bytes: &[u8]) -> Result<AnnotatedDataset, AnnotationError> {
    let raw: RawDataset =
        serde_json::from_slice(bytes).map_err(|e| AnnotationError::MalformedJson(e.to_string()))?;
    let mut annotations = Vec::with_capacity(raw.annotations.len());
    for a in raw.annotations {
        let segmentation = match a.segmentation {
            Some(v) => parse_segmentation(a.id, v)?,
            None => None,
        };
        annotations.push(AnnotationRecord {
            id: a.id,
            image_id: a.image_id,
            category_id: a.category_id,
            bbox: a.bbox.unwrap_or([0.0; 4]),
            area: a.area.unwrap_or(0.0),
            segmentation,
            iscrowd: a.iscrowd,
            extra: a.extra,
        });
    }
    let ds = AnnotatedDataset {
        images: raw.images,
        annotations,
        categories: raw.categories,
        extra: raw.extra,
    };
    ds.check_integrity()?;
    Ok(ds)
}

/// Keeps `ceil(fraction * N)` images chosen uniformly without replacement,
/// plus their annotations. Retained images keep their original order.
pub fn sample_subset(ds: &AnnotatedDataset, fraction: f64, seed: u64) -> Result<AnnotatedDataset, AnnotationError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(AnnotationError::InvalidFraction(fraction));
    }
    let n = ds.images.len();
    if n == 0 {
        return Err(AnnotationError::EmptyDataset);
    }
    if fraction == 1.0 {
        return Ok(ds.clone());
    }
    // The epsilon absorbs products like 0.07 * 100 = 7.000000000000001.
    let keep = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, n, keep).into_vec();
    picked.sort_unstable();
    let images: Vec<ImageRecord> = picked.iter().map(|&i| ds.images[i].clone()).collect();
    let kept: HashSet<u64> = images.iter().map(|im| im.id).collect();
    Ok(AnnotatedDataset {
        images,
        annotations: ds
            .annotations
            .iter()
            .filter(|a| kept.contains(&a.image_id))
            .cloned()
            .collect(),
        categories: ds.categories.clone(),
        extra: ds.extra.clone(),
    })
}

/// One generated image to fold into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedImage {
    pub source_image_id: u64,
    pub file_name: String,
}

/// Extra key recorded on generated image records.
pub const SOURCE_IMAGE_KEY: &str = "source_image_id";

/// Appends each generated image as a new record with the source's size and a
/// copy of the source's annotations. New ids continue from the current
/// maxima, in the order given.
pub fn merge_augmented(
    original: &AnnotatedDataset,
    generated: &[GeneratedImage],
) -> Result<AnnotatedDataset, AnnotationError> {
    let images_by_id: BTreeMap<u64, &ImageRecord> = original.images.iter().map(|im| (im.id, im)).collect();
    for g in generated {
        if !images_by_id.contains_key(&g.source_image_id) {
            return Err(AnnotationError::UnknownSource(g.source_image_id));
        }
    }
    let by_image = original.annotations_by_image();
    let mut next_image_id = original.images.iter().map(|im| im.id).max().unwrap_or(0);
    let mut next_ann_id = original.annotations.iter().map(|a| a.id).max().unwrap_or(0);

    let mut out = original.clone();
    for g in generated {
        let src = images_by_id[&g.source_image_id];
        next_image_id += 1;
        let mut extra = Map::new();
        extra.insert(SOURCE_IMAGE_KEY.to_string(), Value::from(src.id));
        out.images.push(ImageRecord {
            id: next_image_id,
            file_name: g.file_name.clone(),
            width: src.width,
            height: src.height,
            extra,
        });
        for ann in by_image.get(&src.id).into_iter().flatten() {
            next_ann_id += 1;
            out.annotations.push(AnnotationRecord {
                id: next_ann_id,
                image_id: next_image_id,
                ..(*ann).clone()
            });
        }
    }
    Ok(out)
}
