use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use super::imaging;
use super::manifest::ManifestState;
use crate::annotation::{instance_mask, parse_dataset, AnnotatedDataset, SOURCE_IMAGE_KEY};

/// Rasterized area may differ from the recorded `area` by this fraction
/// before a warning is raised.
pub const AREA_TOLERANCE: f64 = 0.10;
/// Objects smaller than this are too coarse for the area comparison.
const AREA_CHECK_MIN: f64 = 16.0;
const BBOX_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Parse,
    MissingFile,
    Dimensions,
    BboxOutOfBounds,
    Segmentation,
    AreaMismatch,
    GeneratedMismatch,
    Checksum,
    Manifest,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub kind: FindingKind,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}: {}", self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub images_checked: usize,
    pub annotations_checked: usize,
    pub manifest_entries_checked: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    /// No errors; warnings are allowed.
    pub fn is_clean(&self) -> bool {
        self.errors().next().is_none()
    }

    fn push(&mut self, severity: Severity, kind: FindingKind, message: String) {
        self.findings.push(Finding { severity, kind, message });
    }

    fn error(&mut self, kind: FindingKind, message: String) {
        self.push(Severity::Error, kind, message);
    }
}

/// Checks a dataset against its image files and, optionally, the manifest
/// that produced its generated images.
pub fn run_validate(annotations: &Path, images_dir: &Path, manifest: Option<&Path>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let ds = match std::fs::read(annotations)
        .map_err(|e| e.to_string())
        .and_then(|b| parse_dataset(&b).map_err(|e| e.to_string()))
    {
        Ok(ds) => ds,
        Err(e) => {
            report.error(FindingKind::Parse, format!("{}: {e}", annotations.display()));
            return report;
        }
    };
    check_images(&ds, images_dir, &mut report);
    check_annotations(&ds, &mut report);
    check_generated(&ds, &mut report);
    if let Some(manifest) = manifest {
        check_manifest(manifest, &mut report);
    }
    report
}

fn check_images(ds: &AnnotatedDataset, images_dir: &Path, report: &mut ValidationReport) {
    for im in &ds.images {
        report.images_checked += 1;
        let path = images_dir.join(&im.file_name);
        if !path.is_file() {
            report.error(FindingKind::MissingFile, format!("image {}: {} not found", im.id, path.display()));
            continue;
        }
        match image::image_dimensions(&path) {
            Ok(dims) if dims == (im.width, im.height) => {}
            Ok((w, h)) => report.error(
                FindingKind::Dimensions,
                format!("image {}: file is {w}x{h}, record says {}x{}", im.id, im.width, im.height),
            ),
            Err(e) => report.error(FindingKind::Dimensions, format!("image {}: unreadable {}: {e}", im.id, path.display())),
        }
    }
}

fn check_annotations(ds: &AnnotatedDataset, report: &mut ValidationReport) {
    let images: HashMap<u64, _> = ds.images.iter().map(|im| (im.id, im)).collect();
    for ann in &ds.annotations {
        report.annotations_checked += 1;
        let im = images[&ann.image_id];
        let [x, y, w, h] = ann.bbox;
        if !(x >= -BBOX_EPS
            && y >= -BBOX_EPS
            && w >= 0.0
            && h >= 0.0
            && x + w <= im.width as f64 + BBOX_EPS
            && y + h <= im.height as f64 + BBOX_EPS)
        {
            report.error(
                FindingKind::BboxOutOfBounds,
                format!("annotation {}: bbox {:?} exceeds image {} ({}x{})", ann.id, ann.bbox, im.id, im.width, im.height),
            );
        }
        if ann.segmentation.is_none() {
            continue;
        }
        match instance_mask(ann, im) {
            Ok(m) => {
                if ann.area >= AREA_CHECK_MIN {
                    let pixels = m.count_ones() as f64;
                    let rel = (pixels - ann.area).abs() / ann.area;
                    if rel > AREA_TOLERANCE {
                        report.push(
                            Severity::Warning,
                            FindingKind::AreaMismatch,
                            format!("annotation {}: mask covers {pixels} px, area says {}", ann.id, ann.area),
                        );
                    }
                }
            }
            Err(e) => report.error(FindingKind::Segmentation, format!("annotation {}: {e}", ann.id)),
        }
    }
}

fn check_generated(ds: &AnnotatedDataset, report: &mut ValidationReport) {
    let by_image = ds.annotations_by_image();
    let count = |id: u64| by_image.get(&id).map_or(0, Vec::len);
    for im in &ds.images {
        let Some(src_value) = im.extra.get(SOURCE_IMAGE_KEY) else {
            continue;
        };
        let Some(src) = src_value.as_u64().and_then(|id| ds.image(id)) else {
            report.error(FindingKind::GeneratedMismatch, format!("image {}: unknown source {src_value}", im.id));
            continue;
        };
        if (src.width, src.height) != (im.width, im.height) {
            report.error(
                FindingKind::GeneratedMismatch,
                format!("image {}: {}x{} differs from source {} ({}x{})", im.id, im.width, im.height, src.id, src.width, src.height),
            );
        }
        if count(im.id) != count(src.id) {
            report.error(
                FindingKind::GeneratedMismatch,
                format!("image {}: {} annotations, source {} has {}", im.id, count(im.id), src.id, count(src.id)),
            );
        }
    }
}

fn check_manifest(path: &Path, report: &mut ValidationReport) {
    let state = match ManifestState::replay(path) {
        Ok(s) => s,
        Err(e) => {
            report.error(FindingKind::Manifest, e.to_string());
            return;
        }
    };
    let dir = path.parent().unwrap_or(Path::new(""));
    for entry in state.done() {
        report.manifest_entries_checked += 1;
        let file = dir.join(&entry.output_file);
        let bytes = match std::fs::read(&file) {
            Ok(b) => b,
            Err(e) => {
                report.error(FindingKind::MissingFile, format!("{}: {e}", file.display()));
                continue;
            }
        };
        let sum = imaging::sha256_hex(&bytes);
        if entry.checksum.as_deref() != Some(sum.as_str()) {
            report.error(
                FindingKind::Checksum,
                format!("{}: checksum {sum} does not match manifest {:?}", file.display(), entry.checksum),
            );
        }
    }
}
