//! Synthetic COCO-style fixtures: random textured PNGs with polygon and
//! uncompressed-RLE annotations.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub struct Fixture {
    pub annotations: PathBuf,
    pub images_dir: PathBuf,
    pub n_images: usize,
    pub n_annotations: usize,
}

fn shoelace(points: &[(f64, f64)]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = points[i];
            let (x1, y1) = points[(i + 1) % n];
            x0 * y1 - x1 * y0
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn bbox(points: &[(f64, f64)]) -> [f64; 4] {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    [x0, y0, x1 - x0, y1 - y0]
}

/// Column-major uncompressed RLE of a disc, starting with the zero run.
fn disc_rle(h: usize, w: usize, cx: f64, cy: f64, r: f64) -> (Vec<u32>, u32, [f64; 4]) {
    let mut counts = Vec::new();
    let (mut current, mut run, mut area) = (false, 0u32, 0u32);
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for x in 0..w {
        for y in 0..h {
            let inside = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2) <= r * r;
            if inside {
                area += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
            if inside != current {
                counts.push(run);
                run = 0;
                current = inside;
            }
            run += 1;
        }
    }
    counts.push(run);
    (counts, area, [x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64])
}

pub fn textured_image(w: u32, h: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    let base: [u8; 3] = rng.random();
    let (fx, fy) = (rng.random_range(1..7u32), rng.random_range(1..7u32));
    RgbImage::from_fn(w, h, |x, y| {
        let t = ((x * fx + y * fy) % 64) as u8;
        Rgb([base[0].wrapping_add(t), base[1].wrapping_add(t / 2), base[2] ^ (x as u8).wrapping_mul(3)])
    })
}

/// `n` images of random size in `[min_side, max_side]`, each with 1–3
/// objects. Returns paths inside `dir`.
pub fn write_fixture(dir: &Path, n: usize, seed: u64, min_side: u32, max_side: u32) -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).unwrap();
    let mut images = Vec::new();
    let mut annotations = Vec::new();
    let mut ann_id = 100;
    for i in 0..n {
        let id = 10 + i as u64 * 3;
        let w = rng.random_range(min_side..=max_side);
        let h = rng.random_range(min_side..=max_side);
        let file_name = format!("img_{id:04}.png");
        textured_image(w, h, &mut rng).save(images_dir.join(&file_name)).unwrap();
        images.push(json!({"id": id, "file_name": file_name, "width": w, "height": h, "license": 1}));

        let (wf, hf) = (w as f64, h as f64);
        for k in 0..rng.random_range(1..=3) {
            ann_id += 1;
            let category = 1 + (k % 2) as u64;
            let ann = if k == 2 {
                let r = rng.random_range(3.0..wf.min(hf) / 4.0);
                let cx = rng.random_range(r..wf - r);
                let cy = rng.random_range(r..hf - r);
                let (counts, area, bb) = disc_rle(h as usize, w as usize, cx, cy, r);
                json!({"id": ann_id, "image_id": id, "category_id": category, "iscrowd": 0,
                       "segmentation": {"counts": counts, "size": [h, w]}, "area": area, "bbox": bb})
            } else {
                let x0 = rng.random_range(0.0..wf * 0.6);
                let y0 = rng.random_range(0.0..hf * 0.6);
                let x1 = rng.random_range(x0 + 4.0..wf);
                let y1 = rng.random_range(y0 + 4.0..hf);
                let pts: Vec<(f64, f64)> = if k == 0 {
                    vec![(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
                } else {
                    vec![(x0, y1), ((x0 + x1) / 2.0, y0), (x1, y1)]
                };
                let flat: Vec<f64> = pts.iter().flat_map(|&(x, y)| [x, y]).collect();
                json!({"id": ann_id, "image_id": id, "category_id": category, "iscrowd": 0,
                       "segmentation": [flat], "area": shoelace(&pts), "bbox": bbox(&pts)})
            };
            annotations.push(ann);
        }
    }
    let n_annotations = annotations.len();
    let doc = json!({
        "info": {"description": "synthetic fixture"},
        "licenses": [{"id": 1, "name": "test"}],
        "images": images,
        "annotations": annotations,
        "categories": [{"id": 1, "name": "box", "supercategory": "shape"},
                       {"id": 2, "name": "disc", "supercategory": "shape"}],
    });
    let annotations_path = dir.join("instances.json");
    std::fs::write(&annotations_path, serde_json::to_vec_pretty(&doc).unwrap()).unwrap();
    Fixture { annotations: annotations_path, images_dir, n_images: n, n_annotations }
}

pub fn bgforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bgforge")).args(args).output().expect("bgforge runs")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Every file under `dir` (recursively) with its bytes, keyed by relative path.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}
