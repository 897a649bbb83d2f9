//! Property tests over the mask, annotation and policy layers, each checked
//! against a direct scalar restatement rather than the library itself.

use std::collections::BTreeMap;

use bgforge_core::annotation::{
    merge_augmented, parse_dataset, rasterize_polygons, rle_decode, rle_encode, sample_subset, AnnotatedDataset,
    GeneratedImage,
};
use bgforge_core::mask::{area_ratio, background_mask, erode, foreground_union, resize_to_latent, BinaryMask};
use bgforge_core::policy::{adaptive_steps, build_sampling_plan, PolicyConfig, SamplingMode};
use proptest::prelude::*;
use serde_json::{json, Value};

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(any::<bool>(), h * w).prop_map(move |bits| BinaryMask::from_fn(h, w, |r, c| bits[r * w + c]))
    })
}

fn pair_strategy(max: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        let cells = prop::collection::vec(any::<bool>(), h * w);
        (cells.clone(), cells).prop_map(move |(a, b)| {
            (BinaryMask::from_fn(h, w, |r, c| a[r * w + c]), BinaryMask::from_fn(h, w, |r, c| b[r * w + c]))
        })
    })
}

/// Crossing-number-free winding count at a point, summed over rings.
fn winding(rings: &[Vec<(f64, f64)>], px: f64, py: f64) -> i32 {
    let mut wn = 0;
    for ring in rings {
        for i in 0..ring.len() {
            let (x0, y0) = ring[i];
            let (x1, y1) = ring[(i + 1) % ring.len()];
            let side = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0);
            if y0 <= py && y1 > py && side > 0.0 {
                wn += 1;
            } else if y1 <= py && y0 > py && side < 0.0 {
                wn -= 1;
            }
        }
    }
    wn
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rle_round_trips(m in mask_strategy(40)) {
        let counts = rle_encode(&m);
        prop_assert_eq!(counts.iter().map(|&c| c as usize).sum::<usize>(), m.len());
        prop_assert!(counts[1..].iter().all(|&c| c > 0), "only the leading run may be empty");
        prop_assert_eq!(rle_decode(&counts, m.height(), m.width()).unwrap(), m);
    }

    #[test]
    fn rle_rejects_wrong_totals(m in mask_strategy(12), extra in 1u32..5) {
        let mut counts = rle_encode(&m);
        *counts.last_mut().unwrap() += extra;
        prop_assert!(rle_decode(&counts, m.height(), m.width()).is_err());
    }

    #[test]
    fn erosion_shrinks_and_composes(m in mask_strategy(48)) {
        let e3 = erode(&m, 3).unwrap();
        let e5 = erode(&m, 5).unwrap();
        prop_assert!(e3.is_subset_of(&m));
        prop_assert!(e5.is_subset_of(&e3));
        prop_assert_eq!(erode(&m, 1).unwrap(), m.clone());
        // Replicate-padded minimum filters compose by adding radii.
        prop_assert_eq!(erode(&e3, 3).unwrap(), e5);
    }

    #[test]
    fn union_and_complement_laws((a, b) in pair_strategy(40)) {
        let ab = foreground_union(&[a.clone(), b.clone()]).unwrap();
        prop_assert_eq!(&ab, &foreground_union(&[b.clone(), a.clone()]).unwrap());
        prop_assert!(a.is_subset_of(&ab) && b.is_subset_of(&ab));
        prop_assert_eq!(&foreground_union(&[ab.clone(), a.clone()]).unwrap(), &ab);
        // De Morgan: the background of a union is the intersection of backgrounds.
        let bg = background_mask(&ab);
        let (na, nb) = (background_mask(&a), background_mask(&b));
        let inter = BinaryMask::from_fn(a.height(), a.width(), |r, c| na.get(r, c) && nb.get(r, c));
        prop_assert_eq!(&bg, &inter);
        prop_assert_eq!(background_mask(&bg), ab.clone());
        prop_assert_eq!(area_ratio(&ab) + area_ratio(&bg), 1.0);
    }

    #[test]
    fn resize_is_monotone_in_threshold(m in mask_strategy(32), f in prop::sample::select(vec![1usize, 2, 4]), t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (h, w) = (m.height() / f * f, m.width() / f * f);
        prop_assume!(h > 0 && w > 0);
        let crop = BinaryMask::from_fn(h, w, |r, c| m.get(r, c));
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let strict = resize_to_latent(&crop, f, hi).unwrap();
        let loose = resize_to_latent(&crop, f, lo).unwrap();
        prop_assert!(strict.is_subset_of(&loose));
        prop_assert_eq!(strict.dims(), (h / f, w / f));
    }

    #[test]
    fn polygons_match_winding_oracle(
        rings in prop::collection::vec(prop::collection::vec((-2.0f64..22.0, -2.0f64..18.0), 3..7), 1..3)
    ) {
        let (h, w) = (16, 20);
        let m = rasterize_polygons(&rings, h, w).unwrap();
        // Each ring is filled on its own, then unioned.
        for r in 0..h {
            for c in 0..w {
                let (px, py) = (c as f64 + 0.5, r as f64 + 0.5);
                let want = rings.iter().any(|ring| winding(std::slice::from_ref(ring), px, py) != 0);
                prop_assert_eq!(m.get(r, c), want, "pixel ({}, {})", r, c);
            }
        }
    }

    #[test]
    fn adaptive_steps_stay_in_range(t in 1u32..2000, d in 0.001f64..0.999, r1 in 0.0f64..=1.0, r2 in 0.0f64..=1.0) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let a = adaptive_steps(t, d, lo).unwrap();
        let b = adaptive_steps(t, d, hi).unwrap();
        prop_assert!(b <= a && (1..=t).contains(&a) && (1..=t).contains(&b));
        // Round half up of T(1 − D·r).
        let exact = t as f64 * (1.0 - d * lo);
        prop_assert!((a as f64 - exact).abs() <= 0.5 + 1e-9);
    }
}

fn dataset_strategy() -> impl Strategy<Value = Value> {
    (1usize..12, any::<u64>()).prop_map(|(n, salt)| {
        let images: Vec<Value> = (0..n)
            .map(|i| {
                json!({"id": 1000 + i * 7, "file_name": format!("f{i}.jpg"), "width": 20 + i, "height": 10 + i,
                       "coco_url": format!("http://x/{salt}/{i}"), "date_captured": "2013-11-14"})
            })
            .collect();
        let mut annotations = Vec::new();
        for i in 0..n {
            for k in 0..(salt as usize + i) % 4 {
                let id = annotations.len() as u64 + 1;
                let seg = if k % 2 == 0 {
                    json!([[1.0, 1.0, 6.0, 1.0, 6.0, 5.0 + k as f64]])
                } else {
                    json!({"counts": [3, 4, (10 + i) * (20 + i) - 7], "size": [10 + i, 20 + i]})
                };
                annotations.push(json!({"id": id, "image_id": 1000 + i * 7, "category_id": 1 + k % 2,
                    "bbox": [1.0, 1.0, 5.0, 4.0], "area": 20.0, "iscrowd": 0, "segmentation": seg,
                    "attributes": {"occluded": k == 1}}));
            }
        }
        json!({"info": {"year": 2017}, "licenses": [], "images": images, "annotations": annotations,
               "categories": [{"id": 1, "name": "a", "supercategory": "s"}, {"id": 2, "name": "b"}]})
    })
}

fn parse(v: &Value) -> AnnotatedDataset {
    parse_dataset(&serde_json::to_vec(v).unwrap()).unwrap()
}

/// Order-insensitive fingerprint of one image's annotations.
fn ann_multiset(ds: &AnnotatedDataset, image_id: u64) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for a in ds.annotations.iter().filter(|a| a.image_id == image_id) {
        let mut v = serde_json::to_value(a).unwrap();
        let obj = v.as_object_mut().unwrap();
        obj.remove("id");
        obj.remove("image_id");
        *out.entry(v.to_string()).or_default() += 1;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parse_serialize_is_a_fixpoint(doc in dataset_strategy()) {
        let ds = parse(&doc);
        let bytes = ds.to_json_bytes();
        let again = parse_dataset(&bytes).unwrap();
        prop_assert_eq!(&again, &ds);
        prop_assert_eq!(again.to_json_bytes(), bytes.clone());
        // Nothing of the input is lost.
        let back: Value = serde_json::from_slice(&bytes).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn subsets_are_consistent(doc in dataset_strategy(), f in 0.01f64..=1.0, seed in any::<u64>()) {
        let ds = parse(&doc);
        let sub = sample_subset(&ds, f, seed).unwrap();
        let n = ds.images.len();
        let want = ((f * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
        prop_assert_eq!(sub.images.len(), want);
        prop_assert_eq!(&sample_subset(&ds, f, seed).unwrap(), &sub);
        // Original order, no invention.
        let pos: Vec<usize> = sub.images.iter().map(|im| ds.images.iter().position(|o| o == im).unwrap()).collect();
        prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
        for im in &sub.images {
            prop_assert_eq!(ann_multiset(&sub, im.id), ann_multiset(&ds, im.id));
        }
        let kept: usize = sub.images.iter().map(|im| ds.annotations.iter().filter(|a| a.image_id == im.id).count()).sum();
        prop_assert_eq!(sub.annotations.len(), kept);
    }

    #[test]
    fn merge_clones_annotation_multisets(doc in dataset_strategy(), copies in prop::collection::vec(0usize..3, 12)) {
        let ds = parse(&doc);
        let mut generated = Vec::new();
        for (i, im) in ds.images.iter().enumerate() {
            for k in 0..copies[i] {
                generated.push(GeneratedImage { source_image_id: im.id, file_name: format!("gen/{}_{k}.png", im.id) });
            }
        }
        let merged = merge_augmented(&ds, &generated).unwrap();
        merged.check_integrity().unwrap();
        prop_assert_eq!(&merged.images[..ds.images.len()], &ds.images[..]);
        prop_assert_eq!(&merged.annotations[..ds.annotations.len()], &ds.annotations[..]);
        prop_assert_eq!(merged.images.len(), ds.images.len() + generated.len());

        let mut expected_anns = ds.annotations.len();
        for (g, im) in generated.iter().zip(&merged.images[ds.images.len()..]) {
            let src = ds.image(g.source_image_id).unwrap();
            prop_assert_eq!((im.width, im.height), (src.width, src.height));
            prop_assert_eq!(&im.file_name, &g.file_name);
            prop_assert_eq!(ann_multiset(&merged, im.id), ann_multiset(&ds, src.id));
            expected_anns += ds.annotations.iter().filter(|a| a.image_id == src.id).count();
        }
        prop_assert_eq!(merged.annotations.len(), expected_anns);
    }

    #[test]
    fn uniform_plans_are_exact(ratios in prop::collection::vec(0.0f64..=1.0, 1..20), alpha in 0u32..4, seed in any::<u64>()) {
        let pairs: Vec<(u64, f64)> = ratios.iter().enumerate().map(|(i, &r)| (i as u64 + 1, r)).collect();
        let cfg = PolicyConfig { alpha, ..PolicyConfig::default() };
        let plan = build_sampling_plan(&pairs, &cfg, seed).unwrap();
        prop_assert_eq!(plan.len(), pairs.len() * alpha as usize);
        for (id, copies) in plan.copies_per_image() {
            prop_assert!(copies == alpha, "image {} got {}", id, copies);
        }
        let keys: std::collections::BTreeSet<_> = plan.entries.iter().map(|e| e.key()).collect();
        prop_assert_eq!(keys.len(), plan.len());
        let seeds: std::collections::BTreeSet<_> = plan.entries.iter().map(|e| e.seed).collect();
        prop_assert_eq!(seeds.len(), plan.len());
    }

    #[test]
    fn nonuniform_plans_keep_budget_and_skip_empty(ratios in prop::collection::vec(0.0f64..=1.0, 1..20), alpha in 1u32..4, seed in any::<u64>()) {
        prop_assume!(ratios.iter().any(|&r| r > 0.0));
        let pairs: Vec<(u64, f64)> = ratios.iter().enumerate().map(|(i, &r)| (i as u64 + 1, r)).collect();
        let cfg = PolicyConfig { alpha, sampling_mode: SamplingMode::Nonuniform, ..PolicyConfig::default() };
        let plan = build_sampling_plan(&pairs, &cfg, seed).unwrap();
        prop_assert_eq!(plan.len(), pairs.len() * alpha as usize);
        for e in &plan.entries {
            prop_assert!(ratios[e.source_image_id as usize - 1] > 0.0, "zero-ratio image drawn");
        }
        prop_assert_eq!(&build_sampling_plan(&pairs, &cfg, seed).unwrap(), &plan);
    }
}
