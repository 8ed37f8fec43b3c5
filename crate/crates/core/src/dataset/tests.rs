use super::*;
use crate::flm::{clamp_landmarks, Point, MIRROR};
use crate::synth::{landmarks_of, ExpressionParams};
use proptest::prelude::*;

fn tiny_config(seed: u64) -> CaptureConfig {
    CaptureConfig { repeats: 1, sentences: 1, frames_per_sentence: 3, talk_frames: 4, seed }
}

#[test]
fn scripts_are_deterministic() {
    let c = CaptureConfig { repeats: 2, sentences: 20, frames_per_sentence: 16, talk_frames: 200, seed: 7 };
    assert_eq!(build_capture_script(&c), build_capture_script(&c));
    assert_eq!(build_capture_script(&c).frames.len(), c.total_frames());
    let other = CaptureConfig { seed: 8, ..c.clone() };
    assert_ne!(build_capture_script(&c).frames, build_capture_script(&other).frames);
}

#[test]
fn default_script_has_about_600_frames() {
    let script = build_capture_script(&CaptureConfig::default());
    assert_eq!(script.frames.len(), 600);
    assert_eq!(script.frames[script.neutral_index].params, ExpressionParams::NEUTRAL);
    for f in &script.frames {
        f.params.validate().unwrap();
    }
}

#[test]
fn empty_config_keeps_the_neutral_frame() {
    let c = CaptureConfig { repeats: 0, sentences: 0, frames_per_sentence: 16, talk_frames: 0, seed: 1 };
    let script = build_capture_script(&c);
    assert_eq!(script.frames.len(), 1);
    assert_eq!(script.frames[0].params, ExpressionParams::NEUTRAL);
}

#[test]
fn expression_table_is_distinct() {
    let table = expression_table();
    for i in 0..table.len() {
        for j in 0..i {
            assert_ne!(table[i], table[j], "poses {i} and {j}");
        }
    }
}

#[test]
fn one_frame_dataset_is_the_neutral_raster() {
    let c = CaptureConfig { repeats: 0, sentences: 0, frames_per_sentence: 0, talk_frames: 0, seed: 0 };
    let identity = IdentitySpec::from_seed(3);
    let d = build_paired_dataset(&build_capture_script(&c), &identity, Resolution::REFERENCE).unwrap();
    assert_eq!(d.len(), 1);
    let expected = rasterize(&landmarks_of(&identity, &ExpressionParams::NEUTRAL).unwrap());
    assert_eq!(d.items[0].map, expected);
}

#[test]
fn paired_dataset_invariants() {
    let identity = IdentitySpec::from_seed(4);
    let d = build_paired_dataset(&build_capture_script(&tiny_config(2)), &identity, Resolution::square(64)).unwrap();
    assert_eq!(d.len(), tiny_config(2).total_frames());
    assert_eq!(d.bounds, bounds_from_dataset(d.items.iter().map(|i| &i.landmarks)).unwrap());
    for item in &d.items {
        assert_eq!(item.map, rasterize(&item.landmarks));
        assert_eq!(clamp_landmarks(&item.landmarks, &d.bounds), item.landmarks);
        assert_eq!(item.frame.resolution, Resolution::square(64));
    }
    assert_eq!(d.holdout_indices().len() + d.training_indices().len(), d.len());
}

#[test]
fn paired_round_trip_and_load_errors() {
    let identity = IdentitySpec::from_seed(5);
    let c = CaptureConfig { repeats: 0, sentences: 1, frames_per_sentence: 2, talk_frames: 0, seed: 0 };
    let d = build_paired_dataset(&build_capture_script(&c), &identity, Resolution::square(64)).unwrap();
    assert_eq!(d.len(), 3);
    let dir = tempfile::tempdir().unwrap();
    save_paired(&d, dir.path()).unwrap();
    assert_eq!(load_paired(dir.path()).unwrap(), d);

    // deleting an image names it
    std::fs::remove_file(dir.path().join("depth_000001.png")).unwrap();
    let err = load_paired(dir.path()).unwrap_err().to_string();
    assert!(err.contains("depth_000001.png"), "{err}");

    // a checksum-valid file of the wrong size is a shape error
    save_paired(&d, dir.path()).unwrap();
    let manifest_path = dir.path().join(MANIFEST);
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&manifest_path).unwrap()).unwrap();
    manifest["resolution"] = serde_json::json!({"width": 128, "height": 128});
    std::fs::write(&manifest_path, manifest.to_string()).unwrap();
    let err = load_paired(dir.path()).unwrap_err();
    assert!(matches!(err, DatasetError::Shape { .. } | DatasetError::Format { .. }), "{err}");

    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(load_paired(empty.path()), Err(DatasetError::MissingFile { .. })));
}

#[test]
fn corrupted_image_fails_checksum() {
    let identity = IdentitySpec::from_seed(5);
    let c = CaptureConfig { repeats: 0, sentences: 0, frames_per_sentence: 0, talk_frames: 0, seed: 0 };
    let d = build_paired_dataset(&build_capture_script(&c), &identity, Resolution::square(32)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_paired(&d, dir.path()).unwrap();
    let path = dir.path().join("rgb_000000.png");
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    match load_paired(dir.path()) {
        Err(DatasetError::Checksum { path }) => assert!(path.ends_with("rgb_000000.png")),
        other => panic!("expected checksum error, got {other:?}"),
    }
}

#[test]
fn subset_is_mirror_closed_and_covers_the_mouth() {
    for seed in 0..10 {
        let subset = lowerface_subset(&IdentitySpec::from_seed(seed));
        for &i in &subset {
            assert!(subset.contains(&MIRROR[i]));
        }
        for i in 48..68 {
            assert!(subset.contains(&i), "seed {seed} misses {i}");
        }
        assert!(!subset.contains(&17) && !subset.contains(&68));
    }
}

#[test]
fn lowerface_split_and_sizes() {
    let identity = IdentitySpec::from_seed(6);
    let script = build_capture_script(&tiny_config(3));
    let config = AugmentConfig { target: 100, ..AugmentConfig::default() };
    let d = build_lowerface_dataset(&script, &identity, &config).unwrap();
    assert_eq!(d.samples.len(), 100);
    assert_eq!((d.train.len(), d.test.len()), (70, 30));
    let mut all: Vec<usize> = d.train.iter().chain(&d.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..100).collect::<Vec<_>>());
    for s in &d.samples {
        assert_eq!(s.label.len(), d.subset_indices.len());
        assert_eq!(s.image.dimensions(), (CROP_SIZE, CROP_SIZE));
    }
    // unaugmented first pass: labels inside the crop
    for s in &d.samples[..script.frames.len()] {
        assert_eq!(s.augment, AugmentParams::IDENTITY);
        for p in &s.label {
            assert!((0.0..CROP_SIZE as f32).contains(&p.x) && (0.0..CROP_SIZE as f32).contains(&p.y));
        }
    }
    let again = build_lowerface_dataset(&script, &identity, &config).unwrap();
    assert_eq!(again.train, d.train);

    let small = AugmentConfig { target: 5, ..config };
    assert!(matches!(
        build_lowerface_dataset(&script, &identity, &small),
        Err(DatasetError::TargetTooSmall { .. })
    ));
}

#[test]
fn ten_thousand_samples_split_seventy_thirty() {
    let (train, test) = lowerface::split(10_000, 0.7, 42);
    assert_eq!((train.len(), test.len()), (7000, 3000));
}

#[test]
fn lowerface_round_trip() {
    let identity = IdentitySpec::from_seed(6);
    let script = build_capture_script(&CaptureConfig { repeats: 0, sentences: 1, frames_per_sentence: 2, talk_frames: 0, seed: 0 });
    let d = build_lowerface_dataset(&script, &identity, &AugmentConfig { target: 6, ..AugmentConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_lowerface(&d, dir.path()).unwrap();
    assert_eq!(load_lowerface(dir.path()).unwrap(), d);
}

#[test]
fn unaugmented_crop_shows_the_labelled_mouth() {
    // mouth interior is darker than the surrounding skin at the label position
    let identity = IdentitySpec::canonical();
    let mut p = ExpressionParams::NEUTRAL;
    p.mouth_open = 1.0;
    let views = crate::synth::render_hmc_views(&identity, &p).unwrap();
    let crop = crop_lower_view(&views.lower_face);
    let flm = landmarks_of(&identity, &p).unwrap();
    let to_crop = reference_to_crop();
    let upper = to_crop.apply(flm.point(62));
    let lower = to_crop.apply(flm.point(66));
    let mid = Point::new(0.5 * (upper.x + lower.x), 0.5 * (upper.y + lower.y));
    let cheek = to_crop.apply(Point::new(flm.point(48).x - 12.0, flm.point(48).y));
    let at = |q: Point| crop.get_pixel(q.x.round() as u32, q.y.round() as u32).0[0];
    assert!(at(mid) + 40 < at(cheek), "cavity {} vs cheek {}", at(mid), at(cheek));
}

fn arb_augment() -> impl Strategy<Value = AugmentParams> {
    (any::<bool>(), -8.0f32..8.0, -8.0f32..8.0, -10.0f32..10.0).prop_map(|(flip, dx, dy, angle_deg)| AugmentParams {
        flip,
        dx,
        dy,
        angle_deg,
    })
}

proptest! {
    #[test]
    fn augmentation_labels_invert(aug in arb_augment(), seed in 0u64..20) {
        let identity = IdentitySpec::from_seed(seed);
        let subset = lowerface_subset(&identity);
        let flm = landmarks_of(&identity, &ExpressionParams::NEUTRAL).unwrap();
        let to_crop = reference_to_crop();
        let labels: Vec<Point> = subset.iter().map(|&i| to_crop.apply(flm.point(i))).collect();
        let back = aug.invert_labels(&aug.apply_to_labels(&labels, &subset), &subset);
        for (a, b) in labels.iter().zip(&back) {
            prop_assert!(a.distance(*b) < 0.5);
        }
    }

    #[test]
    fn double_flip_restores_label_order(dx in -8.0f32..8.0) {
        let subset = lowerface_subset(&IdentitySpec::canonical());
        let labels: Vec<Point> = (0..subset.len()).map(|k| Point::new(k as f32 + dx, 2.0 * k as f32)).collect();
        let flip = AugmentParams { flip: true, ..AugmentParams::IDENTITY };
        let twice = flip.apply_to_labels(&flip.apply_to_labels(&labels, &subset), &subset);
        for (a, b) in labels.iter().zip(&twice) {
            prop_assert!(a.distance(*b) < 1e-4);
        }
    }

    #[test]
    fn identity_augmentation_keeps_labels(x in 0.0f32..128.0, y in 0.0f32..128.0) {
        let subset = lowerface_subset(&IdentitySpec::canonical());
        let labels = vec![Point::new(x, y); subset.len()];
        prop_assert_eq!(AugmentParams::IDENTITY.apply_to_labels(&labels, &subset), labels);
    }
}
