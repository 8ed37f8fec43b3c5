use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::flm::{bounds_from_dataset, IRIS_LEFT};
use crate::synth::{landmarks_of, ExpressionParams, IdentitySpec};
use crate::tracking::{gaze_source, EyeControls};

fn lower_subset() -> Vec<usize> {
    (27..36).chain(48..68).chain(0..17).collect()
}

/// Oracle reports for `params`, each source displaced by its own offset as
/// if its camera sat slightly off.
fn reports(identity: &IdentitySpec, params: &ExpressionParams, skew: f32, ts: u64) -> ReportSet {
    let flm = landmarks_of(identity, params).unwrap();
    let shift = |k: f32| move |i: usize| Point::new(flm.point(i).x + skew * k, flm.point(i).y - skew * 0.5 * k);
    let lower = lower_subset().into_iter().map(|i| (i, shift(1.0)(i))).collect();
    let brow_l = (17..22).map(|i| (i, shift(2.0)(i))).collect();
    let brow_r = (22..27).map(|i| (i, shift(-1.0)(i))).collect();
    let [eye_l, eye_r] = gaze_source(&EyeControls::from(params), &landmarks_of(identity, &ExpressionParams::NEUTRAL).unwrap()).unwrap();
    ReportSet::from_reports([
        PartialLandmarkReport::new(Source::LowerFace, lower).at(ts),
        PartialLandmarkReport::new(Source::BrowLeft, brow_l).at(ts),
        PartialLandmarkReport::new(Source::BrowRight, brow_r).at(ts),
        eye_l.at(ts),
        eye_r.at(ts),
    ])
}

fn setup(seed: u64) -> (IdentitySpec, CalibrationState) {
    let identity = IdentitySpec::from_seed(seed);
    let mut sets = vec![landmarks_of(&identity, &ExpressionParams::NEUTRAL).unwrap()];
    for v in [-1.0f32, 1.0] {
        sets.push(
            landmarks_of(
                &identity,
                &ExpressionParams { mouth_open: v.max(0.0), smile: v, brow_raise_left: v, brow_raise_right: v, jaw_shift: v, ..ExpressionParams::NEUTRAL },
            )
            .unwrap(),
        );
    }
    let bounds = bounds_from_dataset(sets.iter()).unwrap();
    (identity, CalibrationState::new(&sets[0], &bounds))
}

#[test]
fn merging_requires_calibration() {
    let (identity, calib) = setup(1);
    let r = reports(&identity, &ExpressionParams::NEUTRAL, 0.0, 0);
    assert_eq!(MergerState::default().merge_step(&r, &calib, 0), Err(MergeError::NotCalibrated));
    assert_eq!(calibrate(&[], &calib), Err(MergeError::NoFrames));
}

#[test]
fn exact_neutral_reports_give_zero_offsets() {
    let (identity, calib) = setup(1);
    let flm = landmarks_of(&identity, &ExpressionParams::NEUTRAL).unwrap();
    let r = ReportSet::from_reports([PartialLandmarkReport::new(Source::LowerFace, (0..70).map(|i| (i, flm.point(i))).collect())]);
    let c = calibrate(&vec![r; CALIBRATION_FRAMES], &calib).unwrap();
    assert!(c.calibrated);
    assert_eq!(c.frames_averaged, CALIBRATION_FRAMES);
    assert!(c.offsets.iter().all(|o| o.x == 0.0 && o.y == 0.0));
}

#[test]
fn uniform_shift_gives_the_opposite_offset() {
    let (identity, calib) = setup(2);
    let flm = landmarks_of(&identity, &ExpressionParams::NEUTRAL).unwrap();
    let pts = (0..70).map(|i| (i, Point::new(flm.point(i).x + 5.0, flm.point(i).y - 3.0))).collect();
    let c = calibrate(&[ReportSet::from_reports([PartialLandmarkReport::new(Source::LowerFace, pts)])], &calib).unwrap();
    for o in &c.offsets {
        assert!((o.x + 5.0).abs() < 1e-4 && (o.y - 3.0).abs() < 1e-4, "{o:?}");
    }
}

#[test]
fn calibration_fixed_point_is_exact() {
    for seed in 0..10 {
        let (identity, calib) = setup(seed);
        let neutral = reports(&identity, &ExpressionParams::NEUTRAL, 3.7, 0);
        let c = calibrate(&vec![neutral.clone(); CALIBRATION_FRAMES], &calib).unwrap();
        let out = MergerState::default().merge_step(&neutral, &c, 0).unwrap().output;
        assert_eq!(out.rounded(), c.neutral_reference.rounded(), "seed {seed}");
    }
}

#[test]
fn noisy_calibration_matches_the_noise_free_offsets() {
    let (identity, calib) = setup(3);
    let clean = reports(&identity, &ExpressionParams::NEUTRAL, 2.0, 0);
    let exact = calibrate(&[clean.clone()], &calib).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut noise_sum = vec![(0.0f64, 0.0f64); 70];
    let sets: Vec<ReportSet> = (0..CALIBRATION_FRAMES)
        .map(|_| {
            let mut set = ReportSet::new();
            for s in Source::ALL {
                let mut r = clean.get(s).unwrap().clone();
                for (i, p) in &mut r.points {
                    let (dx, dy) = (rng.random_range(-1.0f32..=1.0), rng.random_range(-1.0f32..=1.0));
                    p.x += dx;
                    p.y += dy;
                    noise_sum[*i].0 += dx as f64;
                    noise_sum[*i].1 += dy as f64;
                }
                set.insert(r);
            }
            set
        })
        .collect();
    let noisy = calibrate(&sets, &calib).unwrap();
    for i in 0..70 {
        let (e, n) = (exact.offsets[i], noisy.offsets[i]);
        assert!((e.x - n.x).abs() <= 0.5 && (e.y - n.y).abs() <= 0.5, "landmark {i}");
        // analytically the offset moves by minus the mean noise
        let mean = (noise_sum[i].0 / 30.0, noise_sum[i].1 / 30.0);
        assert!(((n.x - e.x) as f64 + mean.0).abs() < 1e-3 && ((n.y - e.y) as f64 + mean.1).abs() < 1e-3);
    }
}

#[test]
fn a_source_lost_throughout_calibration_is_named() {
    let (identity, calib) = setup(1);
    let mut set = reports(&identity, &ExpressionParams::NEUTRAL, 0.0, 0);
    set.insert(PartialLandmarkReport::lost(Source::BrowRight));
    assert_eq!(calibrate(&[set.clone(), set], &calib), Err(MergeError::SourceLost(Source::BrowRight)));
}

#[test]
fn landmark_48_is_clamped_to_its_bound() {
    let (identity, calib) = setup(1);
    let neutral = reports(&identity, &ExpressionParams::NEUTRAL, 0.0, 0);
    let c = calibrate(&[neutral.clone()], &calib).unwrap();
    let mut pushed = neutral.clone();
    let mut lower = pushed.remove(Source::LowerFace).unwrap();
    lower.points.iter_mut().find(|(i, _)| *i == 48).unwrap().1.x = 500.0;
    pushed.insert(lower);
    let out = MergerState::default().merge_step(&pushed, &c, 0).unwrap();
    assert_eq!(out.output.point(48).x, c.bounds.get(48).x_max);
    assert_eq!(out.offset.point(48).x, 500.0);
}

#[test]
fn brows_take_precedence_over_the_lower_face() {
    let (identity, calib) = setup(1);
    let mut set = reports(&identity, &ExpressionParams::NEUTRAL, 0.0, 0);
    let c = calibrate(&[set.clone()], &calib).unwrap();
    let mut lower = set.remove(Source::LowerFace).unwrap();
    lower.points.push((19, Point::new(0.0, 0.0)));
    set.insert(lower);
    let out = MergerState::default().merge_step(&set, &c, 0).unwrap();
    assert_eq!(out.uncalibrated.point(19), set.get(Source::BrowLeft).unwrap().point(19).unwrap());
}

#[test]
fn dropped_lower_face_freezes_the_mouth() {
    let (identity, calib) = setup(4);
    let c = calibrate(&[reports(&identity, &ExpressionParams::NEUTRAL, 1.0, 0)], &calib).unwrap();
    let mut merger = MergerState::default();
    let frame = |k: u64, v: f32| {
        let p = ExpressionParams { mouth_open: v, brow_raise_left: v, ..ExpressionParams::NEUTRAL };
        reports(&identity, &p, 1.0, k * 33_333)
    };
    let first = merger.merge_step(&frame(0, 0.2), &c, 0).unwrap().output;
    for k in 1..=2 {
        let mut set = frame(k, 0.2 + 0.3 * k as f32);
        set.remove(Source::LowerFace);
        let out = merger.merge_step(&set, &c, k * 33_333).unwrap().output;
        for i in 48..68 {
            assert_eq!(out.point(i), first.point(i), "mouth landmark {i} frame {k}");
        }
        assert!(out.point(19).y < first.point(19).y, "brow keeps moving");
        assert_eq!(merger.status(k * 33_333)[Source::LowerFace.index()], SourceStatus::Fresh);
    }
    // silent far beyond the deadline: back to neutral
    let late = 2 * FALLBACK_FACTOR * DEFAULT_DEADLINE_MS * 1000;
    let mut set = frame(0, 0.0);
    set.remove(Source::LowerFace);
    for s in Source::ALL {
        if let Some(mut r) = set.remove(s) {
            r.timestamp_us = late;
            set.insert(r);
        }
    }
    let out = merger.merge_step(&set, &c, late).unwrap().output;
    assert_eq!(merger.status(late)[Source::LowerFace.index()], SourceStatus::Fallback);
    for i in 48..68 {
        assert_eq!(out.point(i), c.neutral_reference.point(i));
    }
}

#[test]
fn lost_reports_hold_the_last_value() {
    let (identity, calib) = setup(5);
    let neutral = reports(&identity, &ExpressionParams::NEUTRAL, 0.0, 0);
    let c = calibrate(&[neutral.clone()], &calib).unwrap();
    let mut merger = MergerState::default();
    let first = merger.merge_step(&neutral, &c, 0).unwrap().output;
    let mut set = neutral.clone();
    set.insert(PartialLandmarkReport::lost(Source::EyeLeft).at(10));
    let out = merger.merge_step(&set, &c, 10).unwrap().output;
    assert_eq!(out.point(IRIS_LEFT), first.point(IRIS_LEFT));
}

#[test]
fn out_of_range_indices_are_rejected() {
    let (_, calib) = setup(1);
    let set = ReportSet::from_reports([PartialLandmarkReport::new(Source::LowerFace, vec![(70, Point::new(1.0, 1.0))])]);
    assert_eq!(calibrate(&[set], &calib), Err(MergeError::Index(70)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offsets_are_exactly_additive(seed in 0u64..20, skew in -6.0f32..6.0, mouth in 0.0f32..=1.0, smile in -1.0f32..=1.0) {
        let (identity, calib) = setup(seed);
        let c = calibrate(&[reports(&identity, &ExpressionParams::NEUTRAL, skew, 0)], &calib).unwrap();
        let p = ExpressionParams { mouth_open: mouth, smile, ..ExpressionParams::NEUTRAL };
        let out = MergerState::default().merge_step(&reports(&identity, &p, skew, 0), &c, 0).unwrap();
        for i in 0..70 {
            let (u, o, d) = (out.uncalibrated.point(i), out.offset.point(i), c.offsets[i]);
            prop_assert_eq!(o.x, u.x + d.x);
            prop_assert_eq!(o.y, u.y + d.y);
        }
    }

    #[test]
    fn fuzzed_reports_stay_in_bounds(seed in 0u64..1000) {
        let (identity, calib) = setup(seed % 7);
        let c = calibrate(&[reports(&identity, &ExpressionParams::NEUTRAL, 1.0, 0)], &calib).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ReportSet::new();
        for s in Source::ALL {
            if rng.random_bool(0.2) {
                continue;
            }
            let n = rng.random_range(0..30);
            let pts = (0..n).map(|_| (rng.random_range(0..70), Point::new(rng.random_range(-1e4..1e4), rng.random_range(-1e4..1e4)))).collect();
            set.insert(PartialLandmarkReport::new(s, pts));
        }
        let out = MergerState::default().merge_step(&set, &c, 0).unwrap().output;
        for i in 0..70 {
            prop_assert!(c.bounds.get(i).contains(out.point(i)));
        }
    }
}
