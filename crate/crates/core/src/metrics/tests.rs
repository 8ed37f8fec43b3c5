use super::*;
use crate::dataset::{build_capture_script, build_paired_dataset, CaptureConfig};
use crate::gan::{train_gan, GanConfig};
use crate::synth::{render_face_at, ExpressionParams, FaceGeometry, IdentitySpec, BACKGROUND_CODE};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const R64: Resolution = Resolution { width: 64, height: 64 };

fn face(seed: u64, res: Resolution) -> RgbdFrame {
    render_face_at(&IdentitySpec::from_seed(seed), &ExpressionParams::NEUTRAL, res).unwrap()
}

/// Direct per-window evaluation of the SSIM formula.
fn brute_ssim(a: &[u8], b: &[u8], mask: &FaceMask) -> f64 {
    let (w, h) = (mask.resolution.width as usize, mask.resolution.height as usize);
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum::<f64>().powi(2);
    let (mut total, mut count) = (0.0, 0usize);
    for cy in 5..h - 5 {
        for cx in 5..w - 5 {
            if !mask.bits[cy * w + cx] {
                continue;
            }
            count += 1;
            for c in 0..3 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wt = g[dy] * g[dx] / gs;
                        let i = 3 * ((cy + dy - 5) * w + cx + dx - 5) + c;
                        let (x, y) = (a[i] as f64, b[i] as f64);
                        ma += wt * x;
                        mb += wt * y;
                        aa += wt * x * x;
                        bb += wt * y * y;
                        ab += wt * x * y;
                    }
                }
                let (c1, c2) = (6.5025, 58.5225);
                total += (2.0 * ma * mb + c1) * (2.0 * (ab - ma * mb) + c2)
                    / ((ma * ma + mb * mb + c1) * (aa - ma * ma + bb - mb * mb + c2));
            }
        }
    }
    total / (3 * count) as f64
}

#[test]
fn background_frame_gives_empty_mask() {
    let f = RgbdFrame::blank(R64);
    let mask = face_mask(&f);
    assert!(mask.is_empty());
    assert!(matches!(masked_ssim(&f.rgb, &f.rgb, &mask), Err(MetricsError::EmptyMask)));
    assert!(matches!(depth_stats(&f, &f, &mask), Err(MetricsError::EmptyMask)));
}

#[test]
fn neutral_mask_matches_analytic_area() {
    let id = IdentitySpec::from_seed(4);
    let frame = face(4, Resolution::REFERENCE);
    let mask = face_mask(&frame);
    let g = FaceGeometry::new(&id, &ExpressionParams::NEUTRAL);
    let analytic = std::f64::consts::PI * (g.half_width * g.half_height) as f64;
    assert!((mask.count() as f64 / analytic - 1.0).abs() < 0.02);
    assert!(mask.bits.iter().zip(&frame.depth).all(|(&m, &d)| !m || d != BACKGROUND_CODE));
}

#[test]
fn ssim_identity_inversion_and_symmetry() {
    let f = face(1, R64);
    let mask = face_mask(&f);
    assert_eq!(masked_ssim(&f.rgb, &f.rgb, &mask).unwrap(), 1.0);
    let inverted: Vec<u8> = f.rgb.iter().map(|v| 255 - v).collect();
    assert!(masked_ssim(&f.rgb, &inverted, &mask).unwrap() < 0.2);
    let other = face(9, R64);
    assert_eq!(masked_ssim(&f.rgb, &other.rgb, &mask).unwrap(), masked_ssim(&other.rgb, &f.rgb, &mask).unwrap());
}

#[test]
fn ssim_matches_direct_window_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = face(1, R64);
    let b: Vec<u8> = a.rgb.iter().map(|&v| v.saturating_add(rng.random_range(0..40))).collect();
    let mask = face_mask(&a);
    let fast = masked_ssim(&a.rgb, &b, &mask).unwrap();
    assert!((fast - brute_ssim(&a.rgb, &b, &mask)).abs() < 1e-9);
}

#[test]
fn mask_only_at_the_border_has_no_windows() {
    let f = face(1, R64);
    let mut bits = vec![false; 64 * 64];
    bits[0] = true;
    let mask = FaceMask { resolution: R64, bits };
    assert!(matches!(masked_ssim(&f.rgb, &f.rgb, &mask), Err(MetricsError::NoWindows)));
}

fn shifted(f: &RgbdFrame, k: i32) -> RgbdFrame {
    let mut g = f.clone();
    for d in g.depth.iter_mut().filter(|d| **d != BACKGROUND_CODE) {
        *d = (*d as i32 + k) as u8;
    }
    g
}

#[test]
fn depth_shift_examples() {
    let f = face(1, R64);
    let mask = face_mask(&f);
    let same = depth_stats(&f, &f, &mask).unwrap();
    assert_eq!((same.median_mm, same.fraction_within_tolerance), (0.0, 1.0));
    let two = depth_stats(&f, &shifted(&f, 2), &mask).unwrap();
    assert!((two.median_mm - 600.0 / 255.0).abs() < 1e-9);
    assert_eq!(two.fraction_within_tolerance, 1.0);
    let six = depth_stats(&f, &shifted(&f, 6), &mask).unwrap();
    assert_eq!(six.fraction_within_tolerance, 0.0);
}

#[test]
fn difference_image_is_darker_where_frames_differ() {
    let a = face(1, R64);
    let mut b = a.clone();
    b.rgb[0..3].copy_from_slice(&[a.rgb[0] ^ 0xFF, a.rgb[1] ^ 0xFF, a.rgb[2] ^ 0xFF]);
    let d = difference_image(&a, &b);
    assert!(d.get_pixel(0, 0).0[0] < 10);
    assert_eq!(d.get_pixel(5, 5).0[0], 255);
}

#[test]
fn evaluation_report_is_deterministic_and_complete() {
    let config = CaptureConfig { repeats: 1, sentences: 0, frames_per_sentence: 0, talk_frames: 0, seed: 1 };
    let data = build_paired_dataset(&build_capture_script(&config), &IdentitySpec::from_seed(1), Resolution::square(32)).unwrap();
    let gan = GanConfig { resolution: 32, ngf: 8, ndf: 8, epochs_total: 1, epochs_const_lr: 1, ..GanConfig::full() };
    let (weights, _) = train_gan(&data.subset(&data.training_indices()), gan).unwrap();
    let post = PostprocessConfig::for_face_codes(weights.face_codes);
    let split = data.holdout_indices();
    let a = evaluate(&weights, &data, &split, post).unwrap();
    let b = evaluate(&weights, &data, &split, post).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.report.item_count, split.len());
    assert_eq!(a.differences.len(), split.len());
    assert!((0.0..=1.0).contains(&a.report.mean_fraction_within_tolerance));
    assert!(matches!(evaluate(&weights, &data, &[999], post), Err(MetricsError::Index(999))));
}

proptest! {
    #[test]
    fn depth_stats_translation_consistent(seed in 0u64..50, k in -8i32..=8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut f = RgbdFrame::blank(Resolution::square(16));
        f.depth.iter_mut().for_each(|d| *d = rng.random_range(20..230));
        let mask = face_mask(&f);
        let stats = depth_stats(&f, &shifted(&f, k), &mask).unwrap();
        prop_assert!((stats.median_mm - k.abs() as f64 * 300.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn ssim_of_identical_images_is_one(seed in 0u64..50) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img: Vec<u8> = (0..3 * 24 * 24).map(|_| rng.random()).collect();
        let bits: Vec<bool> = (0..24 * 24).map(|i| i % 24 >= 5 && i % 24 < 19 && (5..19).contains(&(i / 24)) && rng.random_bool(0.5)).collect();
        let mask = FaceMask { resolution: Resolution::square(24), bits };
        prop_assume!(!mask.is_empty());
        prop_assert_eq!(masked_ssim(&img, &img, &mask).unwrap(), 1.0);
    }
}
