//! Comparison of generated frames with ground truth on the face region:
//! masked SSIM on color and per-pixel depth error in millimeters.

use image::GrayImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PairedDataset;
use crate::flm::Resolution;
use crate::gan::{GanError, GeneratorWeights};
use crate::recon::{postprocess, PostprocessConfig};
use crate::synth::RgbdFrame;

/// Depth errors at or below this count as accurate.
pub const DEPTH_TOLERANCE_MM: f64 = 5.0;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("no SSIM window is centered inside the mask")]
    NoWindows,
    #[error("resolution mismatch: {0} vs {1}")]
    Resolution(Resolution, Resolution),
    #[error("item index {0} out of range")]
    Index(usize),
    #[error(transparent)]
    Gan(#[from] GanError),
}

/// Face region of a reference frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FaceMask {
    pub resolution: Resolution,
    pub bits: Vec<bool>,
}

impl FaceMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn to_image(&self) -> GrayImage {
        let px = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.resolution.width, self.resolution.height, px).expect("mask size")
    }
}

/// Pixels carrying a face depth code.
pub fn face_mask(reference: &RgbdFrame) -> FaceMask {
    FaceMask {
        resolution: reference.resolution,
        bits: reference.depth.iter().map(|&d| d != reference.background_code).collect(),
    }
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable filter keeping only fully inside windows: output is
/// `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = (0..WINDOW).map(|i| k[i] * line[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over the three color channels and over all windows whose
/// centers lie in `mask`. Images are interleaved RGB of the mask's size.
pub fn masked_ssim(a: &[u8], b: &[u8], mask: &FaceMask) -> Result<f64, MetricsError> {
    let (w, h) = (mask.resolution.width as usize, mask.resolution.height as usize);
    assert!(a.len() == 3 * w * h && b.len() == 3 * w * h, "images must match the mask size");
    if mask.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    if w < WINDOW || h < WINDOW {
        return Err(MetricsError::NoWindows);
    }
    let half = WINDOW / 2;
    let (ow, oh) = (w - WINDOW + 1, h - WINDOW + 1);
    let centers: Vec<usize> =
        (0..ow * oh).filter(|&i| mask.bits[(i / ow + half) * w + i % ow + half]).collect();
    if centers.is_empty() {
        return Err(MetricsError::NoWindows);
    }
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let pa: Vec<f64> = (0..w * h).map(|i| a[3 * i + c] as f64).collect();
        let pb: Vec<f64> = (0..w * h).map(|i| b[3 * i + c] as f64).collect();
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
        let mu_a = filter_valid(&pa, w, h, &k);
        let mu_b = filter_valid(&pb, w, h, &k);
        let aa = filter_valid(&prod(&pa, &pa), w, h, &k);
        let bb = filter_valid(&prod(&pb, &pb), w, h, &k);
        let ab = filter_valid(&prod(&pa, &pb), w, h, &k);
        for &i in &centers {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            total += ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
    }
    Ok(total / (3 * centers.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub median_mm: f64,
    pub mean_mm: f64,
    /// Share of masked pixels within [`DEPTH_TOLERANCE_MM`].
    pub fraction_within_tolerance: f64,
    pub pixels: usize,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn code_mm(frame: &RgbdFrame, code: u8) -> f64 {
    let (near, far) = (frame.depth_range.0 as f64, frame.depth_range.1 as f64);
    near + code as f64 * (far - near) / 255.0
}

/// Absolute depth differences over the mask, from raw codes without
/// smoothing. Each frame's codes are converted with its own depth range.
pub fn depth_stats(generated: &RgbdFrame, reference: &RgbdFrame, mask: &FaceMask) -> Result<DepthStats, MetricsError> {
    if generated.resolution != reference.resolution {
        return Err(MetricsError::Resolution(generated.resolution, reference.resolution));
    }
    if mask.is_empty() {
        return Err(MetricsError::EmptyMask);
    }
    let mut diffs: Vec<f64> = (0..mask.bits.len())
        .filter(|&i| mask.bits[i])
        .map(|i| (code_mm(generated, generated.depth[i]) - code_mm(reference, reference.depth[i])).abs())
        .collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let within = diffs.iter().filter(|&&d| d <= DEPTH_TOLERANCE_MM + 1e-9).count() as f64 / n as f64;
    Ok(DepthStats { median_mm: median(&mut diffs), mean_mm: mean, fraction_within_tolerance: within, pixels: n })
}

/// Per-pixel color difference; darker means larger.
pub fn difference_image(a: &RgbdFrame, b: &RgbdFrame) -> GrayImage {
    let px = a
        .rgb
        .chunks_exact(3)
        .zip(b.rgb.chunks_exact(3))
        .map(|(p, q)| {
            let d: u32 = p.iter().zip(q).map(|(x, y)| x.abs_diff(*y) as u32).sum();
            255 - (d / 3).min(255) as u8
        })
        .collect();
    GrayImage::from_raw(a.resolution.width, a.resolution.height, px).expect("frame size")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemEval {
    pub index: usize,
    pub ssim: f64,
    pub depth: DepthStats,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub item_count: usize,
    pub mean_ssim: f64,
    /// Median over items of the per-item median depth error.
    pub median_depth_mm: f64,
    pub mean_depth_mm: f64,
    pub mean_fraction_within_tolerance: f64,
    pub config_hash: String,
    pub dataset_hash: String,
    pub postprocess: PostprocessConfig,
    pub items: Vec<ItemEval>,
}

pub struct Evaluation {
    pub report: EvalReport,
    /// One per item, in report order.
    pub differences: Vec<GrayImage>,
}

/// Generates each listed item from its landmark map, cleans the depth,
/// and compares against the ground truth on the reference face mask.
pub fn evaluate(
    weights: &GeneratorWeights,
    dataset: &PairedDataset,
    indices: &[usize],
    postproc: PostprocessConfig,
) -> Result<Evaluation, MetricsError> {
    if weights.resolution() != dataset.resolution {
        return Err(MetricsError::Resolution(weights.resolution(), dataset.resolution));
    }
    let mut generator = weights.generator()?;
    let mut items = Vec::with_capacity(indices.len());
    let mut differences = Vec::with_capacity(indices.len());
    for &index in indices {
        let item = dataset.items.get(index).ok_or(MetricsError::Index(index))?;
        let generated = generator.generate(&item.map)?;
        let cleaned = postprocess(&generated, postproc.erode_radius, (postproc.clip_near, postproc.clip_far));
        let mask = face_mask(&item.frame);
        let ssim = masked_ssim(&cleaned.rgb, &item.frame.rgb, &mask)?;
        let depth = depth_stats(&cleaned, &item.frame, &mask)?;
        differences.push(difference_image(&cleaned, &item.frame));
        items.push(ItemEval { index, ssim, depth });
    }
    let n = items.len().max(1) as f64;
    let mut medians: Vec<f64> = items.iter().map(|i| i.depth.median_mm).collect();
    let report = EvalReport {
        item_count: items.len(),
        mean_ssim: items.iter().map(|i| i.ssim).sum::<f64>() / n,
        median_depth_mm: if medians.is_empty() { 0.0 } else { median(&mut medians) },
        mean_depth_mm: items.iter().map(|i| i.depth.mean_mm).sum::<f64>() / n,
        mean_fraction_within_tolerance: items.iter().map(|i| i.depth.fraction_within_tolerance).sum::<f64>() / n,
        config_hash: weights.provenance.config_hash.clone(),
        dataset_hash: dataset.content_hash(),
        postprocess: postproc,
        items,
    };
    Ok(Evaluation { report, differences })
}

#[cfg(test)]
mod tests;
