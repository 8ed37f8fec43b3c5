//! Eyebrow tracking by thresholding: the brow is the first dark band below
//! the forehead in each eyebrow camera image.

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::flm::{Point, Resolution, BROW_LEFT, BROW_RIGHT};
use crate::synth::{EYE_VIEW_SCALE, EYE_VIEW_SIZE};

use super::{PartialLandmarkReport, Source, TrackingError};

/// Image columns searched for the brow edge.
pub const DEFAULT_BROW_BAND: (u32, u32) = (24, 104);

/// 1 where the pixel is darker than `threshold` (brow), else 0.
pub fn binarize(img: &GrayImage, threshold: u8) -> GrayImage {
    let px = img.as_raw().iter().map(|&v| u8::from(v < threshold)).collect();
    GrayImage::from_raw(img.width(), img.height(), px).expect("same size")
}

/// Otsu's threshold over the search band, clamped to `[1, 254]`: a
/// starting point for the per-person setting.
pub fn otsu_threshold(img: &GrayImage, band: (u32, u32)) -> u8 {
    let mut hist = [0u64; 256];
    for y in 0..img.height() {
        for x in band.0..band.1.min(img.width()) {
            hist[img.get_pixel(x, y).0[0] as usize] += 1;
        }
    }
    let total: u64 = hist.iter().sum();
    let sum_all: f64 = hist.iter().enumerate().map(|(v, &n)| v as f64 * n as f64).sum();
    let (mut w0, mut sum0, mut best, mut best_t) = (0u64, 0.0f64, -1.0f64, 128usize);
    for t in 0..256 {
        // class 0 is every value below t
        if w0 > 0 && w0 < total {
            let m0 = sum0 / w0 as f64;
            let m1 = (sum_all - sum0) / (total - w0) as f64;
            let between = w0 as f64 * (total - w0) as f64 * (m0 - m1).powi(2);
            if between > best {
                best = between;
                best_t = t;
            }
        }
        w0 += hist[t];
        sum0 += t as f64 * hist[t] as f64;
    }
    best_t.clamp(1, 254) as u8
}

/// Per-person brow tracker settings for one side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrowTrackState {
    /// 0 is image-left (landmarks 17-21), 1 image-right (22-26).
    pub side: usize,
    pub threshold: u8,
    /// Half-open column range.
    pub band: (u32, u32),
    /// Brow edge row in the neutral image, once calibrated.
    pub baseline_row: Option<f32>,
    /// Neutral brow landmarks of this side, reference space.
    pub neutral: [Point; 5],
}

impl BrowTrackState {
    pub fn new(side: usize, threshold: u8, neutral: [Point; 5]) -> Result<Self, TrackingError> {
        let state = Self { side, threshold, band: DEFAULT_BROW_BAND, baseline_row: None, neutral };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), TrackingError> {
        if self.side > 1 {
            return Err(TrackingError::InvalidConfig(format!("side {} is not 0 or 1", self.side)));
        }
        if !(1..=254).contains(&self.threshold) {
            return Err(TrackingError::OutOfBounds {
                field: "threshold",
                value: self.threshold as f32,
                min: 1.0,
                max: 254.0,
            });
        }
        if self.band.0 >= self.band.1 || self.band.1 > EYE_VIEW_SIZE {
            return Err(TrackingError::InvalidConfig(format!(
                "band {:?} is not a column range inside {EYE_VIEW_SIZE}",
                self.band
            )));
        }
        Ok(())
    }

    pub fn set_threshold(&mut self, threshold: u8) -> Result<(), TrackingError> {
        let mut next = self.clone();
        next.threshold = threshold;
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn source(&self) -> Source {
        if self.side == 0 {
            Source::BrowLeft
        } else {
            Source::BrowRight
        }
    }

    pub fn indices(&self) -> std::ops::Range<usize> {
        if self.side == 0 {
            BROW_LEFT
        } else {
            BROW_RIGHT
        }
    }

    /// Median brow edge row, or `None` when fewer than half the band
    /// columns show an edge.
    pub fn brow_row(&self, img: &GrayImage) -> Option<f32> {
        let thr = self.threshold as f32 - 0.5;
        let mut rows: Vec<f32> = (self.band.0..self.band.1)
            .filter_map(|x| {
                (1..img.height()).find_map(|y| {
                    let above = img.get_pixel(x, y - 1).0[0] as f32;
                    let here = img.get_pixel(x, y).0[0] as f32;
                    // sub-pixel crossing on the linear interpolation
                    (above > thr && here < thr).then(|| (y - 1) as f32 + (above - thr) / (above - here))
                })
            })
            .collect();
        let columns = (self.band.1 - self.band.0) as usize;
        if rows.len() * 2 <= columns {
            return None;
        }
        rows.sort_by(f32::total_cmp);
        let n = rows.len();
        Some(if n % 2 == 1 { rows[n / 2] } else { 0.5 * (rows[n / 2 - 1] + rows[n / 2]) })
    }

    /// Records the neutral brow row from a neutral-expression image.
    pub fn calibrate(&mut self, neutral_view: &GrayImage) -> Result<f32, TrackingError> {
        self.validate()?;
        check_view(neutral_view)?;
        let row = self.brow_row(neutral_view).ok_or(TrackingError::NoBaseline)?;
        self.baseline_row = Some(row);
        Ok(row)
    }
}

fn check_view(img: &GrayImage) -> Result<(), TrackingError> {
    if img.dimensions() != (EYE_VIEW_SIZE, EYE_VIEW_SIZE) {
        return Err(TrackingError::Resolution {
            expected: Resolution::square(EYE_VIEW_SIZE),
            found: Resolution { width: img.width(), height: img.height() },
        });
    }
    Ok(())
}

/// Moves the five brow landmarks of `state.side` vertically by the brow
/// row's displacement from the baseline, scaled back to reference space.
pub fn track_brow(img: &GrayImage, state: &BrowTrackState) -> Result<PartialLandmarkReport, TrackingError> {
    state.validate()?;
    check_view(img)?;
    let baseline =
        state.baseline_row.ok_or_else(|| TrackingError::InvalidConfig("brow baseline is not calibrated".into()))?;
    let Some(row) = state.brow_row(img) else {
        return Ok(PartialLandmarkReport::lost(state.source()));
    };
    let dy = (row - baseline) / EYE_VIEW_SCALE;
    let points = state.indices().zip(state.neutral).map(|(i, p)| (i, Point::new(p.x, p.y + dy))).collect();
    Ok(PartialLandmarkReport::new(state.source(), points))
}
