//! Fuses partial tracker reports into one calibrated, bounded landmark set.
//!
//! Each step assembles an uncalibrated set (neutral fill, then lower face,
//! then eyes, then brows, later sources overwriting earlier ones), adds
//! the per-landmark calibration offsets and clamps to the training bounds.
//! Everything happens in reference 256 space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PairedDataset;
use crate::flm::{clamp_landmarks, FacialLandmarkSet, LandmarkBounds, Point, Resolution, LANDMARK_COUNT};
use crate::tracking::{PartialLandmarkReport, Source};

/// Frames averaged by a calibration, about one second at 30 Hz.
pub const CALIBRATION_FRAMES: usize = 30;
pub const DEFAULT_DEADLINE_MS: u64 = 100;
/// A source silent for this many deadlines reverts to neutral.
pub const FALLBACK_FACTOR: u64 = 10;

/// Assembly order; later entries win where indices overlap.
pub const PRECEDENCE: [Source; 5] = [Source::LowerFace, Source::EyeLeft, Source::EyeRight, Source::BrowLeft, Source::BrowRight];

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("merger is not calibrated")]
    NotCalibrated,
    #[error("calibration needs at least one frame")]
    NoFrames,
    #[error("{0} lost tracking in every calibration frame")]
    SourceLost(Source),
    #[error("landmark index {0} is out of range")]
    Index(usize),
}

/// Latest report per source; `None` for sources that have not reported.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSet {
    reports: [Option<PartialLandmarkReport>; 5],
}

impl ReportSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_reports(reports: impl IntoIterator<Item = PartialLandmarkReport>) -> Self {
        let mut set = Self::new();
        for r in reports {
            set.insert(r);
        }
        set
    }

    pub fn insert(&mut self, report: PartialLandmarkReport) {
        let slot = report.source.index();
        self.reports[slot] = Some(report);
    }

    pub fn remove(&mut self, source: Source) -> Option<PartialLandmarkReport> {
        self.reports[source.index()].take()
    }

    pub fn get(&self, source: Source) -> Option<&PartialLandmarkReport> {
        self.reports[source.index()].as_ref()
    }

    fn check(&self) -> Result<(), MergeError> {
        for r in self.reports.iter().flatten() {
            if let Some(&(i, _)) = r.points.iter().find(|&&(i, _)| i >= LANDMARK_COUNT) {
                return Err(MergeError::Index(i));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    /// Added to each uncalibrated landmark.
    pub offsets: Vec<Point>,
    pub bounds: LandmarkBounds,
    pub neutral_reference: FacialLandmarkSet,
    pub calibrated: bool,
    pub frames_averaged: usize,
}

impl CalibrationState {
    /// Uncalibrated state; inputs at any resolution are moved to reference
    /// space.
    pub fn new(neutral_reference: &FacialLandmarkSet, bounds: &LandmarkBounds) -> Self {
        Self {
            offsets: vec![Point::new(0.0, 0.0); LANDMARK_COUNT],
            bounds: bounds.rescaled(Resolution::REFERENCE),
            neutral_reference: neutral_reference.rescaled(Resolution::REFERENCE),
            calibrated: false,
            frames_averaged: 0,
        }
    }

    pub fn from_dataset(dataset: &PairedDataset) -> Self {
        Self::new(dataset.neutral_reference(), &dataset.bounds)
    }

    /// Value an uncovered landmark takes before offsets, chosen so that it
    /// comes out as the neutral reference.
    fn fill(&self, index: usize) -> Point {
        let (n, o) = (self.neutral_reference.point(index), self.offsets[index]);
        Point::new(n.x - o.x, n.y - o.y)
    }
}

/// Uncalibrated landmarks from `reports`, with uncovered indices taken from
/// the calibration's neutral fill. Lost reports cover nothing.
pub fn assemble(reports: &ReportSet, calib: &CalibrationState) -> Result<FacialLandmarkSet, MergeError> {
    reports.check()?;
    let mut points: Vec<Point> = (0..LANDMARK_COUNT).map(|i| calib.fill(i)).collect();
    for source in PRECEDENCE {
        if let Some(r) = reports.get(source).filter(|r| !r.lost) {
            for &(i, p) in &r.points {
                points[i] = p;
            }
        }
    }
    Ok(FacialLandmarkSet::new(&points, Resolution::REFERENCE).expect("70 finite points"))
}

/// Offsets mapping the average of `neutral_sets` onto the neutral
/// reference.
pub fn calibrate(neutral_sets: &[ReportSet], calib: &CalibrationState) -> Result<CalibrationState, MergeError> {
    if neutral_sets.is_empty() {
        return Err(MergeError::NoFrames);
    }
    for source in Source::ALL {
        let seen: Vec<&PartialLandmarkReport> = neutral_sets.iter().filter_map(|s| s.get(source)).collect();
        if !seen.is_empty() && seen.iter().all(|r| r.lost) {
            return Err(MergeError::SourceLost(source));
        }
    }
    let fresh = CalibrationState {
        offsets: vec![Point::new(0.0, 0.0); LANDMARK_COUNT],
        calibrated: false,
        frames_averaged: 0,
        ..calib.clone()
    };
    let mut sum = vec![(0.0f64, 0.0f64); LANDMARK_COUNT];
    for set in neutral_sets {
        for (s, p) in sum.iter_mut().zip(assemble(set, &fresh)?.points()) {
            s.0 += p.x as f64;
            s.1 += p.y as f64;
        }
    }
    let n = neutral_sets.len() as f64;
    let offsets = sum
        .iter()
        .zip(fresh.neutral_reference.points())
        .map(|(&(sx, sy), r)| Point::new(r.x - (sx / n) as f32, r.y - (sy / n) as f32))
        .collect();
    Ok(CalibrationState { offsets, calibrated: true, frames_averaged: neutral_sets.len(), ..fresh })
}

/// How a source contributed to the latest output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceStatus {
    /// Never reported.
    Missing,
    Fresh,
    /// Past its deadline; last value held.
    Held,
    /// Silent too long; neutral values shown.
    Fallback,
}

/// The three stages of one merge, all in reference space.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeOutput {
    pub uncalibrated: FacialLandmarkSet,
    pub offset: FacialLandmarkSet,
    pub output: FacialLandmarkSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MergerState {
    pub deadlines_us: [u64; 5],
    last: [Option<PartialLandmarkReport>; 5],
    output: Option<FacialLandmarkSet>,
}

impl Default for MergerState {
    fn default() -> Self {
        Self::new(DEFAULT_DEADLINE_MS)
    }
}

impl MergerState {
    pub fn new(deadline_ms: u64) -> Self {
        Self { deadlines_us: [deadline_ms * 1000; 5], last: Default::default(), output: None }
    }

    pub fn output(&self) -> Option<&FacialLandmarkSet> {
        self.output.as_ref()
    }

    pub fn status(&self, now_us: u64) -> [SourceStatus; 5] {
        Source::ALL.map(|s| match &self.last[s.index()] {
            None => SourceStatus::Missing,
            Some(r) => {
                let age = now_us.saturating_sub(r.timestamp_us);
                let deadline = self.deadlines_us[s.index()];
                if age > deadline * FALLBACK_FACTOR {
                    SourceStatus::Fallback
                } else if age > deadline {
                    SourceStatus::Held
                } else {
                    SourceStatus::Fresh
                }
            }
        })
    }

    /// Takes every non-lost report in `reports` that is newer than what is
    /// held, then merges what is held as of `now_us`.
    pub fn merge_step(
        &mut self,
        reports: &ReportSet,
        calib: &CalibrationState,
        now_us: u64,
    ) -> Result<MergeOutput, MergeError> {
        if !calib.calibrated {
            return Err(MergeError::NotCalibrated);
        }
        reports.check()?;
        for source in Source::ALL {
            let slot = &mut self.last[source.index()];
            if let Some(r) = reports.get(source).filter(|r| !r.lost) {
                if slot.as_ref().is_none_or(|held| r.timestamp_us >= held.timestamp_us) {
                    *slot = Some(r.clone());
                }
            }
        }
        let status = self.status(now_us);
        let mut effective = ReportSet::new();
        for source in Source::ALL {
            if status[source.index()] != SourceStatus::Fallback {
                if let Some(r) = &self.last[source.index()] {
                    effective.insert(r.clone());
                }
            }
        }
        let uncalibrated = assemble(&effective, calib)?;
        let shifted: Vec<Point> = uncalibrated
            .points()
            .iter()
            .zip(&calib.offsets)
            .map(|(p, o)| Point::new(p.x + o.x, p.y + o.y))
            .collect();
        let offset = FacialLandmarkSet::new(&shifted, Resolution::REFERENCE).expect("70 finite points");
        let output = clamp_landmarks(&offset, &calib.bounds);
        self.output = Some(output);
        Ok(MergeOutput { uncalibrated, offset, output })
    }
}

#[cfg(test)]
mod tests;
