//! Desk-scale stand-ins for the headset trackers. Each one turns a camera
//! image or a control input into a [`PartialLandmarkReport`] covering some
//! of the 70 landmarks in reference space.

mod brow;
mod cnn;
mod gaze;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flm::{Point, Resolution};

pub use brow::{binarize, otsu_threshold, track_brow, BrowTrackState, DEFAULT_BROW_BAND};
pub use cnn::{
    train_lowerface_cnn, CnnConfig, CnnEpochLog, CnnReport, LowerFaceCnn, LowerFaceTracker, LowerFaceWeights,
};
pub use gaze::{gaze_source, EyeControls};

#[derive(Debug, Error)]
pub enum TrackingError {
    #[error("dataset split {0} is empty")]
    EmptySplit(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("image is {found}, expected {expected}")]
    Resolution { expected: Resolution, found: Resolution },
    #[error("{field} = {value} is outside [{min}, {max}]")]
    OutOfBounds { field: &'static str, value: f32, min: f32, max: f32 },
    #[error("no brow transition found in the neutral image")]
    NoBaseline,
    #[error("weights file: {0}")]
    Corrupt(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Which tracker produced a report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    LowerFace,
    BrowLeft,
    BrowRight,
    EyeLeft,
    EyeRight,
}

impl Source {
    pub const ALL: [Source; 5] = [Source::LowerFace, Source::BrowLeft, Source::BrowRight, Source::EyeLeft, Source::EyeRight];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::LowerFace => "lower-face",
            Source::BrowLeft => "brow-left",
            Source::BrowRight => "brow-right",
            Source::EyeLeft => "eye-left",
            Source::EyeRight => "eye-right",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Landmarks one tracker vouches for, in reference 256 space.
///
/// A lost report names its source but covers nothing; the merger decides
/// what to show instead.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialLandmarkReport {
    pub source: Source,
    pub points: Vec<(usize, Point)>,
    /// Scalar inputs behind an eye report.
    pub controls: Option<EyeControls>,
    pub lost: bool,
    pub timestamp_us: u64,
}

impl PartialLandmarkReport {
    pub fn new(source: Source, points: Vec<(usize, Point)>) -> Self {
        Self { source, points, controls: None, lost: false, timestamp_us: 0 }
    }

    pub fn lost(source: Source) -> Self {
        Self { source, points: Vec::new(), controls: None, lost: true, timestamp_us: 0 }
    }

    pub fn at(mut self, timestamp_us: u64) -> Self {
        self.timestamp_us = timestamp_us;
        self
    }

    pub fn indices(&self) -> Vec<usize> {
        self.points.iter().map(|&(i, _)| i).collect()
    }

    pub fn point(&self, index: usize) -> Option<Point> {
        self.points.iter().find(|&&(i, _)| i == index).map(|&(_, p)| p)
    }
}
