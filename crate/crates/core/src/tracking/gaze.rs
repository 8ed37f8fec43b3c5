//! Eye openness and gaze as landmarks. The values come from an eye tracker
//! in the headset; here they are oracle parameters or operator input.

use serde::{Deserialize, Serialize};

use crate::flm::{FacialLandmarkSet, Point, Resolution, EYE_LEFT, EYE_RIGHT, IRIS_LEFT, IRIS_RIGHT};
use crate::synth::ExpressionParams;

use super::{PartialLandmarkReport, Source, TrackingError};

/// The iris stops this far inside the eye corners.
const IRIS_MARGIN: f32 = 4.5;
/// Vertical gaze travel as a fraction of the neutral lid half-gap.
const GAZE_Y_TRAVEL: f32 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EyeControls {
    pub eye_open_left: f32,
    pub eye_open_right: f32,
    pub gaze_x: f32,
    pub gaze_y: f32,
}

impl Default for EyeControls {
    fn default() -> Self {
        Self { eye_open_left: 1.0, eye_open_right: 1.0, gaze_x: 0.0, gaze_y: 0.0 }
    }
}

impl From<&ExpressionParams> for EyeControls {
    fn from(p: &ExpressionParams) -> Self {
        Self { eye_open_left: p.eye_open_left, eye_open_right: p.eye_open_right, gaze_x: p.gaze_x, gaze_y: p.gaze_y }
    }
}

impl EyeControls {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let check = |field, value: f32, min, max| {
            if value.is_finite() && (min..=max).contains(&value) {
                Ok(())
            } else {
                Err(TrackingError::OutOfBounds { field, value, min, max })
            }
        };
        check("eye_open_left", self.eye_open_left, 0.0, 1.0)?;
        check("eye_open_right", self.eye_open_right, 0.0, 1.0)?;
        check("gaze_x", self.gaze_x, -1.0, 1.0)?;
        check("gaze_y", self.gaze_y, -1.0, 1.0)
    }
}

/// Eyelid and iris landmarks for both eyes, built on the neutral eye
/// shape: lid offsets from the corner line scale linearly with openness,
/// and the iris moves linearly with gaze. Returns the left and right eye
/// reports in reference space.
pub fn gaze_source(
    controls: &EyeControls,
    neutral: &FacialLandmarkSet,
) -> Result<[PartialLandmarkReport; 2], TrackingError> {
    controls.validate()?;
    let neutral = neutral.rescaled(Resolution::REFERENCE);
    let eye = |range: std::ops::Range<usize>, iris: usize, open: f32, source| {
        let (a, b) = (neutral.point(range.start), neutral.point(range.start + 3));
        let mid = Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y));
        let half_width = 0.5 * (b.x - a.x).abs();
        let lids = [1, 2, 4, 5].map(|k| range.start + k);
        let half_gap = lids.iter().map(|&i| (neutral.point(i).y - mid.y).abs()).sum::<f32>() / 4.0;
        let mut points: Vec<(usize, Point)> = range
            .map(|i| {
                let p = neutral.point(i);
                (i, Point::new(p.x, mid.y + (p.y - mid.y) * open))
            })
            .collect();
        points.push((
            iris,
            Point::new(
                mid.x + controls.gaze_x * (half_width - IRIS_MARGIN),
                mid.y + controls.gaze_y * GAZE_Y_TRAVEL * half_gap,
            ),
        ));
        PartialLandmarkReport { controls: Some(*controls), ..PartialLandmarkReport::new(source, points) }
    };
    Ok([
        eye(EYE_LEFT, IRIS_LEFT, controls.eye_open_left, Source::EyeLeft),
        eye(EYE_RIGHT, IRIS_RIGHT, controls.eye_open_right, Source::EyeRight),
    ])
}
