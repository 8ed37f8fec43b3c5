//! Procedural face oracle.
//!
//! Stands in for the capture rig: a 2.5-D layered drawing over a convex
//! depth dome, parameterised by an [`IdentitySpec`] and an
//! [`ExpressionParams`] vector. Landmarks are analytic, so every rendered
//! view comes with exact ground truth.
//!
//! All geometry is defined in the 256x256 reference space; outputs at
//! other resolutions are uniformly scaled.

mod geometry;
mod render;
mod views;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flm::{FacialLandmarkSet, Resolution};

pub use geometry::FaceGeometry;
pub use render::{luminance, FaceModel, Sample};
pub use views::{eye_view_transform, lower_view_transform, HmcViews, EYE_VIEW_SCALE, EYE_VIEW_SIZE, LOWER_VIEW_SIZE};

/// Depth mapped to code 0 (mm).
pub const DEPTH_NEAR_MM: f32 = 400.0;
/// Depth mapped to code 255 (mm).
pub const DEPTH_FAR_MM: f32 = 700.0;
/// Depth code meaning "no surface".
pub const BACKGROUND_CODE: u8 = 0;
/// Minimum IR gray-level gap between skin and eyebrow.
pub const MIN_BROW_CONTRAST: f32 = 70.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("expression parameter `{name}` = {value} is outside [{lo}, {hi}]")]
    OutOfBounds { name: &'static str, value: f32, lo: f32, hi: f32 },
}

/// Bounded expression state driving the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpressionParams {
    pub mouth_open: f32,
    pub smile: f32,
    pub brow_raise_left: f32,
    pub brow_raise_right: f32,
    pub eye_open_left: f32,
    pub eye_open_right: f32,
    pub gaze_x: f32,
    pub gaze_y: f32,
    pub jaw_shift: f32,
}

impl Default for ExpressionParams {
    fn default() -> Self {
        Self::NEUTRAL
    }
}

impl ExpressionParams {
    pub const NEUTRAL: ExpressionParams = ExpressionParams {
        mouth_open: 0.0,
        smile: 0.0,
        brow_raise_left: 0.0,
        brow_raise_right: 0.0,
        eye_open_left: 1.0,
        eye_open_right: 1.0,
        gaze_x: 0.0,
        gaze_y: 0.0,
        jaw_shift: 0.0,
    };

    /// Field names, values and bounds in declaration order.
    pub fn fields(&self) -> [(&'static str, f32, f32, f32); 9] {
        [
            ("mouth_open", self.mouth_open, 0.0, 1.0),
            ("smile", self.smile, -1.0, 1.0),
            ("brow_raise_left", self.brow_raise_left, -1.0, 1.0),
            ("brow_raise_right", self.brow_raise_right, -1.0, 1.0),
            ("eye_open_left", self.eye_open_left, 0.0, 1.0),
            ("eye_open_right", self.eye_open_right, 0.0, 1.0),
            ("gaze_x", self.gaze_x, -1.0, 1.0),
            ("gaze_y", self.gaze_y, -1.0, 1.0),
            ("jaw_shift", self.jaw_shift, -1.0, 1.0),
        ]
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value, lo, hi) in self.fields() {
            if !(lo..=hi).contains(&value) {
                return Err(SynthError::OutOfBounds { name, value, lo, hi });
            }
        }
        Ok(())
    }

    /// Every field clamped into its bounds (NaN becomes the lower bound).
    pub fn clamped(&self) -> Self {
        let c = |v: f32, lo: f32, hi: f32| if v.is_nan() { lo } else { v.clamp(lo, hi) };
        Self {
            mouth_open: c(self.mouth_open, 0.0, 1.0),
            smile: c(self.smile, -1.0, 1.0),
            brow_raise_left: c(self.brow_raise_left, -1.0, 1.0),
            brow_raise_right: c(self.brow_raise_right, -1.0, 1.0),
            eye_open_left: c(self.eye_open_left, 0.0, 1.0),
            eye_open_right: c(self.eye_open_right, 0.0, 1.0),
            gaze_x: c(self.gaze_x, -1.0, 1.0),
            gaze_y: c(self.gaze_y, -1.0, 1.0),
            jaw_shift: c(self.jaw_shift, -1.0, 1.0),
        }
    }
}

/// Person-specific shape and color scalars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentitySpec {
    pub seed: u64,
    /// Face width scale, [0.92, 1.08].
    pub width_ratio: f32,
    /// Face height scale, [0.94, 1.06].
    pub height_ratio: f32,
    /// Eyebrow stroke thickness in reference pixels, [3, 5.5].
    pub brow_thickness: f32,
    pub skin_tone: [u8; 3],
    pub brow_tone: [u8; 3],
    pub lip_tone: [u8; 3],
    pub iris_tone: [u8; 3],
    /// Vertical eye offset in reference pixels, [-4, 4].
    pub eye_offset: f32,
    /// Vertical mouth offset in reference pixels, [-4, 4].
    pub mouth_offset: f32,
    /// Extra half inter-ocular distance in reference pixels, [-3, 3].
    pub eye_spacing: f32,
    /// Mouth width scale, [0.9, 1.1].
    pub mouth_width: f32,
}

impl IdentitySpec {
    /// Deterministically samples an identity; the eyebrow is always at
    /// least [`MIN_BROW_CONTRAST`] gray levels darker than the skin.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1D3_7A11);
        let r: f32 = rng.random_range(185.0..240.0);
        let skin = [r, r * rng.random_range(0.74..0.86), r * rng.random_range(0.6..0.74)];
        let skin_lum = luminance(skin);
        let brow_lum_max = (skin_lum - MIN_BROW_CONTRAST).min(80.0);
        let brow_lum = rng.random_range(25.0..brow_lum_max);
        let warm = rng.random_range(0.85..1.1);
        let brow = [brow_lum * warm * 1.1, brow_lum, brow_lum / warm * 0.9];
        let lip = [rng.random_range(150.0..200.0), rng.random_range(60.0..95.0), rng.random_range(65.0..100.0)];
        let iris = [rng.random_range(40.0..110.0), rng.random_range(50.0..110.0), rng.random_range(40.0..140.0)];
        let to_u8 = |c: [f32; 3]| c.map(|v| v.round().clamp(0.0, 255.0) as u8);
        let mut identity = Self {
            seed,
            width_ratio: rng.random_range(0.92..1.08),
            height_ratio: rng.random_range(0.94..1.06),
            brow_thickness: rng.random_range(3.0..5.5),
            skin_tone: to_u8(skin),
            brow_tone: to_u8(brow),
            lip_tone: to_u8(lip),
            iris_tone: to_u8(iris),
            eye_offset: rng.random_range(-4.0..4.0),
            mouth_offset: rng.random_range(-4.0..4.0),
            eye_spacing: rng.random_range(-3.0..3.0),
            mouth_width: rng.random_range(0.9..1.1),
        };
        // channel rounding can eat a fraction of a level
        while luminance(identity.skin_tone.map(f32::from)) - luminance(identity.brow_tone.map(f32::from))
            < MIN_BROW_CONTRAST
        {
            identity.brow_tone = identity.brow_tone.map(|v| v.saturating_sub(1));
        }
        identity
    }

    /// Median-proportioned identity with no offsets.
    pub fn canonical() -> Self {
        Self {
            seed: 0,
            width_ratio: 1.0,
            height_ratio: 1.0,
            brow_thickness: 4.0,
            skin_tone: [214, 172, 144],
            brow_tone: [62, 48, 40],
            lip_tone: [176, 84, 88],
            iris_tone: [70, 90, 120],
            eye_offset: 0.0,
            mouth_offset: 0.0,
            eye_spacing: 0.0,
            mouth_width: 1.0,
        }
    }

    pub fn brow_contrast(&self) -> f32 {
        luminance(self.skin_tone.map(f32::from)) - luminance(self.brow_tone.map(f32::from))
    }
}

/// RGB texture plus 8-bit linear depth codes.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdFrame {
    pub resolution: Resolution,
    /// Row-major interleaved RGB.
    pub rgb: Vec<u8>,
    /// Row-major depth codes.
    pub depth: Vec<u8>,
    /// (near, far) in millimeters for codes 0 and 255.
    pub depth_range: (f32, f32),
    pub background_code: u8,
}

impl RgbdFrame {
    pub fn blank(resolution: Resolution) -> Self {
        Self {
            resolution,
            rgb: vec![0; 3 * resolution.pixel_count()],
            depth: vec![BACKGROUND_CODE; resolution.pixel_count()],
            depth_range: (DEPTH_NEAR_MM, DEPTH_FAR_MM),
            background_code: BACKGROUND_CODE,
        }
    }

    pub fn width(&self) -> u32 {
        self.resolution.width
    }

    pub fn height(&self) -> u32 {
        self.resolution.height
    }

    pub fn rgb_at(&self, x: u32, y: u32) -> [u8; 3] {
        let i = 3 * (y as usize * self.resolution.width as usize + x as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, x: u32, y: u32) -> u8 {
        self.depth[y as usize * self.resolution.width as usize + x as usize]
    }

    pub fn is_background(&self, index: usize) -> bool {
        self.depth[index] == self.background_code
    }

    /// Millimeters per depth code step.
    pub fn mm_per_code(&self) -> f32 {
        (self.depth_range.1 - self.depth_range.0) / 255.0
    }

    pub fn code_to_mm(&self, code: u8) -> f32 {
        self.depth_range.0 + code as f32 * self.mm_per_code()
    }

    pub fn rgb_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width(), self.height(), self.rgb.clone()).expect("rgb buffer size")
    }

    pub fn depth_image(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width(), self.height(), self.depth.clone()).expect("depth buffer size")
    }
}

/// Maps millimeters to the nearest code inside (0, 255).
pub fn mm_to_code(z_mm: f32) -> u8 {
    ((z_mm - DEPTH_NEAR_MM) / (DEPTH_FAR_MM - DEPTH_NEAR_MM) * 255.0).round().clamp(1.0, 254.0) as u8
}

/// Analytic landmarks at the reference resolution.
pub fn landmarks_of(identity: &IdentitySpec, params: &ExpressionParams) -> Result<FacialLandmarkSet, SynthError> {
    params.validate()?;
    Ok(FaceGeometry::new(identity, params).landmarks())
}

/// Analytic landmarks scaled to `resolution`.
pub fn landmarks_at(
    identity: &IdentitySpec,
    params: &ExpressionParams,
    resolution: Resolution,
) -> Result<FacialLandmarkSet, SynthError> {
    Ok(landmarks_of(identity, params)?.rescaled(resolution))
}

/// Frontal RGBD render at the reference resolution.
pub fn render_face(identity: &IdentitySpec, params: &ExpressionParams) -> Result<RgbdFrame, SynthError> {
    render_face_at(identity, params, Resolution::REFERENCE)
}

pub fn render_face_at(
    identity: &IdentitySpec,
    params: &ExpressionParams,
    resolution: Resolution,
) -> Result<RgbdFrame, SynthError> {
    params.validate()?;
    Ok(FaceModel::new(identity, params).render(resolution))
}

/// Simulated head-mounted camera images: lower face and both brow regions.
pub fn render_hmc_views(identity: &IdentitySpec, params: &ExpressionParams) -> Result<HmcViews, SynthError> {
    params.validate()?;
    Ok(views::render(&FaceModel::new(identity, params), identity))
}
