//! Head-mounted camera stand-ins: fixed oblique affine views of the face.

use image::GrayImage;

use crate::flm::Point;
use crate::imaging::Affine2;

use super::geometry::FaceGeometry;
use super::{ExpressionParams, FaceModel, IdentitySpec};

/// Side of the square lower-face camera image.
pub const LOWER_VIEW_SIZE: u32 = 256;
/// Side of the square eyebrow camera images.
pub const EYE_VIEW_SIZE: u32 = 128;

const LOWER_LINEAR: [[f32; 2]; 2] = [[1.2, 0.0], [0.18, 0.9]];
const LOWER_ANCHOR_FACE: Point = Point::new(128.0, 150.0);
const LOWER_ANCHOR_VIEW: Point = Point::new(128.0, 120.0);

/// Magnification of the eyebrow cameras relative to reference space.
pub const EYE_VIEW_SCALE: f32 = 2.4;
const EYE_SHEAR: f32 = 0.25;
const EYE_ANCHOR_ABOVE_EYE: f32 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct HmcViews {
    pub lower_face: GrayImage,
    pub left_eye: GrayImage,
    pub right_eye: GrayImage,
}

/// Reference-space face coordinates to lower camera pixels.
pub fn lower_view_transform() -> Affine2 {
    Affine2::anchored(LOWER_LINEAR, LOWER_ANCHOR_FACE, LOWER_ANCHOR_VIEW)
}

/// Reference-space face coordinates to eyebrow camera pixels.
///
/// The camera is rigidly mounted relative to the wearer's neutral eye
/// position, so the transform depends on the identity only. `side` 0 is
/// image-left.
pub fn eye_view_transform(identity: &IdentitySpec, side: usize) -> Affine2 {
    let neutral = FaceGeometry::new(identity, &ExpressionParams::NEUTRAL);
    let c = neutral.eye_centers[side];
    let shear = if side == 0 { EYE_SHEAR } else { -EYE_SHEAR };
    let half = EYE_VIEW_SIZE as f32 / 2.0;
    Affine2::anchored(
        [[EYE_VIEW_SCALE, 0.0], [shear, EYE_VIEW_SCALE]],
        Point::new(c.x, c.y - EYE_ANCHOR_ABOVE_EYE),
        Point::new(half, half),
    )
}

fn render_view(model: &FaceModel, face_to_view: &Affine2, size: u32) -> GrayImage {
    let view_to_face = face_to_view.inverse();
    let mut img = GrayImage::new(size, size);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let p = view_to_face.apply(Point::new(x as f32, y as f32));
        px.0[0] = model.ir(p).round().clamp(0.0, 255.0) as u8;
    }
    img
}

pub(super) fn render(model: &FaceModel, identity: &IdentitySpec) -> HmcViews {
    HmcViews {
        lower_face: render_view(model, &lower_view_transform(), LOWER_VIEW_SIZE),
        left_eye: render_view(model, &eye_view_transform(identity, 0), EYE_VIEW_SIZE),
        right_eye: render_view(model, &eye_view_transform(identity, 1), EYE_VIEW_SIZE),
    }
}
