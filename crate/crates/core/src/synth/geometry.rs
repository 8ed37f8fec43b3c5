use std::f32::consts::PI;

use crate::flm::{FacialLandmarkSet, Point, Resolution, LANDMARK_COUNT};

use super::{ExpressionParams, IdentitySpec};

const CENTER_X: f32 = 128.0;
const CENTER_Y: f32 = 132.0;
const HALF_WIDTH: f32 = 80.0;
const HALF_HEIGHT: f32 = 104.0;

const EYE_Y: f32 = 112.0;
const EYE_HALF_DISTANCE: f32 = 32.0;
const EYE_HALF_WIDTH: f32 = 13.0;
const LID_HALF_GAP: f32 = 5.5;
pub(crate) const IRIS_RADIUS: f32 = 4.5;
const GAZE_Y_TRAVEL: f32 = 0.35;

const BROW_GAP: f32 = 15.0;
const BROW_ARCH: f32 = 3.0;
const BROW_RAISE_UP: f32 = 10.0;
const BROW_RAISE_DOWN: f32 = 6.0;

const NOSE_TIP_BELOW_CENTER: f32 = 22.0;
const MOUTH_Y: f32 = 190.0;
const MOUTH_HALF_WIDTH: f32 = 25.0;
const MAX_INNER_GAP: f32 = 22.0;
const MAX_CHIN_DROP: f32 = 14.0;
const MAX_JAW_SHIFT: f32 = 8.0;
const SMILE_WIDEN: f32 = 4.0;
const SMILE_LIFT: f32 = 5.0;
const JAW_START_ANGLE: f32 = 0.2;

/// Resolved face layout in reference pixels for one (identity, expression).
#[derive(Clone, Debug)]
pub struct FaceGeometry {
    pub center: Point,
    pub half_width: f32,
    pub half_height: f32,
    /// Extra lower-face height from the opened jaw.
    pub chin_drop: f32,
    /// Horizontal chin displacement.
    pub jaw_shift: f32,
    pub eye_centers: [Point; 2],
    pub eye_half_width: f32,
    pub brow_thickness: f32,
    points: [Point; LANDMARK_COUNT],
}

impl FaceGeometry {
    pub fn new(identity: &IdentitySpec, params: &ExpressionParams) -> Self {
        let w = identity.width_ratio;
        let h = identity.height_ratio;
        let center = Point::new(CENTER_X, CENTER_Y);
        let half_width = HALF_WIDTH * w;
        let half_height = HALF_HEIGHT * h;
        let chin_drop = MAX_CHIN_DROP * params.mouth_open;
        let jaw_shift = MAX_JAW_SHIFT * params.jaw_shift;
        let mut pts = [Point::default(); LANDMARK_COUNT];

        // jaw contour, image-left ear to image-right ear through the chin
        for (i, p) in pts[0..17].iter_mut().enumerate() {
            let phi = PI + JAW_START_ANGLE - i as f32 * (PI + 2.0 * JAW_START_ANGLE) / 16.0;
            let (s, c) = phi.sin_cos();
            *p = if s > 0.0 {
                Point::new(center.x + half_width * c + jaw_shift * s * s, center.y + (half_height + chin_drop) * s)
            } else {
                Point::new(center.x + half_width * c, center.y + half_height * s)
            };
        }

        let eye_y = EYE_Y * h + (1.0 - h) * CENTER_Y + identity.eye_offset;
        let eye_dx = (EYE_HALF_DISTANCE + identity.eye_spacing) * w;
        let eye_centers = [Point::new(center.x - eye_dx, eye_y), Point::new(center.x + eye_dx, eye_y)];
        let hw = EYE_HALF_WIDTH * w;

        // brows: 17..22 left (outer to inner), 22..27 right (inner to outer)
        let brow_shift = |raise: f32| if raise >= 0.0 { -BROW_RAISE_UP * raise } else { -BROW_RAISE_DOWN * raise };
        for k in 0..5 {
            let u_left = -1.3 + 0.625 * k as f32;
            let u_right = -1.2 + 0.625 * k as f32;
            let arch = |u: f32| BROW_ARCH * (1.0 - (u / 1.3).powi(2));
            pts[17 + k] = Point::new(
                eye_centers[0].x + hw * u_left,
                eye_y - BROW_GAP - arch(u_left) + brow_shift(params.brow_raise_left),
            );
            pts[22 + k] = Point::new(
                eye_centers[1].x + hw * u_right,
                eye_y - BROW_GAP - arch(u_right) + brow_shift(params.brow_raise_right),
            );
        }

        // nose bridge and base
        let tip_y = center.y + NOSE_TIP_BELOW_CENTER * h;
        let bridge_top = eye_y - 2.0;
        for k in 0..4 {
            pts[27 + k] = Point::new(center.x, bridge_top + (tip_y - bridge_top) * k as f32 / 3.0);
        }
        for (k, dx) in [-12.0f32, -6.0, 0.0, 6.0, 12.0].into_iter().enumerate() {
            let dy = if k == 2 { 9.0 } else { 8.0 - 0.1 * dx.abs() };
            pts[31 + k] = Point::new(center.x + dx * w, tip_y + dy);
        }

        // eyes: lids open symmetrically about the corner line
        let eye = |c: Point, open: f32| {
            let g = LID_HALF_GAP * open;
            let third = hw / 3.0;
            (
                [Point::new(c.x - hw, c.y), Point::new(c.x + hw, c.y)],
                [Point::new(c.x - third, c.y - g), Point::new(c.x + third, c.y - g)],
                [Point::new(c.x - third, c.y + g), Point::new(c.x + third, c.y + g)],
            )
        };
        let (corners, upper, lower) = eye(eye_centers[0], params.eye_open_left);
        pts[36] = corners[0];
        pts[37] = upper[0];
        pts[38] = upper[1];
        pts[39] = corners[1];
        pts[40] = lower[1];
        pts[41] = lower[0];
        let (corners, upper, lower) = eye(eye_centers[1], params.eye_open_right);
        pts[42] = corners[0];
        pts[43] = upper[0];
        pts[44] = upper[1];
        pts[45] = corners[1];
        pts[46] = lower[1];
        pts[47] = lower[0];

        // irises
        for (side, c) in eye_centers.iter().enumerate() {
            pts[68 + side] = Point::new(
                c.x + params.gaze_x * (hw - IRIS_RADIUS),
                c.y + params.gaze_y * GAZE_Y_TRAVEL * LID_HALF_GAP,
            );
        }

        // mouth
        let my = MOUTH_Y * h + (1.0 - h) * CENTER_Y + identity.mouth_offset;
        let mw = MOUTH_HALF_WIDTH * identity.mouth_width * w + SMILE_WIDEN * params.smile;
        let gap = MAX_INNER_GAP * params.mouth_open;
        let lower_shift = 0.6 * jaw_shift;
        let lift = |u: f32| SMILE_LIFT * params.smile * u * u;
        let drop = |u: f32| gap * (1.0 - u * u);
        let upper_outer = |u: f32, dy: f32| Point::new(center.x + u * mw, my + dy - lift(u));
        let lower = |u: f32, dy: f32| {
            let open = drop(u);
            Point::new(center.x + u * mw + lower_shift * (1.0 - u * u), my + dy + open - lift(u))
        };
        pts[48] = upper_outer(-1.0, 0.0);
        pts[49] = upper_outer(-0.6, -6.0);
        pts[50] = upper_outer(-0.25, -8.0);
        pts[51] = upper_outer(0.0, -6.5);
        pts[52] = upper_outer(0.25, -8.0);
        pts[53] = upper_outer(0.6, -6.0);
        pts[54] = upper_outer(1.0, 0.0);
        pts[55] = lower(0.6, 7.0);
        pts[56] = lower(0.25, 9.0);
        pts[57] = lower(0.0, 9.5);
        pts[58] = lower(-0.25, 9.0);
        pts[59] = lower(-0.6, 7.0);
        let inner_y = -1.5;
        pts[60] = upper_outer(-0.8, inner_y);
        pts[61] = upper_outer(-0.35, inner_y);
        pts[62] = upper_outer(0.0, inner_y);
        pts[63] = upper_outer(0.35, inner_y);
        pts[64] = upper_outer(0.8, inner_y);
        // the inner corners stay on the upper line; only the lower lip drops
        pts[65] = lower(0.35, inner_y);
        pts[66] = lower(0.0, inner_y);
        pts[67] = lower(-0.35, inner_y);
        Self {
            center,
            half_width,
            half_height,
            chin_drop,
            jaw_shift,
            eye_centers,
            eye_half_width: hw,
            brow_thickness: identity.brow_thickness,
            points: pts,
        }
    }

    pub fn landmarks(&self) -> FacialLandmarkSet {
        FacialLandmarkSet::new(&self.points, Resolution::REFERENCE).expect("oracle landmarks are finite")
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn points(&self, range: std::ops::Range<usize>) -> &[Point] {
        &self.points[range]
    }

    /// Whether `p` lies inside the (possibly jaw-deformed) face outline.
    pub fn in_face(&self, p: Point) -> bool {
        let dy = p.y - self.center.y;
        if dy <= 0.0 {
            let nx = (p.x - self.center.x) / self.half_width;
            let ny = dy / self.half_height;
            nx * nx + ny * ny <= 1.0
        } else {
            let lower = self.half_height + self.chin_drop;
            let ny = dy / lower;
            let nx = (p.x - self.center.x - self.jaw_shift * ny * ny) / self.half_width;
            nx * nx + ny * ny <= 1.0
        }
    }

    /// Area of the face outline in reference pixels squared.
    pub fn face_area(&self) -> f32 {
        // upper half-ellipse plus the sheared lower half-ellipse (shear keeps area)
        0.5 * PI * self.half_width * self.half_height + 0.5 * PI * self.half_width * (self.half_height + self.chin_drop)
    }
}
