use crate::flm::{Point, Resolution, NOSE_TIP};
use crate::imaging::{point_in_polygon, segment_distance};

use super::geometry::{FaceGeometry, IRIS_RADIUS};
use super::{mm_to_code, ExpressionParams, IdentitySpec, RgbdFrame, BACKGROUND_CODE, DEPTH_FAR_MM, DEPTH_NEAR_MM};

/// Millimeters per reference pixel at the capture distance.
const MM_PER_PIXEL: f32 = 0.6;
const DOME_BACK_MM: f32 = 575.0;
const DOME_DEPTH_MM: f32 = 105.0;
const NOSE_HEIGHT_MM: f32 = 24.0;
const NOSE_FALLOFF: f32 = 8.0;
const BRIDGE_HEIGHT_MM: f32 = 12.0;
const EYE_SOCKET_MM: f32 = 7.0;
const LIP_BULGE_MM: f32 = 4.0;
const CAVITY_MM: f32 = 14.0;
const PUPIL_RADIUS: f32 = 1.8;
const LIGHT: [f32; 3] = [-0.3041, -0.3909, -0.8687];

const SCLERA: [f32; 3] = [232.0, 229.0, 222.0];
const PUPIL: [f32; 3] = [12.0, 12.0, 14.0];
const CAVITY: [f32; 3] = [70.0, 25.0, 30.0];

/// Rec. 601 luma.
pub fn luminance(rgb: [f32; 3]) -> f32 {
    0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Background,
    Skin,
    Brow,
    Sclera,
    Iris,
    Pupil,
    Nostril,
    Lip,
    Cavity,
}

#[derive(Clone, Copy, Debug)]
pub struct Sample {
    pub region: Region,
    pub rgb: [f32; 3],
    /// None outside the face.
    pub depth_mm: Option<f32>,
}

struct Eye {
    polygon: [Point; 6],
    iris: Point,
    lo: Point,
    hi: Point,
}

/// Evaluates color and depth of the oracle face at arbitrary points.
pub struct FaceModel {
    geometry: FaceGeometry,
    skin: [f32; 3],
    brow: [f32; 3],
    lip: [f32; 3],
    iris: [f32; 3],
    brows: [[Point; 5]; 2],
    eyes: [Eye; 2],
    outer_lips: [Point; 12],
    inner_lips: [Point; 8],
    mouth_lo: Point,
    mouth_hi: Point,
    nostrils: [Point; 2],
    nose_tip: Point,
    bridge_top: Point,
    mouth_center: Point,
    mouth_half_width: f32,
}

fn bbox(points: &[Point], pad: f32) -> (Point, Point) {
    let mut lo = Point::new(f32::INFINITY, f32::INFINITY);
    let mut hi = Point::new(f32::NEG_INFINITY, f32::NEG_INFINITY);
    for p in points {
        lo.x = lo.x.min(p.x);
        lo.y = lo.y.min(p.y);
        hi.x = hi.x.max(p.x);
        hi.y = hi.y.max(p.y);
    }
    (Point::new(lo.x - pad, lo.y - pad), Point::new(hi.x + pad, hi.y + pad))
}

fn within(p: Point, lo: Point, hi: Point) -> bool {
    p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y
}

fn gaussian(d2: f32, sigma: f32) -> f32 {
    (-d2 / (2.0 * sigma * sigma)).exp()
}

impl FaceModel {
    /// Callers validate `params` beforehand.
    pub fn new(identity: &IdentitySpec, params: &ExpressionParams) -> Self {
        let g = FaceGeometry::new(identity, params);
        let arr = |r: std::ops::Range<usize>| -> Vec<Point> { g.points(r).to_vec() };
        let eye = |range: std::ops::Range<usize>, iris: usize| {
            let pts = arr(range);
            let polygon: [Point; 6] = pts.try_into().expect("six eye landmarks");
            let (lo, hi) = bbox(&polygon, 0.5);
            Eye { polygon, iris: g.point(iris), lo, hi }
        };
        let outer: [Point; 12] = arr(48..60).try_into().expect("twelve outer lip landmarks");
        let inner: [Point; 8] = arr(60..68).try_into().expect("eight inner lip landmarks");
        let (mouth_lo, mouth_hi) = bbox(&outer, 1.5);
        let tip = g.point(NOSE_TIP);
        let nostril_y = tip.y + 5.0;
        let nostril_dx = 7.0 * identity.width_ratio;
        Self {
            skin: identity.skin_tone.map(f32::from),
            brow: identity.brow_tone.map(f32::from),
            lip: identity.lip_tone.map(f32::from),
            iris: identity.iris_tone.map(f32::from),
            brows: [
                arr(17..22).try_into().expect("five brow landmarks"),
                arr(22..27).try_into().expect("five brow landmarks"),
            ],
            eyes: [eye(36..42, 68), eye(42..48, 69)],
            outer_lips: outer,
            inner_lips: inner,
            mouth_lo,
            mouth_hi,
            nostrils: [Point::new(tip.x - nostril_dx, nostril_y), Point::new(tip.x + nostril_dx, nostril_y)],
            nose_tip: tip,
            bridge_top: g.point(27),
            mouth_center: Point::new(g.point(51).x, 0.5 * (g.point(51).y + g.point(57).y)),
            mouth_half_width: 0.5 * (g.point(54).x - g.point(48).x),
            geometry: g,
        }
    }

    pub fn geometry(&self) -> &FaceGeometry {
        &self.geometry
    }

    /// Smooth head surface without the mouth cavity step (mm).
    fn surface_mm(&self, p: Point) -> f32 {
        let g = &self.geometry;
        let tip = self.nose_tip;
        let rx = (p.x - tip.x) / (1.45 * g.half_width);
        let ry = (p.y - tip.y) / (1.3 * g.half_height);
        let r2 = (rx * rx + ry * ry).min(1.0);
        let mut z = DOME_BACK_MM - DOME_DEPTH_MM * (1.0 - r2).sqrt();

        let d_tip = p.distance(tip);
        z -= NOSE_HEIGHT_MM * (-d_tip / NOSE_FALLOFF).exp();
        if p.y >= self.bridge_top.y {
            let t = if p.y <= tip.y {
                (p.y - self.bridge_top.y) / (tip.y - self.bridge_top.y)
            } else {
                gaussian((p.y - tip.y).powi(2), 2.0)
            };
            let dx = p.x - tip.x;
            z -= BRIDGE_HEIGHT_MM * t * gaussian(dx * dx, 3.0);
        }
        for c in g.eye_centers {
            let d2 = (p.x - c.x).powi(2) + (p.y - c.y).powi(2);
            z += EYE_SOCKET_MM * gaussian(d2, 10.0);
        }
        let mx = p.x - self.mouth_center.x;
        let my = p.y - self.mouth_center.y;
        let sx = 0.7 * self.mouth_half_width;
        z -= LIP_BULGE_MM * (-(mx * mx) / (2.0 * sx * sx) - (my * my) / (2.0 * 64.0)).exp();
        z
    }

    fn shade(&self, p: Point) -> f32 {
        let h = 0.5;
        let gx = (self.surface_mm(Point::new(p.x + h, p.y)) - self.surface_mm(Point::new(p.x - h, p.y))) / (2.0 * h);
        let gy = (self.surface_mm(Point::new(p.x, p.y + h)) - self.surface_mm(Point::new(p.x, p.y - h))) / (2.0 * h);
        let n = [gx / MM_PER_PIXEL, gy / MM_PER_PIXEL, -1.0];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        let lambert = (n[0] * LIGHT[0] + n[1] * LIGHT[1] + n[2] * LIGHT[2]) / len;
        0.35 + 0.65 * lambert.max(0.0)
    }

    fn in_mouth_cavity(&self, p: Point) -> bool {
        point_in_polygon(p, &self.inner_lips)
    }

    fn region(&self, p: Point) -> Region {
        for eye in &self.eyes {
            if within(p, eye.lo, eye.hi) && point_in_polygon(p, &eye.polygon) {
                let d = p.distance(eye.iris);
                return if d <= PUPIL_RADIUS {
                    Region::Pupil
                } else if d <= IRIS_RADIUS {
                    Region::Iris
                } else {
                    Region::Sclera
                };
            }
        }
        let half = 0.5 * self.geometry.brow_thickness;
        for brow in &self.brows {
            if brow.windows(2).any(|s| segment_distance(p, s[0], s[1]) <= half) {
                return Region::Brow;
            }
        }
        for n in self.nostrils {
            let dx = (p.x - n.x) / 2.6;
            let dy = (p.y - n.y) / 1.6;
            if dx * dx + dy * dy <= 1.0 {
                return Region::Nostril;
            }
        }
        if within(p, self.mouth_lo, self.mouth_hi) {
            if self.in_mouth_cavity(p) {
                return Region::Cavity;
            }
            let corners = [self.outer_lips[0], self.outer_lips[6]];
            if point_in_polygon(p, &self.outer_lips) || corners.iter().any(|c| p.distance(*c) <= 1.0) {
                return Region::Lip;
            }
        }
        Region::Skin
    }

    /// Color and depth at reference-space point `p`.
    pub fn sample(&self, p: Point) -> Sample {
        if !self.geometry.in_face(p) {
            return Sample { region: Region::Background, rgb: [0.0; 3], depth_mm: None };
        }
        let region = self.region(p);
        let shade = self.shade(p);
        let scale = |c: [f32; 3], s: f32| c.map(|v| v * s);
        let rgb = match region {
            Region::Skin => scale(self.skin, shade),
            Region::Brow => scale(self.brow, shade),
            Region::Sclera => scale(SCLERA, 0.6 + 0.4 * shade),
            Region::Iris => scale(self.iris, shade),
            Region::Pupil => PUPIL,
            Region::Nostril => scale(self.skin, 0.35 * shade),
            Region::Lip => scale(self.lip, shade),
            Region::Cavity => CAVITY,
            Region::Background => unreachable!(),
        };
        let mut z = self.surface_mm(p);
        if region == Region::Cavity {
            z += CAVITY_MM;
        }
        Sample { region, rgb, depth_mm: Some(z.clamp(DEPTH_NEAR_MM, DEPTH_FAR_MM)) }
    }

    /// Reference-space coordinate of pixel `(x, y)` at `resolution`.
    pub fn pixel_to_reference(x: u32, y: u32, resolution: Resolution) -> Point {
        Point::new(
            x as f32 * Resolution::REFERENCE.width as f32 / resolution.width as f32,
            y as f32 * Resolution::REFERENCE.height as f32 / resolution.height as f32,
        )
    }

    pub fn render(&self, resolution: Resolution) -> RgbdFrame {
        let mut frame = RgbdFrame::blank(resolution);
        for y in 0..resolution.height {
            for x in 0..resolution.width {
                let s = self.sample(Self::pixel_to_reference(x, y, resolution));
                let i = y as usize * resolution.width as usize + x as usize;
                if let Some(z) = s.depth_mm {
                    for c in 0..3 {
                        frame.rgb[3 * i + c] = s.rgb[c].round().clamp(0.0, 255.0) as u8;
                    }
                    frame.depth[i] = mm_to_code(z);
                } else {
                    frame.depth[i] = BACKGROUND_CODE;
                }
            }
        }
        frame
    }

    /// Infrared-like gray level: luminance of the shaded color, dim outside the face.
    pub fn ir(&self, p: Point) -> f32 {
        let s = self.sample(p);
        match s.depth_mm {
            Some(_) => luminance(s.rgb),
            None => 10.0,
        }
    }
}
