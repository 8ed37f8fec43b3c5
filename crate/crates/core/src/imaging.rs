//! Small raster helpers shared by the oracle, augmentation and trackers.

use image::GrayImage;

use crate::flm::Point;

/// 2-D affine map `p -> m * p + t`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Affine2 {
    pub m: [[f32; 2]; 2],
    pub t: [f32; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] };

    pub fn translation(dx: f32, dy: f32) -> Self {
        Self { m: [[1.0, 0.0], [0.0, 1.0]], t: [dx, dy] }
    }

    /// Maps `from` to `to` with linear part `m`.
    pub fn anchored(m: [[f32; 2]; 2], from: Point, to: Point) -> Self {
        let t = [
            to.x - (m[0][0] * from.x + m[0][1] * from.y),
            to.y - (m[1][0] * from.x + m[1][1] * from.y),
        ];
        Self { m, t }
    }

    /// Rotation by `radians` about `center`.
    pub fn rotation_about(radians: f32, center: Point) -> Self {
        let (s, c) = radians.sin_cos();
        Self::anchored([[c, -s], [s, c]], center, center)
    }

    /// Mirror `x -> 2 * axis_x - x`.
    pub fn mirror_x(axis_x: f32) -> Self {
        Self { m: [[-1.0, 0.0], [0.0, 1.0]], t: [2.0 * axis_x, 0.0] }
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.m[0][0] * p.x + self.m[0][1] * p.y + self.t[0],
            self.m[1][0] * p.x + self.m[1][1] * p.y + self.t[1],
        )
    }

    /// `self` after `first`.
    pub fn then_after(&self, first: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &first.m;
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = self.apply(Point::new(first.t[0], first.t[1]));
        Affine2 { m, t: [t.x, t.y] }
    }

    pub fn inverse(&self) -> Affine2 {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        let m = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(m[0][0] * self.t[0] + m[0][1] * self.t[1]),
            -(m[1][0] * self.t[0] + m[1][1] * self.t[1]),
        ];
        Affine2 { m, t }
    }
}

/// Bilinear sample with constant `fill` outside the image. Pixel centers
/// sit at integer coordinates.
pub fn sample_bilinear(img: &GrayImage, x: f32, y: f32, fill: f32) -> f32 {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let raw = img.as_raw();
    let at = |xx: i64, yy: i64| -> f32 {
        if xx < 0 || yy < 0 || xx >= w || yy >= h {
            fill
        } else {
            raw[(yy * w + xx) as usize] as f32
        }
    };
    let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
    let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `src` into a `width x height` image; `dst_to_src` maps output
/// pixel coordinates into source coordinates.
pub fn warp_gray(src: &GrayImage, width: u32, height: u32, dst_to_src: &Affine2, fill: u8) -> GrayImage {
    let mut out = GrayImage::new(width, height);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let p = dst_to_src.apply(Point::new(x as f32, y as f32));
        px.0[0] = sample_bilinear(src, p.x, p.y, fill as f32).round().clamp(0.0, 255.0) as u8;
    }
    out
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Distance from `p` to the segment `a..b`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f32 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.distance(Point::new(a.x + t * dx, a.y + t * dy))
}
