//! Generated RGBD to rendered views: depth cleanup, unprojection to a
//! textured point cloud and z-buffered splatting, optionally as a stereo
//! pair.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::flm::Resolution;
use crate::synth::RgbdFrame;

/// Focal length of the capture camera in units of the image width.
pub const CAPTURE_FOCAL_RATIO: f64 = 2.08;
/// Average human interpupillary distance.
pub const DEFAULT_BASELINE_MM: f64 = 65.0;

/// Pinhole camera. The pose maps world points into the camera frame:
/// `p_cam = rotation * p_world + translation`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub width: u32,
    pub height: u32,
}

const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl CameraModel {
    /// The frontal camera the frames are rendered for; world coordinates
    /// are its camera coordinates.
    pub fn capture(resolution: Resolution) -> Self {
        let f = CAPTURE_FOCAL_RATIO * resolution.width as f64;
        Self {
            fx: f,
            fy: f,
            cx: resolution.width as f64 / 2.0,
            cy: resolution.height as f64 / 2.0,
            rotation: IDENTITY3,
            translation: [0.0; 3],
            width: resolution.width,
            height: resolution.height,
        }
    }

    /// Same intrinsics, optical center moved to `center` (world mm).
    pub fn at(&self, center: [f64; 3]) -> Self {
        let r = &self.rotation;
        let t = std::array::from_fn(|i| -(r[i][0] * center[0] + r[i][1] * center[1] + r[i][2] * center[2]));
        Self { translation: t, ..self.clone() }
    }

    /// Left and right eye cameras `baseline` mm apart around this one.
    pub fn stereo_pair(&self, baseline: f64) -> (Self, Self) {
        let c = self.center();
        (self.at([c[0] - baseline / 2.0, c[1], c[2]]), self.at([c[0] + baseline / 2.0, c[1], c[2]]))
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> [f64; 3] {
        let (r, t) = (&self.rotation, &self.translation);
        std::array::from_fn(|j| -(r[0][j] * t[0] + r[1][j] * t[1] + r[2][j] * t[2]))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err("empty viewport".into());
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                if (d - if i == j { 1.0 } else { 0.0 }).abs() > 1e-6 {
                    return Err("rotation is not orthonormal".into());
                }
            }
        }
        Ok(())
    }

    /// World point to `(u, v, z_cam)`; `None` behind the camera.
    pub fn project(&self, p: [f64; 3]) -> Option<(f64, f64, f64)> {
        let (r, t) = (&self.rotation, &self.translation);
        let q: [f64; 3] = std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i]);
        (q[2] > 0.0).then(|| (self.fx * q[0] / q[2] + self.cx, self.fy * q[1] / q[2] + self.cy, q[2]))
    }

    /// Pixel plus camera depth back to a world point.
    pub fn unproject_pixel(&self, u: f64, v: f64, z: f64) -> [f64; 3] {
        let q = [(u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z];
        let (r, t) = (&self.rotation, &self.translation);
        let d: [f64; 3] = std::array::from_fn(|i| q[i] - t[i]);
        std::array::from_fn(|j| r[0][j] * d[0] + r[1][j] * d[1] + r[2][j] * d[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    /// Millimeters.
    pub position: [f32; 3],
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// One `x y z r g b` line per point.
    pub fn write_text(&self, out: &mut impl Write) -> std::io::Result<()> {
        for p in &self.points {
            let [x, y, z] = p.position;
            let [r, g, b] = p.rgb;
            writeln!(out, "{x:.3} {y:.3} {z:.3} {r} {g} {b}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    /// Interleaved RGB; black where nothing was drawn.
    pub rgb: Vec<u8>,
    /// Camera-space depth of the drawn point, infinity where empty.
    pub zbuffer: Vec<f32>,
}

impl RenderedImage {
    pub fn blank(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        Self { width, height, rgb: vec![0; 3 * n], zbuffer: vec![f32::INFINITY; n] }
    }

    pub fn covered(&self, index: usize) -> bool {
        self.zbuffer[index].is_finite()
    }

    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(self.width, self.height, self.rgb.clone()).expect("buffer matches size")
    }
}

/// Erosion radius and the kept depth-code interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    pub erode_radius: u32,
    pub clip_near: u8,
    pub clip_far: u8,
}

/// Codes kept beyond the training face range on either side.
pub const CLIP_MARGIN_CODES: u8 = 4;

impl PostprocessConfig {
    /// Erode by 2 px, clip to the training face range widened by
    /// [`CLIP_MARGIN_CODES`].
    pub fn for_face_codes((lo, hi): (u8, u8)) -> Self {
        Self {
            erode_radius: 2,
            clip_near: lo.saturating_sub(CLIP_MARGIN_CODES).max(1),
            clip_far: hi.saturating_add(CLIP_MARGIN_CODES),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.clip_near >= self.clip_far {
            return Err(format!("clip interval [{}, {}] is empty", self.clip_near, self.clip_far));
        }
        if self.erode_radius > 64 {
            return Err("erode radius above 64 px".into());
        }
        Ok(())
    }
}

/// Offsets of a digital disc.
fn disc(radius: u32) -> Vec<(i32, i32)> {
    let r = radius as i32;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Clears depth outside `[near, far]`, then erodes the remaining mask with
/// a disc. Pixels outside the image count as background. RGB is untouched.
pub fn postprocess(frame: &RgbdFrame, erode_radius: u32, clip: (u8, u8)) -> RgbdFrame {
    let (w, h) = (frame.resolution.width as i32, frame.resolution.height as i32);
    let bg = frame.background_code;
    let valid: Vec<bool> =
        frame.depth.iter().map(|&d| d != bg && d >= clip.0 && d <= clip.1).collect();
    let offsets = disc(erode_radius);
    let mut out = frame.clone();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let keep = valid[i]
                && offsets.iter().all(|&(dx, dy)| {
                    let (nx, ny) = (x + dx, y + dy);
                    nx >= 0 && ny >= 0 && nx < w && ny < h && valid[(ny * w + nx) as usize]
                });
            if !keep {
                out.depth[i] = bg;
            }
        }
    }
    out
}

/// One point per non-background pixel at the pixel center.
pub fn unproject(frame: &RgbdFrame, camera: &CameraModel) -> PointCloud {
    let w = frame.resolution.width as usize;
    let mut points = Vec::new();
    for (i, &d) in frame.depth.iter().enumerate() {
        if d == frame.background_code {
            continue;
        }
        let z = frame.code_to_mm(d) as f64;
        let p = camera.unproject_pixel((i % w) as f64, (i / w) as f64, z);
        points.push(CloudPoint {
            position: p.map(|v| v as f32),
            rgb: [frame.rgb[3 * i], frame.rgb[3 * i + 1], frame.rgb[3 * i + 2]],
        });
    }
    PointCloud { points }
}

/// Z-buffered square splats. A splat of radius `r` covers the
/// `(2r - 1)`-pixel square around the rounded projection, so radius 1 is a
/// single pixel. Nearer points win; ties go to the smaller color, so the
/// image does not depend on point order.
pub fn rasterize_view(cloud: &PointCloud, camera: &CameraModel, splat_radius: u32) -> RenderedImage {
    let mut img = RenderedImage::blank(camera.width, camera.height);
    let (w, h) = (camera.width as i64, camera.height as i64);
    let reach = splat_radius.max(1) as i64 - 1;
    for p in &cloud.points {
        let Some((u, v, z)) = camera.project(p.position.map(f64::from)) else { continue };
        let (cu, cv, z) = (u.round() as i64, v.round() as i64, z as f32);
        for py in (cv - reach).max(0)..=(cv + reach).min(h - 1) {
            for px in (cu - reach).max(0)..=(cu + reach).min(w - 1) {
                let i = (py * w + px) as usize;
                let cur = img.zbuffer[i];
                let rgb = &mut img.rgb[3 * i..3 * i + 3];
                if z < cur || (z == cur && p.rgb < [rgb[0], rgb[1], rgb[2]]) {
                    img.zbuffer[i] = z;
                    rgb.copy_from_slice(&p.rgb);
                }
            }
        }
    }
    img
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StereoTiming {
    pub left_ms: f64,
    pub right_ms: f64,
}

pub fn render_stereo(
    cloud: &PointCloud,
    left: &CameraModel,
    right: &CameraModel,
    splat_radius: u32,
) -> (RenderedImage, RenderedImage, StereoTiming) {
    let t = Instant::now();
    let l = rasterize_view(cloud, left, splat_radius);
    let left_ms = t.elapsed().as_secs_f64() * 1e3;
    let t = Instant::now();
    let r = rasterize_view(cloud, right, splat_radius);
    (l, r, StereoTiming { left_ms, right_ms: t.elapsed().as_secs_f64() * 1e3 })
}
