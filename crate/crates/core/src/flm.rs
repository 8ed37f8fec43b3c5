//! Facial landmark sets, their binary landmark-map rasterization and
//! per-landmark clamping envelopes.
//!
//! A [`FacialLandmarkSet`] always holds exactly [`LANDMARK_COUNT`] points.
//! Indices 0..68 follow the 68-point face-alignment layout (0-16 jaw,
//! 17-26 brows, 27-35 nose, 36-47 eyes, 48-67 mouth); 68 and 69 are the
//! left and right iris centers. "Left" always means image-left.

use std::fmt;
use std::ops::Range;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub const LANDMARK_COUNT: usize = 70;

pub const JAW: Range<usize> = 0..17;
pub const BROW_LEFT: Range<usize> = 17..22;
pub const BROW_RIGHT: Range<usize> = 22..27;
pub const NOSE: Range<usize> = 27..36;
pub const EYE_LEFT: Range<usize> = 36..42;
pub const EYE_RIGHT: Range<usize> = 42..48;
pub const MOUTH_OUTER: Range<usize> = 48..60;
pub const MOUTH_INNER: Range<usize> = 60..68;
pub const IRIS_LEFT: usize = 68;
pub const IRIS_RIGHT: usize = 69;
pub const NOSE_TIP: usize = 30;

/// Horizontal mirror partner of every landmark index.
pub const MIRROR: [usize; LANDMARK_COUNT] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17, // brows
    27, 28, 29, 30, 35, 34, 33, 32, 31, // nose
    45, 44, 43, 42, 47, 46, 39, 38, 37, 36, 41, 40, // eyes
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55, // outer lips
    64, 63, 62, 61, 60, 67, 66, 65, // inner lips
    69, 68, // irises
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlmError {
    #[error("expected {LANDMARK_COUNT} landmarks, got {0}")]
    WrongCount(usize),
    #[error("landmark {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("resolution must be positive, got {0}")]
    InvalidResolution(Resolution),
    #[error("cannot derive landmark bounds from an empty dataset")]
    EmptyDataset,
    #[error("landmark sets mix resolutions {0} and {1}")]
    MixedResolution(Resolution, Resolution),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const REFERENCE: Resolution = Resolution::square(256);

    pub const fn square(side: u32) -> Self {
        Self { width: side, height: side }
    }

    pub fn pixel_count(self) -> usize {
        self.width as usize * self.height as usize
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f32,
    pub y: f32,
}

impl Point {
    pub const fn new(x: f32, y: f32) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f32 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Nearest integer pixel, rounding half away from zero.
    pub fn rounded(self) -> (i64, i64) {
        (self.x.round() as i64, self.y.round() as i64)
    }
}

/// 70 ordered landmarks in pixel coordinates of `resolution`.
///
/// Coordinates are kept as real numbers; rounding happens only at
/// rasterization and wire encoding. Out-of-image coordinates are legal
/// until [`clamp_landmarks`] is applied explicitly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FacialLandmarkSet {
    points: [Point; LANDMARK_COUNT],
    resolution: Resolution,
}

impl FacialLandmarkSet {
    pub fn new(points: &[Point], resolution: Resolution) -> Result<Self, FlmError> {
        if points.len() != LANDMARK_COUNT {
            return Err(FlmError::WrongCount(points.len()));
        }
        if resolution.width == 0 || resolution.height == 0 {
            return Err(FlmError::InvalidResolution(resolution));
        }
        if let Some(index) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(FlmError::NonFinite { index });
        }
        let mut array = [Point::default(); LANDMARK_COUNT];
        array.copy_from_slice(points);
        Ok(Self { points: array, resolution })
    }

    /// Builds a set from the flat `[x0, y0, ..., x69, y69]` layout.
    pub fn from_flat(coords: &[f32], resolution: Resolution) -> Result<Self, FlmError> {
        if coords.len() != 2 * LANDMARK_COUNT {
            return Err(FlmError::WrongCount(coords.len() / 2));
        }
        let points: Vec<Point> = coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        Self::new(&points, resolution)
    }

    pub fn to_flat(&self) -> Vec<f32> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Point; LANDMARK_COUNT] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Point {
        self.points[index]
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Replaces one landmark. Non-finite values are rejected.
    pub fn with_point(mut self, index: usize, p: Point) -> Result<Self, FlmError> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(FlmError::NonFinite { index });
        }
        self.points[index] = p;
        Ok(self)
    }

    /// Same landmarks expressed in pixel units of another resolution.
    pub fn rescaled(&self, to: Resolution) -> Self {
        if to == self.resolution {
            return *self;
        }
        let sx = to.width as f32 / self.resolution.width as f32;
        let sy = to.height as f32 / self.resolution.height as f32;
        let mut out = *self;
        for p in out.points.iter_mut() {
            p.x *= sx;
            p.y *= sy;
        }
        out.resolution = to;
        out
    }

    /// Landmarks with every coordinate rounded to the nearest integer.
    pub fn rounded(&self) -> Self {
        let mut out = *self;
        for p in out.points.iter_mut() {
            p.x = p.x.round();
            p.y = p.y.round();
        }
        out
    }
}

impl Serialize for FacialLandmarkSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            resolution: Resolution,
            points: &'a [f32],
        }
        Repr { resolution: self.resolution, points: &self.to_flat() }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for FacialLandmarkSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            resolution: Resolution,
            points: Vec<f32>,
        }
        let repr = Repr::deserialize(deserializer)?;
        FacialLandmarkSet::from_flat(&repr.points, repr.resolution).map_err(D::Error::custom)
    }
}

/// Single-channel binary image with one plus-shaped stamp per landmark.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LandmarkMap {
    resolution: Resolution,
    pixels: Vec<u8>,
}

impl LandmarkMap {
    pub fn empty(resolution: Resolution) -> Self {
        Self { resolution, pixels: vec![0; resolution.pixel_count()] }
    }

    /// Accepts any 8-bit image; nonzero pixels count as set.
    pub fn from_gray(resolution: Resolution, gray: &[u8]) -> Option<Self> {
        (gray.len() == resolution.pixel_count()).then(|| Self {
            resolution,
            pixels: gray.iter().map(|&v| u8::from(v != 0)).collect(),
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    /// Row-major 0/1 values.
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[y as usize * self.resolution.width as usize + x as usize]
    }

    pub fn count_set(&self) -> usize {
        self.pixels.iter().filter(|&&v| v != 0).count()
    }

    /// 0/255 grayscale copy for image files.
    pub fn to_gray(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| v * 255).collect()
    }

    fn stamp(&mut self, cx: i64, cy: i64) {
        let (w, h) = (self.resolution.width as i64, self.resolution.height as i64);
        for (dx, dy) in [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (x, y) = (cx + dx, cy + dy);
            if (0..w).contains(&x) && (0..h).contains(&y) {
                self.pixels[(y * w + x) as usize] = 1;
            }
        }
    }
}

/// Stamps every landmark as a radius-1 plus (center and 4-neighbours),
/// OR-combined and clipped at the image border.
pub fn rasterize(flm: &FacialLandmarkSet) -> LandmarkMap {
    let mut map = LandmarkMap::empty(flm.resolution);
    for p in flm.points.iter() {
        let (x, y) = p.rounded();
        map.stamp(x, y);
    }
    map
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub x_min: f32,
    pub x_max: f32,
    pub y_min: f32,
    pub y_max: f32,
}

impl Bound {
    pub fn contains(&self, p: Point) -> bool {
        (self.x_min..=self.x_max).contains(&p.x) && (self.y_min..=self.y_max).contains(&p.y)
    }

    pub fn clamp(&self, p: Point) -> Point {
        Point::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }
}

/// Per-landmark coordinate envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkBounds {
    pub resolution: Resolution,
    bounds: Vec<Bound>,
}

impl LandmarkBounds {
    pub fn new(bounds: Vec<Bound>, resolution: Resolution) -> Result<Self, FlmError> {
        if bounds.len() != LANDMARK_COUNT {
            return Err(FlmError::WrongCount(bounds.len()));
        }
        Ok(Self { resolution, bounds })
    }

    pub fn get(&self, index: usize) -> Bound {
        self.bounds[index]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Bound> {
        self.bounds.iter()
    }

    pub fn rescaled(&self, to: Resolution) -> Self {
        let sx = to.width as f32 / self.resolution.width as f32;
        let sy = to.height as f32 / self.resolution.height as f32;
        let bounds = self
            .bounds
            .iter()
            .map(|b| Bound {
                x_min: b.x_min * sx,
                x_max: b.x_max * sx,
                y_min: b.y_min * sy,
                y_max: b.y_max * sy,
            })
            .collect();
        Self { resolution: to, bounds }
    }
}

/// Clamps every coordinate into its landmark's bound.
///
/// The bounds are interpreted in the set's own resolution; bounds given at
/// another resolution are rescaled first.
pub fn clamp_landmarks(flm: &FacialLandmarkSet, bounds: &LandmarkBounds) -> FacialLandmarkSet {
    let scaled;
    let bounds = if bounds.resolution == flm.resolution {
        bounds
    } else {
        scaled = bounds.rescaled(flm.resolution);
        &scaled
    };
    let mut out = *flm;
    for (p, b) in out.points.iter_mut().zip(bounds.bounds.iter()) {
        *p = b.clamp(*p);
    }
    out
}

/// Per-landmark min/max over a non-empty set of same-resolution landmark sets.
pub fn bounds_from_dataset<'a, I>(flms: I) -> Result<LandmarkBounds, FlmError>
where
    I: IntoIterator<Item = &'a FacialLandmarkSet>,
{
    let mut iter = flms.into_iter();
    let first = iter.next().ok_or(FlmError::EmptyDataset)?;
    let mut bounds: Vec<Bound> = first
        .points
        .iter()
        .map(|p| Bound { x_min: p.x, x_max: p.x, y_min: p.y, y_max: p.y })
        .collect();
    for flm in iter {
        if flm.resolution != first.resolution {
            return Err(FlmError::MixedResolution(first.resolution, flm.resolution));
        }
        for (b, p) in bounds.iter_mut().zip(flm.points.iter()) {
            b.x_min = b.x_min.min(p.x);
            b.x_max = b.x_max.max(p.x);
            b.y_min = b.y_min.min(p.y);
            b.y_max = b.y_max.max(p.y);
        }
    }
    Ok(LandmarkBounds { resolution: first.resolution, bounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn uniform(p: Point) -> FacialLandmarkSet {
        FacialLandmarkSet::new(&[p; LANDMARK_COUNT], Resolution::REFERENCE).unwrap()
    }

    fn grid_set() -> FacialLandmarkSet {
        // 70 well separated interior points on a 10x7 grid.
        let pts: Vec<Point> = (0..LANDMARK_COUNT)
            .map(|i| Point::new(20.0 + 20.0 * (i % 10) as f32, 20.0 + 20.0 * (i / 10) as f32))
            .collect();
        FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap()
    }

    #[test]
    fn degenerate_set_is_valid() {
        let set = uniform(Point::new(0.0, 0.0));
        assert_eq!(set.points().len(), LANDMARK_COUNT);
    }

    #[test]
    fn wrong_count_is_structural_error() {
        let err = FacialLandmarkSet::new(&[Point::default(); 69], Resolution::REFERENCE).unwrap_err();
        assert_eq!(err, FlmError::WrongCount(69));
    }

    #[test]
    fn non_finite_is_rejected() {
        let mut pts = vec![Point::default(); LANDMARK_COUNT];
        pts[12].y = f32::NAN;
        let err = FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap_err();
        assert_eq!(err, FlmError::NonFinite { index: 12 });
        pts[12].y = f32::INFINITY;
        assert!(FacialLandmarkSet::new(&pts, Resolution::REFERENCE).is_err());
    }

    #[test]
    fn out_of_image_coordinates_are_accepted() {
        let set = uniform(Point::new(-40.0, 900.0));
        assert_eq!(set.point(3), Point::new(-40.0, 900.0));
    }

    #[test]
    fn coincident_landmarks_stamp_five_pixels() {
        assert_eq!(rasterize(&uniform(Point::new(128.0, 128.0))).count_set(), 5);
    }

    #[test]
    fn corner_stamp_is_clipped() {
        let mut pts = vec![Point::new(128.0, 128.0); LANDMARK_COUNT];
        pts[0] = Point::new(0.0, 0.0);
        let map = rasterize(&FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap());
        // By hand: the plus at (0,0) keeps (0,0), (1,0) and (0,1).
        let corner: usize = (0..2).flat_map(|y| (0..2).map(move |x| (x, y))).map(|(x, y)| map.get(x, y) as usize).sum();
        assert_eq!(corner, 3);
        assert_eq!(map.count_set(), 3 + 5);
    }

    #[test]
    fn disjoint_interior_stamps_count_five_each() {
        assert_eq!(rasterize(&grid_set()).count_set(), 5 * LANDMARK_COUNT);
    }

    #[test]
    fn rasterization_rounds_to_nearest() {
        let map = rasterize(&uniform(Point::new(10.6, 20.4)));
        assert_eq!(map.get(11, 20), 1);
        assert_eq!(map.get(10, 20), 1);
        assert_eq!(map.get(11, 21), 1);
        assert_eq!(map.get(10, 21), 0);
    }

    #[test]
    fn clamp_saturates_per_coordinate() {
        let set = uniform(Point::new(300.0, 10.0));
        let b = Bound { x_min: 0.0, x_max: 250.0, y_min: 20.0, y_max: 30.0 };
        let bounds = LandmarkBounds::new(vec![b; LANDMARK_COUNT], Resolution::REFERENCE).unwrap();
        let out = clamp_landmarks(&set, &bounds);
        assert_eq!(out.point(0), Point::new(250.0, 20.0));
    }

    #[test]
    fn single_set_gives_degenerate_bounds() {
        let set = grid_set();
        let bounds = bounds_from_dataset([&set]).unwrap();
        for (i, b) in bounds.iter().enumerate() {
            let p = set.point(i);
            assert_eq!((b.x_min, b.x_max, b.y_min, b.y_max), (p.x, p.x, p.y, p.y));
        }
        assert_eq!(clamp_landmarks(&set, &bounds), set);
    }

    #[test]
    fn two_sets_give_elementwise_envelope() {
        let a = grid_set();
        let mut pts = *a.points();
        for (i, p) in pts.iter_mut().enumerate() {
            p.x += if i % 2 == 0 { 3.0 } else { -2.0 };
            p.y -= i as f32 * 0.1;
        }
        let b = FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap();
        let bounds = bounds_from_dataset([&a, &b]).unwrap();
        for i in 0..LANDMARK_COUNT {
            let (pa, pb) = (a.point(i), b.point(i));
            let expect = Bound {
                x_min: if pa.x < pb.x { pa.x } else { pb.x },
                x_max: if pa.x > pb.x { pa.x } else { pb.x },
                y_min: if pa.y < pb.y { pa.y } else { pb.y },
                y_max: if pa.y > pb.y { pa.y } else { pb.y },
            };
            assert_eq!(bounds.get(i), expect);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let none: [&FacialLandmarkSet; 0] = [];
        assert_eq!(bounds_from_dataset(none).unwrap_err(), FlmError::EmptyDataset);
    }

    #[test]
    fn mirror_table_is_an_involution() {
        for (i, &m) in MIRROR.iter().enumerate() {
            assert_eq!(MIRROR[m], i);
        }
    }

    #[test]
    fn serde_uses_flat_layout() {
        let set = grid_set();
        let json = serde_json::to_value(set).unwrap();
        assert_eq!(json["points"].as_array().unwrap().len(), 140);
        assert_eq!(json["points"][2].as_f64().unwrap(), 40.0);
        let back: FacialLandmarkSet = serde_json::from_value(json).unwrap();
        assert_eq!(back, set);
    }

    fn arb_set() -> impl Strategy<Value = FacialLandmarkSet> {
        proptest::collection::vec((-20.0f32..280.0, -20.0f32..280.0), LANDMARK_COUNT).prop_map(|v| {
            let pts: Vec<Point> = v.into_iter().map(|(x, y)| Point::new(x, y)).collect();
            FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap()
        })
    }

    proptest! {
        #[test]
        fn raster_count_is_bounded(set in arb_set()) {
            let n = rasterize(&set).count_set();
            prop_assert!(n <= 5 * LANDMARK_COUNT);
            let any_visible = set.points().iter().any(|p| {
                let (x, y) = p.rounded();
                (-1..=256).contains(&x) && (-1..=256).contains(&y)
            });
            prop_assert_eq!(n >= 1, any_visible);
        }

        #[test]
        fn clamp_is_idempotent_and_monotone(set in arb_set(), other in arb_set(), probe in arb_set()) {
            let bounds = bounds_from_dataset([&set, &other]).unwrap();
            prop_assert_eq!(clamp_landmarks(&set, &bounds), set);
            prop_assert_eq!(clamp_landmarks(&other, &bounds), other);
            let once = clamp_landmarks(&probe, &bounds);
            prop_assert_eq!(clamp_landmarks(&once, &bounds), once);
            for i in 0..LANDMARK_COUNT {
                let b = bounds.get(i);
                let (before, after) = (probe.point(i), once.point(i));
                prop_assert!(b.contains(after));
                // never moves away from the interval
                let dist = |v: f32, lo: f32, hi: f32| (lo - v).max(v - hi).max(0.0);
                prop_assert!(dist(after.x, b.x_min, b.x_max) <= dist(before.x, b.x_min, b.x_max));
                prop_assert!(dist(after.y, b.y_min, b.y_max) <= dist(before.y, b.y_min, b.y_max));
            }
        }

        #[test]
        fn rasterize_depends_only_on_rounded_points(set in arb_set()) {
            prop_assert_eq!(rasterize(&set), rasterize(&set.rounded()));
        }
    }
}
