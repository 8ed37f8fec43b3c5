//! The live stages shared by the service loops and the benchmark: tracker
//! simulation, merging, and landmarks-to-stereo rendering.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{build_capture_script, CaptureConfig, PairedDataset};
use crate::flm::{rasterize, FacialLandmarkSet, Point, Resolution};
use crate::gan::{AvatarGenerator, GeneratorWeights};
use crate::merger::{calibrate, CalibrationState, MergerState, ReportSet, CALIBRATION_FRAMES, PRECEDENCE};
use crate::recon::{postprocess, render_stereo, unproject, CameraModel, PostprocessConfig, RenderedImage};
use crate::synth::{landmarks_of, render_hmc_views, ExpressionParams, HmcViews, IdentitySpec, RgbdFrame};
use crate::tracking::{
    gaze_source, otsu_threshold, track_brow, BrowTrackState, EyeControls, LowerFaceTracker, LowerFaceWeights,
    PartialLandmarkReport, Source, DEFAULT_BROW_BAND,
};
use crate::wire::encode_frame;

use super::ServiceError;

/// Stage names in pipeline order.
pub const STAGES: [&str; 9] =
    ["track", "merge", "wire", "rasterize", "generate", "postprocess", "unproject", "render_left", "render_right"];
const WINDOW: usize = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: String,
    pub last_ms: f64,
    pub mean_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

/// Rolling per-stage timings over the last 120 samples.
#[derive(Clone, Debug, Default)]
pub struct LatencyTable {
    stages: Vec<(&'static str, VecDeque<f64>)>,
}

impl LatencyTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: &'static str, ms: f64) {
        let slot = match self.stages.iter().position(|(s, _)| *s == stage) {
            Some(i) => i,
            None => {
                self.stages.push((stage, VecDeque::with_capacity(WINDOW)));
                let order = |s: &str| STAGES.iter().position(|&x| x == s).unwrap_or(STAGES.len());
                self.stages.sort_by_key(|(s, _)| order(s));
                self.stages.iter().position(|(s, _)| *s == stage).expect("just inserted")
            }
        };
        let q = &mut self.stages[slot].1;
        if q.len() == WINDOW {
            q.pop_front();
        }
        q.push_back(ms);
    }

    /// Times `f` and records it under `stage`.
    pub fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.record(stage, t.elapsed().as_secs_f64() * 1e3);
        out
    }

    pub fn merge_from(&mut self, other: &LatencyTable) {
        for (stage, q) in &other.stages {
            for &v in q {
                self.record(stage, v);
            }
        }
    }

    pub fn rows(&self) -> Vec<StageLatency> {
        self.stages
            .iter()
            .map(|(s, q)| StageLatency {
                stage: s.to_string(),
                last_ms: q.back().copied().unwrap_or(0.0),
                mean_ms: q.iter().sum::<f64>() / q.len().max(1) as f64,
                max_ms: q.iter().copied().fold(0.0, f64::max),
                samples: q.len(),
            })
            .collect()
    }
}

/// Sum of the mean stage times.
pub fn total_mean_ms(rows: &[StageLatency]) -> f64 {
    rows.iter().map(|r| r.mean_ms).sum()
}

/// Fixed-width text rendering of a latency table.
pub fn format_latency(rows: &[StageLatency]) -> String {
    let mut out = format!("{:<14}{:>10}{:>10}{:>10}\n", "stage", "mean ms", "max ms", "samples");
    for r in rows {
        let _ = writeln!(out, "{:<14}{:>10.3}{:>10.3}{:>10}", r.stage, r.mean_ms, r.max_ms, r.samples);
    }
    let _ = writeln!(out, "{:<14}{:>10.3}", "total", total_mean_ms(rows));
    out
}

/// Where tracker reports come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackerMode {
    /// Landmarks straight from the synthetic face; no cameras are rendered.
    #[default]
    Oracle,
    /// Simulated headset cameras read by the lower-face network and the
    /// brow trackers.
    Hmc,
}

impl FromStr for TrackerMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "hmc" => Ok(Self::Hmc),
            _ => Err(format!("unknown tracker mode {s:?}, expected oracle or hmc")),
        }
    }
}

/// All five trackers for one identity.
pub struct TrackerSet {
    pub mode: TrackerMode,
    identity: IdentitySpec,
    /// Reference-space neutral landmarks of the identity.
    neutral: FacialLandmarkSet,
    subset: Vec<usize>,
    lower: Option<LowerFaceTracker>,
    pub brows: [BrowTrackState; 2],
    neutral_views: HmcViews,
}

impl TrackerSet {
    /// `cnn` is required in [`TrackerMode::Hmc`].
    pub fn new(dataset: &PairedDataset, mode: TrackerMode, cnn: Option<&LowerFaceWeights>) -> Result<Self, ServiceError> {
        let identity = dataset.identity.clone();
        let neutral = landmarks_of(&identity, &ExpressionParams::NEUTRAL)?;
        let neutral_views = render_hmc_views(&identity, &ExpressionParams::NEUTRAL)?;
        let brows = [0, 1].map(|side| {
            let view = if side == 0 { &neutral_views.left_eye } else { &neutral_views.right_eye };
            let points = std::array::from_fn(|k| neutral.point(17 + 5 * side + k));
            let mut s = BrowTrackState::new(side, otsu_threshold(view, DEFAULT_BROW_BAND), points)?;
            s.calibrate(view)?;
            Ok::<_, ServiceError>(s)
        });
        let [l, r] = brows;
        let lower = match (mode, cnn) {
            (TrackerMode::Hmc, Some(w)) => Some(w.tracker()?),
            (TrackerMode::Hmc, None) => {
                return Err(ServiceError::Config("hmc tracking needs lower-face weights".into()));
            }
            (TrackerMode::Oracle, _) => None,
        };
        let subset = lower.as_ref().map_or_else(|| dataset.subset_indices.clone(), |t| t.subset_indices().to_vec());
        Ok(Self { mode, identity, neutral, subset, lower, brows: [l?, r?], neutral_views })
    }

    pub fn identity(&self) -> &IdentitySpec {
        &self.identity
    }

    /// Sets a brow threshold and re-measures that side's neutral baseline.
    /// Values outside `[1, 254]` are kept, and that side then reports lost.
    pub fn set_threshold(&mut self, side: usize, value: u8) -> Result<bool, ServiceError> {
        let state = self.brows.get_mut(side).ok_or_else(|| ServiceError::Config(format!("side {side} is not 0 or 1")))?;
        state.threshold = value;
        let view = if side == 0 { &self.neutral_views.left_eye } else { &self.neutral_views.right_eye };
        let ok = state.validate().is_ok() && state.calibrate(view).is_ok();
        if !ok {
            state.baseline_row = None;
        }
        Ok(ok)
    }

    /// Re-measures both brow baselines on the neutral views; a side with an
    /// unusable threshold comes back `false`.
    pub fn recapture_baselines(&mut self) -> [bool; 2] {
        [0, 1].map(|side| self.set_threshold(side, self.brows[side].threshold).unwrap_or(false))
    }

    /// Whether each brow tracker finds an edge in the given eye views.
    pub fn brow_status(&self, views: &HmcViews) -> [bool; 2] {
        let imgs = [&views.left_eye, &views.right_eye];
        [0, 1].map(|side| track_brow(imgs[side], &self.brows[side]).is_ok_and(|r| !r.lost))
    }

    /// Reports for one frame of the wearer showing `params`, plus the
    /// camera images when they were rendered.
    pub fn track(
        &mut self,
        params: &ExpressionParams,
        timestamp_us: u64,
    ) -> Result<(ReportSet, Option<HmcViews>), ServiceError> {
        let [eye_l, eye_r] = gaze_source(&EyeControls::from(params), &self.neutral)?;
        let mut set = ReportSet::from_reports([eye_l, eye_r]);
        let views = match self.mode {
            TrackerMode::Oracle => {
                let flm = landmarks_of(&self.identity, params)?;
                let pick = |idx: &mut dyn Iterator<Item = usize>| idx.map(|i| (i, flm.point(i))).collect::<Vec<_>>();
                set.insert(PartialLandmarkReport::new(Source::LowerFace, pick(&mut self.subset.iter().copied())));
                for s in &self.brows {
                    set.insert(PartialLandmarkReport::new(s.source(), pick(&mut s.indices())));
                }
                None
            }
            TrackerMode::Hmc => {
                let views = render_hmc_views(&self.identity, params)?;
                let lower = self.lower.as_mut().expect("hmc mode has a lower-face tracker");
                set.insert(lower.track(&views.lower_face)?);
                for (s, img) in self.brows.iter().zip([&views.left_eye, &views.right_eye]) {
                    set.insert(track_brow(img, s).unwrap_or_else(|_| PartialLandmarkReport::lost(s.source())));
                }
                Some(views)
            }
        };
        let stamped = Source::ALL.into_iter().filter_map(|s| set.remove(s)).map(|r| r.at(timestamp_us)).collect::<Vec<_>>();
        Ok((ReportSet::from_reports(stamped), views))
    }
}

/// Replaces reported points with operator overrides in the report that
/// would win the merge; an index no source covers is attached to the lower-face report.
pub fn apply_overrides(set: &mut ReportSet, overrides: &[(usize, Point)]) {
    for &(index, p) in overrides {
        let owner = PRECEDENCE.into_iter().rev().find(|&s| set.get(s).is_some_and(|r| r.point(index).is_some()));
        let source = owner.unwrap_or(Source::LowerFace);
        let mut r = set.remove(source).unwrap_or_else(|| PartialLandmarkReport::new(source, Vec::new()));
        match r.points.iter_mut().find(|(i, _)| *i == index) {
            Some(slot) => slot.1 = p,
            None => r.points.push((index, p)),
        }
        r.lost = false;
        set.insert(r);
    }
}

/// Generated frame after cleanup and its two rendered views.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub frame: RgbdFrame,
    pub left: RenderedImage,
    pub right: RenderedImage,
}

/// Landmarks to stereo images: rasterize, generate, clean, unproject,
/// splat into both eyes.
pub struct Renderer {
    generator: AvatarGenerator,
    pub postproc: PostprocessConfig,
    cameras: (CameraModel, CameraModel),
    capture: CameraModel,
    pub splat_radius: u32,
}

impl Renderer {
    pub fn new(weights: &GeneratorWeights, postproc: PostprocessConfig, baseline_mm: f64) -> Result<Self, ServiceError> {
        postproc.validate().map_err(ServiceError::Config)?;
        let capture = CameraModel::capture(weights.resolution());
        Ok(Self {
            generator: weights.generator()?,
            postproc,
            cameras: capture.stereo_pair(baseline_mm),
            capture,
            splat_radius: 1,
        })
    }

    pub fn resolution(&self) -> Resolution {
        self.generator.resolution()
    }

    pub fn render(&mut self, flm: &FacialLandmarkSet, lat: &mut LatencyTable) -> Result<RenderOutput, ServiceError> {
        let res = self.resolution();
        let map = lat.time("rasterize", || rasterize(&flm.rescaled(res)));
        let generated = lat.time("generate", || self.generator.generate(&map))?;
        let p = self.postproc;
        let frame = lat.time("postprocess", || postprocess(&generated, p.erode_radius, (p.clip_near, p.clip_far)));
        let cloud = lat.time("unproject", || unproject(&frame, &self.capture));
        let (left, right, timing) = render_stereo(&cloud, &self.cameras.0, &self.cameras.1, self.splat_radius);
        lat.record("render_left", timing.left_ms);
        lat.record("render_right", timing.right_ms);
        Ok(RenderOutput { frame, left, right })
    }
}

/// A calibration on exact neutral tracker output.
pub fn calibrate_neutral(trackers: &mut TrackerSet, dataset: &PairedDataset) -> Result<CalibrationState, ServiceError> {
    let sets = (0..CALIBRATION_FRAMES)
        .map(|i| trackers.track(&ExpressionParams::NEUTRAL, i as u64).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(calibrate(&sets, &CalibrationState::from_dataset(dataset))?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub frames: usize,
    pub mode: TrackerMode,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { frames: 300, mode: TrackerMode::Oracle, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub mode: TrackerMode,
    pub wall_s: f64,
    /// Frames carried from expression input to both rendered views per
    /// second, back to back.
    pub fps: f64,
    pub latency: Vec<StageLatency>,
}

impl BenchReport {
    pub fn sustains(&self, rate_hz: f64) -> bool {
        self.fps >= rate_hz
    }
}

/// Drives the whole live chain frame after frame as fast as it goes over
/// a scripted expression sequence and times every stage.
pub fn run_bench(
    weights: &GeneratorWeights,
    dataset: &PairedDataset,
    cnn: Option<&LowerFaceWeights>,
    options: &BenchOptions,
) -> Result<BenchReport, ServiceError> {
    if options.frames == 0 {
        return Err(ServiceError::Config("bench needs at least one frame".into()));
    }
    let mut trackers = TrackerSet::new(dataset, options.mode, cnn)?;
    let calib = calibrate_neutral(&mut trackers, dataset)?;
    let mut merger = MergerState::default();
    let mut renderer = Renderer::new(weights, PostprocessConfig::for_face_codes(weights.face_codes), 65.0)?;
    let script = build_capture_script(&CaptureConfig { seed: options.seed, ..CaptureConfig::default() });
    let mut lat = LatencyTable::new();
    let start = Instant::now();
    for i in 0..options.frames {
        let params = script.frames[i % script.frames.len()].params;
        let ts = i as u64 * 33_333;
        let (reports, _) = lat.time("track", || trackers.track(&params, ts))?;
        let merged = lat.time("merge", || merger.merge_step(&reports, &calib, ts))?;
        lat.time("wire", || encode_frame(&merged.output, i as u32, ts))?;
        renderer.render(&merged.output, &mut lat)?;
    }
    let wall_s = start.elapsed().as_secs_f64();
    Ok(BenchReport {
        frames: options.frames,
        mode: options.mode,
        wall_s,
        fps: options.frames as f64 / wall_s,
        latency: lat.rows(),
    })
}
