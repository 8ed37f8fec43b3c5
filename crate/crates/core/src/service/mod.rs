//! The running avatar service: tracker, merger and render loops on their own
//! threads, joined by single-slot mailboxes, with an HTTP control surface
//! and a `/live` WebSocket for the puppeteer client.

mod pipeline;
mod server;
mod sha1;
pub mod ws;

use std::collections::{BTreeMap, VecDeque};
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::Engine as _;
use image::{GrayImage, ImageFormat};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_paired, DatasetError};
use crate::flm::{clamp_landmarks, FacialLandmarkSet, FlmError, Point, LANDMARK_COUNT};
use crate::gan::{GanError, GeneratorWeights};
use crate::mailbox::Mailbox;
use crate::merger::{calibrate, CalibrationState, MergeError, MergerState, SourceStatus, CALIBRATION_FRAMES};
use crate::recon::PostprocessConfig;
use crate::synth::{render_hmc_views, ExpressionParams, HmcViews, SynthError};
use crate::tracking::{binarize, LowerFaceWeights, Source, TrackingError};
use crate::wire::{
    encode_frame, spawn_receiver, spawn_sender, ReceivedFrame, ReceiverHandle, SenderConfig, SenderHandle, StreamStats,
    Transport, WireError,
};

pub use pipeline::{
    apply_overrides, calibrate_neutral, format_latency, run_bench, total_mean_ms, BenchOptions, BenchReport,
    LatencyTable, RenderOutput, Renderer, StageLatency, TrackerMode, TrackerSet, STAGES,
};
pub use server::{spawn_service, ServiceHandle};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Flm(#[from] FlmError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Tracking(#[from] TrackingError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    /// Paired dataset directory; supplies the identity, bounds and neutral.
    pub data_dir: PathBuf,
    pub gan_weights: PathBuf,
    /// Needed for `hmc` tracking.
    pub cnn_weights: Option<PathBuf>,
    pub tracker: TrackerMode,
    pub tracking_hz: f64,
    /// Upper bound on the render loop.
    pub render_hz: f64,
    /// Rate of `/live` frames to each client.
    pub preview_hz: f64,
    /// Defaults to the face depth codes stored with the weights.
    pub postproc: Option<PostprocessConfig>,
    pub http_addr: String,
    /// Stream merged landmarks to this `host:port`.
    pub wire_out: Option<String>,
    /// Render landmarks received on this `host:port` instead of the local
    /// trackers.
    pub wire_in: Option<String>,
    pub transport: Transport,
    pub deadline_ms: u64,
    pub baseline_mm: f64,
    pub splat_radius: u32,
    /// Start calibrating as soon as the loops run.
    pub auto_calibrate: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            gan_weights: PathBuf::from("desk.weights"),
            cnn_weights: None,
            tracker: TrackerMode::Oracle,
            tracking_hz: 30.0,
            render_hz: 90.0,
            preview_hz: 15.0,
            postproc: None,
            http_addr: "127.0.0.1:8080".into(),
            wire_out: None,
            wire_in: None,
            transport: Transport::Udp,
            deadline_ms: crate::merger::DEFAULT_DEADLINE_MS,
            baseline_mm: crate::recon::DEFAULT_BASELINE_MM,
            splat_radius: 1,
            auto_calibrate: true,
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), ServiceError> {
        for (name, hz) in [("tracking", self.tracking_hz), ("render", self.render_hz), ("preview", self.preview_hz)] {
            if !(hz.is_finite() && hz > 0.0) {
                return Err(ServiceError::Config(format!("{name} rate must be positive, got {hz}")));
            }
        }
        if self.preview_hz > 15.0 {
            return Err(ServiceError::Config(format!("preview rate is capped at 15 Hz, got {}", self.preview_hz)));
        }
        if self.deadline_ms == 0 {
            return Err(ServiceError::Config("deadline must be positive".into()));
        }
        if let Some(p) = self.postproc {
            p.validate().map_err(ServiceError::Config)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Not calibrated; trackers run for the previews only.
    #[default]
    Idle,
    /// Re-measuring the brow baselines on a neutral face.
    Capturing,
    /// Averaging neutral frames for the offsets.
    Calibrating,
    Live,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn index(self) -> usize {
        match self {
            Side::Left => 0,
            Side::Right => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkOverride {
    pub index: usize,
    pub x: f32,
    pub y: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdRequest {
    pub side: Side,
    /// Anything in `0..=255`; values outside `1..=254` leave the side lost.
    pub value: u16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PostprocRequest {
    pub erode: u32,
    pub clip_near: u8,
    pub clip_far: u8,
}

impl From<PostprocRequest> for PostprocessConfig {
    fn from(r: PostprocRequest) -> Self {
        Self { erode_radius: r.erode, clip_near: r.clip_near, clip_far: r.clip_far }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrowStatus {
    pub side: Side,
    pub threshold: u8,
    pub tracking_ok: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceReport {
    pub source: Source,
    pub status: SourceStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub mode: Mode,
    pub tracker: TrackerMode,
    pub calibrated: bool,
    pub uptime_s: f64,
    pub frames_tracked: u64,
    pub frames_rendered: u64,
    pub tracking_fps: f64,
    pub render_fps: f64,
    pub sources: Vec<SourceReport>,
    pub brows: Vec<BrowStatus>,
    /// Landmarks the last output had to pull back into bounds.
    pub clamped: Vec<usize>,
    pub params: ExpressionParams,
    pub overrides: Vec<LandmarkOverride>,
    pub postproc: PostprocessConfig,
    pub latency: Vec<StageLatency>,
    pub wire_out: Option<StreamStats>,
    pub wire_in: Option<StreamStats>,
    pub last_error: Option<String>,
}

/// Landmarks ready to render.
#[derive(Clone, Debug, PartialEq)]
pub struct MergedFrame {
    pub sequence: u64,
    pub timestamp_us: u64,
    pub landmarks: FacialLandmarkSet,
    pub clamped: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RenderedFrame {
    pub merged: MergedFrame,
    pub output: RenderOutput,
}

/// Messages a `/live` client may send.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Params(ExpressionParams),
    /// Pins landmarks to reference-space positions; `replace` drops earlier
    /// pins first and an empty list with `replace` clears them.
    Landmarks {
        points: Vec<LandmarkOverride>,
        #[serde(default)]
        replace: bool,
    },
    Threshold(ThresholdRequest),
    Calibrate,
    Postproc(PostprocRequest),
}

/// Frames-per-second over the last second.
#[derive(Debug, Default)]
struct RateMeter {
    times: VecDeque<Instant>,
    total: u64,
}

impl RateMeter {
    fn tick(&mut self, now: Instant) {
        self.total += 1;
        self.times.push_back(now);
        while self.times.front().is_some_and(|&t| now.duration_since(t) > Duration::from_secs(1)) {
            self.times.pop_front();
        }
    }

    fn rate(&self, now: Instant) -> f64 {
        self.times.iter().filter(|&&t| now.duration_since(t) <= Duration::from_secs(1)).count() as f64
    }
}

struct Control {
    mode: Mode,
    params: ExpressionParams,
    overrides: BTreeMap<usize, Point>,
    base: CalibrationState,
    calibration: CalibrationState,
    pending: Vec<crate::merger::ReportSet>,
    postproc: PostprocessConfig,
    brow_ok: [bool; 2],
    statuses: [SourceStatus; 5],
    clamped: Vec<usize>,
    last_error: Option<String>,
}

struct Shared {
    config: ServiceConfig,
    started: Instant,
    stop: AtomicBool,
    control: Mutex<Control>,
    trackers: Mutex<TrackerSet>,
    merged: Mailbox<MergedFrame>,
    rendered: Mailbox<Arc<RenderedFrame>>,
    views: Mailbox<Arc<HmcViews>>,
    latency: Mutex<LatencyTable>,
    tracked: Mutex<RateMeter>,
    renders: Mutex<RateMeter>,
    /// Encoded stereo previews of the last rendered sequence.
    png_cache: Mutex<Option<(u64, Arc<(String, String)>)>>,
}

impl Shared {
    fn now_us(&self) -> u64 {
        self.started.elapsed().as_micros() as u64
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    fn control(&self) -> std::sync::MutexGuard<'_, Control> {
        self.control.lock().expect("control poisoned")
    }

    fn fail(&self, e: impl std::fmt::Display) {
        log::warn!("{e}");
        self.control().last_error = Some(e.to_string());
    }
}

/// The three loops plus optional wire endpoints.
pub struct Engine {
    shared: Arc<Shared>,
    threads: Mutex<Vec<JoinHandle<()>>>,
    sender: Mutex<Option<SenderHandle>>,
    receiver: Mutex<Option<ReceiverHandle>>,
}

impl Engine {
    /// Loads everything named in `config`, failing before any thread runs
    /// if a file or setting is unusable.
    pub fn start(config: ServiceConfig) -> Result<Self, ServiceError> {
        config.validate()?;
        let dataset = load_paired(&config.data_dir)?;
        let weights = GeneratorWeights::import(&config.gan_weights)?;
        if weights.resolution() != dataset.resolution {
            return Err(ServiceError::Config(format!(
                "weights are {} but the dataset is {}",
                weights.resolution(),
                dataset.resolution
            )));
        }
        let cnn = config.cnn_weights.as_deref().map(LowerFaceWeights::import).transpose()?;
        let trackers = TrackerSet::new(&dataset, config.tracker, cnn.as_ref())?;
        let postproc = config.postproc.unwrap_or_else(|| PostprocessConfig::for_face_codes(weights.face_codes));
        let mut renderer = Renderer::new(&weights, postproc, config.baseline_mm)?;
        renderer.splat_radius = config.splat_radius;
        let base = CalibrationState::from_dataset(&dataset);
        let mode = if config.auto_calibrate { Mode::Capturing } else { Mode::Idle };
        let shared = Arc::new(Shared {
            started: Instant::now(),
            stop: AtomicBool::new(false),
            control: Mutex::new(Control {
                mode,
                params: ExpressionParams::NEUTRAL,
                overrides: BTreeMap::new(),
                calibration: base.clone(),
                base,
                pending: Vec::new(),
                postproc,
                brow_ok: [false; 2],
                statuses: [SourceStatus::Missing; 5],
                clamped: Vec::new(),
                last_error: None,
            }),
            trackers: Mutex::new(trackers),
            merged: Mailbox::new(),
            rendered: Mailbox::new(),
            views: Mailbox::new(),
            latency: Mutex::new(LatencyTable::new()),
            tracked: Mutex::new(RateMeter::default()),
            renders: Mutex::new(RateMeter::default()),
            png_cache: Mutex::new(None),
            config,
        });
        let engine =
            Self { shared, threads: Mutex::new(Vec::new()), sender: Mutex::new(None), receiver: Mutex::new(None) };
        engine.spawn("tracker", tracker_loop)?;
        engine.spawn_render(renderer)?;
        engine.start_wire()?;
        Ok(engine)
    }

    fn spawn(&self, name: &str, body: fn(Arc<Shared>)) -> Result<(), ServiceError> {
        let shared = Arc::clone(&self.shared);
        let t = std::thread::Builder::new().name(name.into()).spawn(move || body(shared))?;
        self.threads.lock().expect("threads poisoned").push(t);
        Ok(())
    }

    fn spawn_render(&self, renderer: Renderer) -> Result<(), ServiceError> {
        let shared = Arc::clone(&self.shared);
        let t = std::thread::Builder::new().name("render".into()).spawn(move || render_loop(shared, renderer))?;
        self.threads.lock().expect("threads poisoned").push(t);
        Ok(())
    }

    fn start_wire(&self) -> Result<(), ServiceError> {
        let cfg = &self.shared.config;
        if let Some(endpoint) = &cfg.wire_in {
            let inbox = Arc::new(Mailbox::<ReceivedFrame>::new());
            *self.receiver.lock().expect("receiver poisoned") =
                Some(spawn_receiver(endpoint, cfg.transport, Arc::clone(&inbox))?);
            let shared = Arc::clone(&self.shared);
            let t = std::thread::Builder::new().name("wire-forward".into()).spawn(move || forward_loop(shared, inbox))?;
            self.threads.lock().expect("threads poisoned").push(t);
        }
        if let Some(endpoint) = &cfg.wire_out {
            let shared = Arc::clone(&self.shared);
            let source = move |_| loop {
                if shared.stopped() {
                    return None;
                }
                if let Some(m) = shared.merged.latest() {
                    return Some(m.landmarks);
                }
                std::thread::sleep(Duration::from_millis(10));
            };
            let sc =
                SenderConfig { endpoint: endpoint.clone(), rate_hz: cfg.tracking_hz, transport: cfg.transport, frames: None };
            *self.sender.lock().expect("sender poisoned") = Some(spawn_sender(sc, source)?);
        }
        Ok(())
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.shared.config
    }

    pub fn is_stopped(&self) -> bool {
        self.shared.stopped()
    }

    /// Restarts calibration: brow baselines first, then the neutral
    /// average. The wearer should hold a neutral face meanwhile.
    pub fn calibrate(&self) -> Mode {
        let mut c = self.shared.control();
        c.mode = Mode::Capturing;
        c.pending.clear();
        c.mode
    }

    pub fn set_threshold(&self, request: ThresholdRequest) -> Result<BrowStatus, ServiceError> {
        let value = u8::try_from(request.value)
            .map_err(|_| ServiceError::Config(format!("threshold {} is outside 0..=255", request.value)))?;
        let side = request.side.index();
        let mut trackers = self.shared.trackers.lock().expect("trackers poisoned");
        trackers.set_threshold(side, value)?;
        let ok = match self.shared.views.latest() {
            Some(v) => trackers.brow_status(&v)[side],
            None => trackers.brows[side].baseline_row.is_some(),
        };
        // written under the tracker lock so a tick in flight cannot undo it
        self.shared.control().brow_ok[side] = ok;
        drop(trackers);
        Ok(BrowStatus { side: request.side, threshold: value, tracking_ok: ok })
    }

    pub fn set_params(&self, params: ExpressionParams) -> Result<(), ServiceError> {
        params.validate()?;
        self.shared.control().params = params;
        Ok(())
    }

    pub fn set_overrides(&self, points: &[LandmarkOverride], replace: bool) -> Result<(), ServiceError> {
        for p in points {
            if p.index >= LANDMARK_COUNT || !p.x.is_finite() || !p.y.is_finite() {
                return Err(ServiceError::Config(format!("bad landmark override {p:?}")));
            }
        }
        let mut c = self.shared.control();
        if replace {
            c.overrides.clear();
        }
        c.overrides.extend(points.iter().map(|p| (p.index, Point::new(p.x, p.y))));
        Ok(())
    }

    pub fn set_postproc(&self, config: PostprocessConfig) -> Result<(), ServiceError> {
        config.validate().map_err(ServiceError::Config)?;
        self.shared.control().postproc = config;
        Ok(())
    }

    /// Applies one `/live` client message; returns the JSON reply if the
    /// message has one.
    pub fn handle(&self, message: ClientMessage) -> Result<Option<serde_json::Value>, ServiceError> {
        Ok(match message {
            ClientMessage::Params(p) => {
                self.set_params(p)?;
                None
            }
            ClientMessage::Landmarks { points, replace } => {
                self.set_overrides(&points, replace)?;
                None
            }
            ClientMessage::Threshold(r) => {
                let s = self.set_threshold(r)?;
                Some(serde_json::json!({"type": "threshold", "side": s.side, "threshold": s.threshold, "tracking_ok": s.tracking_ok}))
            }
            ClientMessage::Calibrate => Some(serde_json::json!({"type": "mode", "mode": self.calibrate()})),
            ClientMessage::Postproc(r) => {
                self.set_postproc(r.into())?;
                None
            }
        })
    }

    pub fn status(&self) -> StatusReport {
        let s = &self.shared;
        let now = Instant::now();
        let thresholds = {
            let t = s.trackers.lock().expect("trackers poisoned");
            [t.brows[0].threshold, t.brows[1].threshold]
        };
        let (tracked, renders) = (s.tracked.lock().expect("meter"), s.renders.lock().expect("meter"));
        let c = s.control();
        StatusReport {
            mode: c.mode,
            tracker: s.config.tracker,
            calibrated: c.calibration.calibrated,
            uptime_s: s.started.elapsed().as_secs_f64(),
            frames_tracked: tracked.total,
            frames_rendered: renders.total,
            tracking_fps: tracked.rate(now),
            render_fps: renders.rate(now),
            sources: Source::ALL.iter().map(|&src| SourceReport { source: src, status: c.statuses[src.index()] }).collect(),
            brows: [Side::Left, Side::Right]
                .map(|side| BrowStatus {
                    side,
                    threshold: thresholds[side.index()],
                    tracking_ok: c.brow_ok[side.index()],
                })
                .to_vec(),
            clamped: c.clamped.clone(),
            params: c.params,
            overrides: c.overrides.iter().map(|(&index, p)| LandmarkOverride { index, x: p.x, y: p.y }).collect(),
            postproc: c.postproc,
            latency: s.latency.lock().expect("latency poisoned").rows(),
            wire_out: self.sender.lock().expect("sender poisoned").as_ref().map(|h| StreamStats {
                frames_sent: h.frames_sent(),
                ..StreamStats::default()
            }),
            wire_in: self.receiver.lock().expect("receiver poisoned").as_ref().map(|h| h.stats()),
            last_error: c.last_error.clone(),
        }
    }

    pub fn latest_render(&self) -> Option<Arc<RenderedFrame>> {
        self.shared.rendered.latest()
    }

    /// Number of merged frames produced so far.
    pub fn merged_version(&self) -> u64 {
        self.shared.merged.version()
    }

    /// One `/live` frame: stereo previews of the newest render, binarized
    /// brow views, landmarks, clamped indices and stats.
    pub fn live_frame(&self) -> serde_json::Value {
        let b64 = |png: Vec<u8>| base64::engine::general_purpose::STANDARD.encode(png);
        let render = self.latest_render();
        let stereo = render.as_ref().map(|r| {
            let mut cache = self.shared.png_cache.lock().expect("cache poisoned");
            match cache.as_ref() {
                Some((seq, pngs)) if *seq == r.merged.sequence => Arc::clone(pngs),
                _ => {
                    let pngs = Arc::new((
                        b64(encode_png(r.output.left.to_image())),
                        b64(encode_png(r.output.right.to_image())),
                    ));
                    *cache = Some((r.merged.sequence, Arc::clone(&pngs)));
                    pngs
                }
            }
        });
        let brows = self.shared.views.latest().map(|v| {
            let t = self.shared.trackers.lock().expect("trackers poisoned");
            let thr = [t.brows[0].threshold, t.brows[1].threshold];
            drop(t);
            [&v.left_eye, &v.right_eye].into_iter().zip(thr).map(|(img, th)| b64(encode_png(mask_image(img, th)))).collect::<Vec<_>>()
        });
        let status = self.status();
        let landmarks = render.as_ref().map(|r| r.merged.landmarks.points().iter().map(|p| [p.x, p.y]).collect::<Vec<_>>());
        serde_json::json!({
            "type": "frame",
            "sequence": render.as_ref().map(|r| r.merged.sequence),
            "mode": status.mode,
            "left_png": stereo.as_ref().map(|s| s.0.clone()),
            "right_png": stereo.as_ref().map(|s| s.1.clone()),
            "brow_left_png": brows.as_ref().map(|b| b[0].clone()),
            "brow_right_png": brows.as_ref().map(|b| b[1].clone()),
            "landmarks": landmarks,
            "clamped": render.as_ref().map_or_else(Vec::new, |r| r.merged.clamped.clone()),
            "tracking_ok": status.brows.iter().map(|b| b.tracking_ok).collect::<Vec<_>>(),
            "stats": {
                "tracking_fps": status.tracking_fps,
                "render_fps": status.render_fps,
                "frames_rendered": status.frames_rendered,
                "latency": status.latency,
            },
        })
    }

    /// Stops every loop and waits for them.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Relaxed);
        if let Some(s) = self.sender.lock().expect("sender poisoned").take() {
            let _ = s.stop();
        }
        if let Some(r) = self.receiver.lock().expect("receiver poisoned").take() {
            r.stop();
        }
        for t in self.threads.lock().expect("threads poisoned").drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.stop();
    }
}

fn encode_png(img: impl Into<image::DynamicImage>) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.into().write_to(&mut out, ImageFormat::Png).expect("PNG into memory");
    out.into_inner()
}

/// Pixels darker than the threshold in white.
fn mask_image(img: &GrayImage, threshold: u8) -> GrayImage {
    let mut m = binarize(img, threshold);
    m.iter_mut().for_each(|v| *v *= 255);
    m
}

/// Indices where clamping moved the calibrated landmark.
fn clamped_indices(unclamped: &FacialLandmarkSet, output: &FacialLandmarkSet) -> Vec<usize> {
    (0..LANDMARK_COUNT).filter(|&i| unclamped.point(i) != output.point(i)).collect()
}

fn sleep_until(deadline: Instant) {
    if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
        std::thread::sleep(wait);
    }
}

fn tracker_loop(shared: Arc<Shared>) {
    let period = Duration::from_secs_f64(1.0 / shared.config.tracking_hz);
    let remote = shared.config.wire_in.is_some();
    let mut merger = MergerState::new(shared.config.deadline_ms);
    let mut next = Instant::now();
    let mut tick = 0u64;
    let mut sequence = 0u64;
    while !shared.stopped() {
        sleep_until(next);
        next += period;
        tick += 1;
        let ts = shared.now_us();
        let (mode, params, overrides) = {
            let c = shared.control();
            (c.mode, c.params, c.overrides.iter().map(|(&i, &p)| (i, p)).collect::<Vec<_>>())
        };
        let params = if matches!(mode, Mode::Capturing | Mode::Calibrating) { ExpressionParams::NEUTRAL } else { params };
        let mut trackers = shared.trackers.lock().expect("trackers poisoned");
        let t0 = Instant::now();
        let tracked = trackers.track(&params, ts);
        let track_ms = t0.elapsed().as_secs_f64() * 1e3;
        let (mut reports, views) = match tracked {
            Ok(r) => r,
            Err(e) => {
                drop(trackers);
                shared.fail(e);
                continue;
            }
        };
        // oracle tracking renders no cameras, so previews are made at half rate
        let views = match views {
            Some(v) => Some(v),
            None if tick % 2 == 0 => render_hmc_views(trackers.identity(), &params).ok(),
            None => None,
        };
        if mode == Mode::Capturing {
            trackers.recapture_baselines();
        }
        if let Some(v) = &views {
            shared.control().brow_ok = trackers.brow_status(v);
        }
        drop(trackers);
        shared.latency.lock().expect("latency poisoned").record("track", track_ms);
        shared.tracked.lock().expect("meter").tick(Instant::now());
        if let Some(v) = views {
            shared.views.put(Arc::new(v));
        }

        let mut c = shared.control();
        match mode {
            Mode::Idle => {}
            Mode::Capturing => {
                // a newer request may have arrived meanwhile
                if c.mode == Mode::Capturing {
                    c.mode = Mode::Calibrating;
                    c.pending.clear();
                }
            }
            Mode::Calibrating => {
                if c.mode != Mode::Calibrating {
                    continue;
                }
                c.pending.push(reports);
                if c.pending.len() >= CALIBRATION_FRAMES {
                    match calibrate(&c.pending, &c.base) {
                        Ok(cal) => {
                            c.calibration = cal;
                            c.mode = Mode::Live;
                            merger = MergerState::new(shared.config.deadline_ms);
                        }
                        Err(e) => {
                            c.mode = Mode::Idle;
                            c.last_error = Some(format!("calibration failed: {e}"));
                        }
                    }
                    c.pending.clear();
                }
            }
            Mode::Live => {
                apply_overrides(&mut reports, &overrides);
                let t = Instant::now();
                let merged = merger.merge_step(&reports, &c.calibration, ts);
                let merge_ms = t.elapsed().as_secs_f64() * 1e3;
                c.statuses = merger.status(ts);
                match merged {
                    Ok(out) => {
                        let clamped = clamped_indices(&out.offset, &out.output);
                        c.clamped.clone_from(&clamped);
                        drop(c);
                        let mut lat = shared.latency.lock().expect("latency poisoned");
                        lat.record("merge", merge_ms);
                        if let Err(e) = lat.time("wire", || encode_frame(&out.output, sequence as u32, ts)) {
                            drop(lat);
                            shared.fail(e);
                            continue;
                        }
                        drop(lat);
                        sequence += 1;
                        if !remote {
                            shared.merged.put(MergedFrame { sequence, timestamp_us: ts, landmarks: out.output, clamped });
                        }
                    }
                    Err(e) => {
                        c.last_error = Some(e.to_string());
                    }
                }
            }
        }
    }
}

/// Feeds received frames to the renderer, clamped to the identity's bounds.
fn forward_loop(shared: Arc<Shared>, inbox: Arc<Mailbox<ReceivedFrame>>) {
    let mut seen = 0;
    let mut sequence = 0;
    while !shared.stopped() {
        let Some((frame, version)) = inbox.wait_newer(seen, Duration::from_millis(50)) else { continue };
        seen = version;
        let bounds = shared.control().base.bounds.clone();
        let landmarks = clamp_landmarks(&frame.frame.landmarks, &bounds);
        let clamped = clamped_indices(&frame.frame.landmarks, &landmarks);
        sequence += 1;
        shared.control().clamped.clone_from(&clamped);
        shared.merged.put(MergedFrame { sequence, timestamp_us: frame.frame.timestamp_us, landmarks, clamped });
    }
}

fn render_loop(shared: Arc<Shared>, mut renderer: Renderer) {
    let min_period = Duration::from_secs_f64(1.0 / shared.config.render_hz);
    let mut seen = 0;
    while !shared.stopped() {
        let Some((merged, version)) = shared.merged.wait_newer(seen, Duration::from_millis(50)) else { continue };
        seen = version;
        let start = Instant::now();
        renderer.postproc = shared.control().postproc;
        let mut lat = LatencyTable::new();
        match renderer.render(&merged.landmarks, &mut lat) {
            Ok(output) => {
                shared.rendered.put(Arc::new(RenderedFrame { merged, output }));
                shared.latency.lock().expect("latency poisoned").merge_from(&lat);
                shared.renders.lock().expect("meter").tick(Instant::now());
            }
            Err(e) => shared.fail(e),
        }
        sleep_until(start + min_period);
    }
}

#[cfg(test)]
mod tests;
