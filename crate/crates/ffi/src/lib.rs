//! C interface to the avatar pipeline. The matching declarations live in
//! `include/rgbd_avatar.h`.
//!
//! Every function returns an [`RgbdStatus`]; on failure the message is
//! available from [`rgbd_last_error`] on the same thread. Landmark arrays
//! are 70 `(x, y)` pairs of `float` in 256x256 reference pixels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use rgbd_avatar::dataset::load_paired;
use rgbd_avatar::flm::{clamp_landmarks, rasterize, FacialLandmarkSet, Point, Resolution, LANDMARK_COUNT};
use rgbd_avatar::gan::GeneratorWeights;
use rgbd_avatar::merger::{calibrate, CalibrationState, ReportSet};
use rgbd_avatar::recon::{postprocess, PostprocessConfig, DEFAULT_BASELINE_MM};
use rgbd_avatar::service::Renderer;
use rgbd_avatar::synth::{landmarks_of, ExpressionParams, IdentitySpec};
use rgbd_avatar::tracking::{PartialLandmarkReport, Source};
use rgbd_avatar::wire::{decode_frame, encode_frame, FRAME_LEN};

/// Bumped on any incompatible change to the exported functions.
pub const RGBD_ABI_VERSION: u32 = 1;
const COORDS: usize = 2 * LANDMARK_COUNT;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RgbdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    State = 5,
    Panic = 6,
}

/// Expression controls, same ranges as the JSON form.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RgbdExpression {
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

impl From<RgbdExpression> for ExpressionParams {
    fn from(e: RgbdExpression) -> Self {
        ExpressionParams {
            mouth_open: e.mouth_open,
            smile: e.smile,
            brow_raise_left: e.brow_raise_left,
            brow_raise_right: e.brow_raise_right,
            eye_open_left: e.eye_open_left,
            eye_open_right: e.eye_open_right,
            gaze_x: e.gaze_x,
            gaze_y: e.gaze_y,
            jaw_shift: e.jaw_shift,
        }
    }
}

/// Generator weights plus post-processing and a stereo rig.
pub struct RgbdGenerator {
    renderer: Renderer,
    weights: GeneratorWeights,
}

/// Calibration offsets and per-landmark bounds of one identity.
pub struct RgbdCalibrator {
    state: CalibrationState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(RgbdStatus, String);

type FfiResult<T = ()> = Result<T, Failure>;

fn fail<T>(status: RgbdStatus, msg: impl ToString) -> FfiResult<T> {
    Err(Failure(status, msg.to_string()))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, turning errors and panics into a status and the thread's
/// last error.
fn guard(f: impl FnOnce() -> FfiResult) -> RgbdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            RgbdStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RgbdStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> FfiResult<&'a [T]> {
    if ptr.is_null() {
        return fail(RgbdStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> FfiResult<&'a mut [T]> {
    if ptr.is_null() {
        return fail(RgbdStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn path<'a>(p: *const c_char) -> FfiResult<&'a Path> {
    if p.is_null() {
        return fail(RgbdStatus::NullPointer, "path is null");
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => fail(RgbdStatus::InvalidArgument, "path is not UTF-8"),
    }
}

fn landmarks(xy: &[f32]) -> FfiResult<FacialLandmarkSet> {
    let points: Vec<Point> = xy.chunks_exact(2).map(|p| Point::new(p[0], p[1])).collect();
    FacialLandmarkSet::new(&points, Resolution::REFERENCE).or_else(|e| fail(RgbdStatus::InvalidArgument, e))
}

fn write_landmarks(flm: &FacialLandmarkSet, out: &mut [f32]) {
    let flm = flm.rescaled(Resolution::REFERENCE);
    for (o, p) in out.chunks_exact_mut(2).zip(flm.points()) {
        o[0] = p.x;
        o[1] = p.y;
    }
}

fn check_len(len: usize, need: usize, what: &str) -> FfiResult {
    if len < need {
        return fail(RgbdStatus::InvalidArgument, format!("{what} holds {len} bytes, {need} needed"));
    }
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn rgbd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn rgbd_abi_version() -> u32 {
    RGBD_ABI_VERSION
}

/// Bytes in one wire frame.
#[no_mangle]
pub extern "C" fn rgbd_frame_len() -> usize {
    FRAME_LEN
}

/// # Safety
/// `xy` must point to 140 floats and `out` to `out_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rgbd_encode_frame(
    xy: *const f32,
    sequence: u32,
    timestamp_us: u64,
    out: *mut u8,
    out_len: usize,
) -> RgbdStatus {
    guard(|| {
        let flm = landmarks(slice(xy, COORDS, "xy")?)?;
        check_len(out_len, FRAME_LEN, "output")?;
        let out = slice_mut(out, FRAME_LEN, "out")?;
        let frame = encode_frame(&flm, sequence, timestamp_us).or_else(|e| fail(RgbdStatus::InvalidArgument, e))?;
        out.copy_from_slice(&frame);
        Ok(())
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes and `xy_out` to 140 floats.
/// `sequence` and `timestamp_us` may be null.
#[no_mangle]
pub unsafe extern "C" fn rgbd_decode_frame(
    bytes: *const u8,
    len: usize,
    xy_out: *mut f32,
    sequence: *mut u32,
    timestamp_us: *mut u64,
) -> RgbdStatus {
    guard(|| {
        let frame = decode_frame(slice(bytes, len, "bytes")?).or_else(|e| fail(RgbdStatus::Format, e))?;
        write_landmarks(&frame.landmarks, slice_mut(xy_out, COORDS, "xy_out")?);
        if !sequence.is_null() {
            *sequence = frame.sequence;
        }
        if !timestamp_us.is_null() {
            *timestamp_us = frame.timestamp_us;
        }
        Ok(())
    })
}

/// Landmarks of synthetic person `identity_seed` showing `expression`.
///
/// # Safety
/// `expression` must be valid and `xy_out` must point to 140 floats.
#[no_mangle]
pub unsafe extern "C" fn rgbd_synth_landmarks(
    identity_seed: u64,
    expression: *const RgbdExpression,
    xy_out: *mut f32,
) -> RgbdStatus {
    guard(|| {
        if expression.is_null() {
            return fail(RgbdStatus::NullPointer, "expression is null");
        }
        let params = ExpressionParams::from(*expression);
        let flm = landmarks_of(&IdentitySpec::from_seed(identity_seed), &params)
            .or_else(|e| fail(RgbdStatus::InvalidArgument, e))?;
        write_landmarks(&flm, slice_mut(xy_out, COORDS, "xy_out")?);
        Ok(())
    })
}

/// Loads generator weights; free the handle with [`rgbd_generator_free`].
///
/// # Safety
/// `weights_path` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_open(weights_path: *const c_char, out: *mut *mut RgbdGenerator) -> RgbdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RgbdStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let weights = GeneratorWeights::import(path(weights_path)?).or_else(|e| fail(RgbdStatus::Io, e))?;
        let post = PostprocessConfig::for_face_codes(weights.face_codes);
        let renderer = Renderer::new(&weights, post, DEFAULT_BASELINE_MM).or_else(|e| fail(RgbdStatus::Format, e))?;
        *out = Box::into_raw(Box::new(RgbdGenerator { renderer, weights }));
        Ok(())
    })
}

/// # Safety
/// `generator` must come from [`rgbd_generator_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_free(generator: *mut RgbdGenerator) {
    if !generator.is_null() {
        drop(Box::from_raw(generator));
    }
}

/// Square side of generated frames, or 0 for a null handle.
///
/// # Safety
/// `generator` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_resolution(generator: *const RgbdGenerator) -> u32 {
    generator.as_ref().map_or(0, |g| g.weights.resolution().width)
}

/// Replaces the depth cleanup settings.
///
/// # Safety
/// `generator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_set_postproc(
    generator: *mut RgbdGenerator,
    erode_radius: u32,
    clip_near: u8,
    clip_far: u8,
) -> RgbdStatus {
    guard(|| {
        let Some(g) = generator.as_mut() else { return fail(RgbdStatus::NullPointer, "generator is null") };
        let p = PostprocessConfig { erode_radius, clip_near, clip_far };
        p.validate().or_else(|e| fail(RgbdStatus::InvalidArgument, e))?;
        g.renderer.postproc = p;
        Ok(())
    })
}

/// Generates a cleaned RGBD frame: `rgb_out` takes 3·n² bytes and
/// `depth_out` n² depth codes, where n is the resolution.
///
/// # Safety
/// `generator` must be live; buffers must hold the given lengths.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_run(
    generator: *mut RgbdGenerator,
    xy: *const f32,
    rgb_out: *mut u8,
    rgb_len: usize,
    depth_out: *mut u8,
    depth_len: usize,
) -> RgbdStatus {
    guard(|| {
        let Some(g) = generator.as_mut() else { return fail(RgbdStatus::NullPointer, "generator is null") };
        let res = g.weights.resolution();
        let n = (res.width * res.height) as usize;
        check_len(rgb_len, 3 * n, "rgb_out")?;
        check_len(depth_len, n, "depth_out")?;
        let flm = landmarks(slice(xy, COORDS, "xy")?)?;
        let mut gen = g.weights.generator().or_else(|e| fail(RgbdStatus::Format, e))?;
        let frame = gen.generate(&rasterize(&flm.rescaled(res))).or_else(|e| fail(RgbdStatus::Format, e))?;
        let p = g.renderer.postproc;
        let frame = postprocess(&frame, p.erode_radius, (p.clip_near, p.clip_far));
        slice_mut(rgb_out, 3 * n, "rgb_out")?.copy_from_slice(&frame.rgb);
        slice_mut(depth_out, n, "depth_out")?.copy_from_slice(&frame.depth);
        Ok(())
    })
}

/// Full chain to two eye views, each 3·n² RGB bytes.
///
/// # Safety
/// `generator` must be live; both buffers must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn rgbd_generator_render_stereo(
    generator: *mut RgbdGenerator,
    xy: *const f32,
    left_rgb: *mut u8,
    right_rgb: *mut u8,
    len: usize,
) -> RgbdStatus {
    guard(|| {
        let Some(g) = generator.as_mut() else { return fail(RgbdStatus::NullPointer, "generator is null") };
        let res = g.weights.resolution();
        let need = 3 * (res.width * res.height) as usize;
        check_len(len, need, "view buffer")?;
        let flm = landmarks(slice(xy, COORDS, "xy")?)?;
        let mut lat = rgbd_avatar::service::LatencyTable::new();
        let out = g.renderer.render(&flm, &mut lat).or_else(|e| fail(RgbdStatus::Format, e))?;
        slice_mut(left_rgb, need, "left_rgb")?.copy_from_slice(&out.left.rgb);
        slice_mut(right_rgb, need, "right_rgb")?.copy_from_slice(&out.right.rgb);
        Ok(())
    })
}

/// Bounds and neutral pose from a paired dataset directory; offsets start
/// at zero. Free with [`rgbd_calibrator_free`].
///
/// # Safety
/// `dataset_dir` must be a nul-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rgbd_calibrator_open(dataset_dir: *const c_char, out: *mut *mut RgbdCalibrator) -> RgbdStatus {
    guard(|| {
        if out.is_null() {
            return fail(RgbdStatus::NullPointer, "out is null");
        }
        *out = std::ptr::null_mut();
        let data = load_paired(path(dataset_dir)?).or_else(|e| fail(RgbdStatus::Io, e))?;
        *out = Box::into_raw(Box::new(RgbdCalibrator { state: CalibrationState::from_dataset(&data) }));
        Ok(())
    })
}

/// # Safety
/// `calibrator` must come from [`rgbd_calibrator_open`] or be null.
#[no_mangle]
pub unsafe extern "C" fn rgbd_calibrator_free(calibrator: *mut RgbdCalibrator) {
    if !calibrator.is_null() {
        drop(Box::from_raw(calibrator));
    }
}

/// Averages `frames` complete neutral landmark sets (140 floats each) into
/// new offsets.
///
/// # Safety
/// `calibrator` must be live and `xy_frames` must hold `140 * frames` floats.
#[no_mangle]
pub unsafe extern "C" fn rgbd_calibrator_calibrate(
    calibrator: *mut RgbdCalibrator,
    xy_frames: *const f32,
    frames: usize,
) -> RgbdStatus {
    guard(|| {
        let Some(c) = calibrator.as_mut() else { return fail(RgbdStatus::NullPointer, "calibrator is null") };
        if frames == 0 {
            return fail(RgbdStatus::InvalidArgument, "no frames");
        }
        let all = slice(xy_frames, COORDS * frames, "xy_frames")?;
        let sets = all
            .chunks_exact(COORDS)
            .map(|xy| {
                let flm = landmarks(xy)?;
                let points = flm.points().iter().copied().enumerate().collect();
                Ok(ReportSet::from_reports([PartialLandmarkReport::new(Source::LowerFace, points)]))
            })
            .collect::<FfiResult<Vec<_>>>()?;
        c.state = calibrate(&sets, &c.state).or_else(|e| fail(RgbdStatus::State, e))?;
        Ok(())
    })
}

/// Adds the offsets and clamps to the bounds. `clamped_out`, if not null,
/// receives 70 flags set where clamping moved a landmark.
///
/// # Safety
/// `calibrator` must be live; `xy` and `xy_out` hold 140 floats.
#[no_mangle]
pub unsafe extern "C" fn rgbd_calibrator_apply(
    calibrator: *const RgbdCalibrator,
    xy: *const f32,
    xy_out: *mut f32,
    clamped_out: *mut u8,
) -> RgbdStatus {
    guard(|| {
        let Some(c) = calibrator.as_ref() else { return fail(RgbdStatus::NullPointer, "calibrator is null") };
        if !c.state.calibrated {
            return fail(RgbdStatus::State, "not calibrated");
        }
        let flm = landmarks(slice(xy, COORDS, "xy")?)?;
        let shifted: Vec<Point> =
            flm.points().iter().zip(&c.state.offsets).map(|(p, o)| Point::new(p.x + o.x, p.y + o.y)).collect();
        let shifted = landmarks(&shifted.iter().flat_map(|p| [p.x, p.y]).collect::<Vec<_>>())?;
        let out = clamp_landmarks(&shifted, &c.state.bounds);
        write_landmarks(&out, slice_mut(xy_out, COORDS, "xy_out")?);
        if !clamped_out.is_null() {
            let flags = slice_mut(clamped_out, LANDMARK_COUNT, "clamped_out")?;
            for (i, f) in flags.iter_mut().enumerate() {
                *f = u8::from(shifted.point(i) != out.point(i));
            }
        }
        Ok(())
    })
}
