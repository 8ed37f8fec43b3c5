use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::synth::ExpressionParams;

/// Tracking rate the sentence trajectories are sampled at.
const FRAME_RATE: f32 = 30.0;
/// Free talk is sampled sparsely so 200 frames span a long conversation.
const TALK_STEP_S: f32 = 0.2;
const REPEAT_JITTER: f32 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Segment {
    ExpressionPose,
    Sentence,
    FreeTalk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    /// Passes over the 26-pose expression table.
    pub repeats: usize,
    pub sentences: usize,
    pub frames_per_sentence: usize,
    pub talk_frames: usize,
    pub seed: u64,
}

impl Default for CaptureConfig {
    /// 26 x 3 + 20 x 16 + 202 = 600 frames.
    fn default() -> Self {
        Self { repeats: 3, sentences: 20, frames_per_sentence: 16, talk_frames: 202, seed: 0 }
    }
}

impl CaptureConfig {
    pub fn total_frames(&self) -> usize {
        let poses = if self.repeats == 0 { 1 } else { 26 * self.repeats };
        poses + self.sentences * self.frames_per_sentence + self.talk_frames
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptFrame {
    pub params: ExpressionParams,
    pub segment: Segment,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaptureScript {
    pub config: CaptureConfig,
    pub frames: Vec<ScriptFrame>,
    /// Index of the exact neutral frame.
    pub neutral_index: usize,
}

fn pose(f: impl FnOnce(&mut ExpressionParams)) -> ExpressionParams {
    let mut p = ExpressionParams::NEUTRAL;
    f(&mut p);
    p
}

/// The 26 posed expressions; entry 0 is neutral.
pub fn expression_table() -> [ExpressionParams; 26] {
    [
        ExpressionParams::NEUTRAL,
        pose(|p| p.mouth_open = 1.0),
        pose(|p| p.mouth_open = 0.5),
        pose(|p| p.smile = 1.0),
        pose(|p| {
            p.smile = 0.8;
            p.mouth_open = 0.6;
        }),
        pose(|p| p.smile = -1.0),
        pose(|p| {
            p.smile = -0.7;
            p.mouth_open = 0.7;
        }),
        pose(|p| {
            p.brow_raise_left = 1.0;
            p.brow_raise_right = 1.0;
        }),
        pose(|p| {
            p.brow_raise_left = -1.0;
            p.brow_raise_right = -1.0;
        }),
        pose(|p| p.brow_raise_left = 1.0),
        pose(|p| p.brow_raise_right = 1.0),
        pose(|p| {
            p.eye_open_left = 0.0;
            p.eye_open_right = 0.0;
        }),
        pose(|p| p.eye_open_left = 0.0),
        pose(|p| p.eye_open_right = 0.0),
        pose(|p| p.gaze_x = -1.0),
        pose(|p| p.gaze_x = 1.0),
        pose(|p| p.gaze_y = -1.0),
        pose(|p| p.gaze_y = 1.0),
        pose(|p| p.jaw_shift = -1.0),
        pose(|p| p.jaw_shift = 1.0),
        pose(|p| {
            p.brow_raise_left = 1.0;
            p.brow_raise_right = 1.0;
            p.mouth_open = 0.9;
        }),
        pose(|p| {
            p.brow_raise_left = -0.8;
            p.brow_raise_right = -0.8;
            p.smile = -0.6;
            p.eye_open_left = 0.7;
            p.eye_open_right = 0.7;
        }),
        pose(|p| {
            p.eye_open_left = 0.3;
            p.eye_open_right = 0.3;
            p.smile = 0.5;
        }),
        pose(|p| {
            p.jaw_shift = -0.8;
            p.mouth_open = 0.6;
        }),
        pose(|p| {
            p.brow_raise_left = -1.0;
            p.brow_raise_right = 1.0;
        }),
        pose(|p| {
            p.mouth_open = 0.6;
            p.smile = -0.5;
        }),
    ]
}

/// Sum of three random sinusoids, roughly within [-1, 1].
struct Smooth {
    terms: [(f32, f32, f32); 3],
}

impl Smooth {
    fn new(rng: &mut ChaCha8Rng, min_hz: f32, max_hz: f32) -> Self {
        let mut term = || (rng.random_range(0.2..0.5), rng.random_range(min_hz..max_hz), rng.random_range(0.0..TAU));
        Self { terms: [term(), term(), term()] }
    }

    fn at(&self, t: f32) -> f32 {
        self.terms.iter().map(|&(a, f, phi)| a * (TAU * f * t + phi).sin()).sum()
    }
}

fn jittered(p: &ExpressionParams, rng: &mut ChaCha8Rng) -> ExpressionParams {
    let mut j = |v: f32| v + rng.random_range(-REPEAT_JITTER..REPEAT_JITTER);
    ExpressionParams {
        mouth_open: j(p.mouth_open),
        smile: j(p.smile),
        brow_raise_left: j(p.brow_raise_left),
        brow_raise_right: j(p.brow_raise_right),
        eye_open_left: j(p.eye_open_left),
        eye_open_right: j(p.eye_open_right),
        gaze_x: j(p.gaze_x),
        gaze_y: j(p.gaze_y),
        jaw_shift: j(p.jaw_shift),
    }
    .clamped()
}

/// Deterministic recording session for `config.seed`.
///
/// The first pass over the expression table is exact; later passes jitter
/// every field by up to 0.05. With `repeats == 0` only the neutral frame
/// of the expression block remains.
pub fn build_capture_script(config: &CaptureConfig) -> CaptureScript {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut frames = Vec::with_capacity(config.total_frames());
    let table = expression_table();
    if config.repeats == 0 {
        frames.push(ScriptFrame { params: table[0], segment: Segment::ExpressionPose });
    }
    for r in 0..config.repeats {
        for p in &table {
            let params = if r == 0 { *p } else { jittered(p, &mut rng) };
            frames.push(ScriptFrame { params, segment: Segment::ExpressionPose });
        }
    }

    for _ in 0..config.sentences {
        let mouth = Smooth::new(&mut rng, 1.0, 4.0);
        let smile = Smooth::new(&mut rng, 0.2, 1.0);
        let jaw = Smooth::new(&mut rng, 0.2, 1.0);
        let level = rng.random_range(0.3..0.6);
        for k in 0..config.frames_per_sentence {
            let t = k as f32 / FRAME_RATE;
            let params = ExpressionParams {
                mouth_open: level + 0.6 * mouth.at(t),
                smile: 0.3 * smile.at(t),
                jaw_shift: 0.3 * jaw.at(t),
                ..ExpressionParams::NEUTRAL
            }
            .clamped();
            frames.push(ScriptFrame { params, segment: Segment::Sentence });
        }
    }

    let signals: Vec<Smooth> = (0..9).map(|_| Smooth::new(&mut rng, 0.05, 0.8)).collect();
    for k in 0..config.talk_frames {
        let t = k as f32 * TALK_STEP_S;
        let s = |i: usize| signals[i].at(t);
        // occasional blinks: openness dips when the slow signal peaks
        let eye = |i: usize| (1.0 - 0.6 * s(i).max(0.0) * 1.6).clamp(0.0, 1.0);
        let params = ExpressionParams {
            mouth_open: 0.35 + 0.6 * s(0),
            smile: 0.8 * s(1),
            brow_raise_left: 0.6 * s(2) + 0.3 * s(3),
            brow_raise_right: 0.6 * s(2) - 0.3 * s(3),
            eye_open_left: eye(4),
            eye_open_right: eye(4).min(eye(5) + 0.3),
            gaze_x: 1.1 * s(6),
            gaze_y: 1.1 * s(7),
            jaw_shift: 0.7 * s(8),
        }
        .clamped();
        frames.push(ScriptFrame { params, segment: Segment::FreeTalk });
    }
    CaptureScript { config: config.clone(), frames, neutral_index: 0 }
}
