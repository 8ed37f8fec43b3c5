//! Fixed-size landmark frames for driving a remote avatar.
//!
//! Layout, little-endian: `"FLM1"`, version (u8), flags (u8), sequence
//! (u32), timestamp in microseconds (u64), then 70 `(x, y)` pairs of u16.
//! Every frame is [`FRAME_LEN`] bytes whatever the expression, so the
//! bandwidth at a given rate is fixed.

mod transport;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flm::{FacialLandmarkSet, Point, Resolution, LANDMARK_COUNT};

pub use transport::{
    run_sender, spawn_receiver, spawn_sender, ReceivedFrame, ReceiverHandle, SenderConfig, SenderHandle, Transport,
};

pub const MAGIC: [u8; 4] = *b"FLM1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 18;
pub const PAYLOAD_LEN: usize = LANDMARK_COUNT * 4;
pub const FRAME_LEN: usize = HEADER_LEN + PAYLOAD_LEN;
pub const DEFAULT_RATE_HZ: f64 = 30.0;

/// Payload bits per second at `rate_hz`.
pub fn payload_bitrate(rate_hz: f64) -> f64 {
    rate_hz * (PAYLOAD_LEN * 8) as f64
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("landmark {index} rounds to ({x}, {y}), outside 0..=65535")]
    Encode { index: usize, x: f64, y: f64 },
    #[error("bad magic or version")]
    Protocol,
    #[error("short frame: {0} of 298 bytes")]
    Framing(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("endpoint {endpoint}: {source}")]
    Endpoint { endpoint: String, source: std::io::Error },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct WireFrame {
    pub landmarks: FacialLandmarkSet,
    pub sequence: u32,
    pub timestamp_us: u64,
    pub flags: u8,
}

/// Encodes reference-space coordinates rounded to the nearest integer.
/// Sets at other resolutions are rescaled first.
pub fn encode_frame(flm: &FacialLandmarkSet, sequence: u32, timestamp_us: u64) -> Result<[u8; FRAME_LEN], WireError> {
    encode_frame_with_flags(flm, sequence, timestamp_us, 0)
}

pub fn encode_frame_with_flags(
    flm: &FacialLandmarkSet,
    sequence: u32,
    timestamp_us: u64,
    flags: u8,
) -> Result<[u8; FRAME_LEN], WireError> {
    let flm = if flm.resolution() == Resolution::REFERENCE { flm.clone() } else { flm.rescaled(Resolution::REFERENCE) };
    let mut out = [0u8; FRAME_LEN];
    out[..4].copy_from_slice(&MAGIC);
    out[4] = VERSION;
    out[5] = flags;
    out[6..10].copy_from_slice(&sequence.to_le_bytes());
    out[10..18].copy_from_slice(&timestamp_us.to_le_bytes());
    for (i, p) in flm.points().iter().enumerate() {
        let (x, y) = (p.x.round() as f64, p.y.round() as f64);
        if !(0.0..=65535.0).contains(&x) || !(0.0..=65535.0).contains(&y) {
            return Err(WireError::Encode { index: i, x, y });
        }
        let at = HEADER_LEN + 4 * i;
        out[at..at + 2].copy_from_slice(&(x as u16).to_le_bytes());
        out[at + 2..at + 4].copy_from_slice(&(y as u16).to_le_bytes());
    }
    Ok(out)
}

/// Decodes one frame from the start of `bytes`; coordinates come back in
/// reference space, unclamped.
pub fn decode_frame(bytes: &[u8]) -> Result<WireFrame, WireError> {
    if bytes.len() >= 5 && (bytes[..4] != MAGIC || bytes[4] != VERSION) {
        return Err(WireError::Protocol);
    }
    if bytes.len() < FRAME_LEN {
        return Err(WireError::Framing(bytes.len()));
    }
    let u16_at = |at: usize| u16::from_le_bytes([bytes[at], bytes[at + 1]]) as f32;
    let points: Vec<Point> =
        (0..LANDMARK_COUNT).map(|i| Point::new(u16_at(HEADER_LEN + 4 * i), u16_at(HEADER_LEN + 4 * i + 2))).collect();
    Ok(WireFrame {
        landmarks: FacialLandmarkSet::new(&points, Resolution::REFERENCE).expect("70 finite points"),
        sequence: u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")),
        timestamp_us: u64::from_le_bytes(bytes[10..18].try_into().expect("8 bytes")),
        flags: bytes[5],
    })
}

/// Reassembles frames from a byte stream, resynchronizing on the magic
/// after corrupt data.
#[derive(Debug, Default)]
pub struct FrameScanner {
    buffer: Vec<u8>,
}

impl FrameScanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buffer.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    /// Next complete frame, a protocol error for skipped garbage, or `None`
    /// when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<WireFrame, WireError>> {
        if self.buffer.is_empty() {
            return None;
        }
        let start = self.buffer.windows(4).position(|w| w == MAGIC);
        match start {
            Some(0) => {}
            Some(n) => {
                self.buffer.drain(..n);
                return Some(Err(WireError::Protocol));
            }
            None => {
                // keep a possible partial magic at the tail
                let keep = self.buffer.len().min(3);
                let cut = self.buffer.len() - keep;
                if cut == 0 {
                    return None;
                }
                self.buffer.drain(..cut);
                return Some(Err(WireError::Protocol));
            }
        }
        if self.buffer.len() < FRAME_LEN {
            return None;
        }
        let result = decode_frame(&self.buffer[..FRAME_LEN]);
        // a bad version skips only the magic so the scan can resync
        let consumed = if result.is_ok() { FRAME_LEN } else { 4 };
        self.buffer.drain(..consumed);
        Some(result)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamStats {
    pub frames_sent: u64,
    pub frames_received: u64,
    /// Frames whose sequence did not exceed the previous one.
    pub out_of_order: u64,
    /// Forward jumps in sequence numbers.
    pub gaps: u64,
    pub decode_errors: u64,
    pub last_sequence: Option<u32>,
    pub payload_bitrate_bps: f64,
    pub frame_rate_hz: f64,
}

/// Receive-side bookkeeping; rates come from arrival times.
#[derive(Debug, Default)]
pub struct StatsTracker {
    stats: StreamStats,
    first: Option<Instant>,
    last: Option<Instant>,
}

impl StatsTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, sequence: u32, at: Instant) {
        let s = &mut self.stats;
        match s.last_sequence {
            Some(prev) if sequence <= prev => s.out_of_order += 1,
            Some(prev) if sequence > prev + 1 => s.gaps += 1,
            _ => {}
        }
        if s.last_sequence.is_none_or(|prev| sequence > prev) {
            s.last_sequence = Some(sequence);
        }
        s.frames_received += 1;
        self.first.get_or_insert(at);
        self.last = Some(at);
        if let (Some(a), Some(b)) = (self.first, self.last) {
            let span = b.duration_since(a);
            if s.frames_received > 1 && span > Duration::ZERO {
                s.frame_rate_hz = (s.frames_received - 1) as f64 / span.as_secs_f64();
                s.payload_bitrate_bps = payload_bitrate(s.frame_rate_hz);
            }
        }
    }

    pub fn record_error(&mut self) {
        self.stats.decode_errors += 1;
    }

    pub fn snapshot(&self) -> StreamStats {
        self.stats.clone()
    }
}

/// Microseconds since the Unix epoch.
pub fn now_us() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_micros() as u64).unwrap_or(0)
}

#[cfg(test)]
mod tests;
