use super::*;
use crate::mailbox::Mailbox;
use crate::synth::{landmarks_of, ExpressionParams, IdentitySpec};
use proptest::prelude::*;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

fn neutral() -> FacialLandmarkSet {
    landmarks_of(&IdentitySpec::from_seed(1), &ExpressionParams::NEUTRAL).unwrap()
}

fn constant(p: Point) -> FacialLandmarkSet {
    FacialLandmarkSet::new(&[p; LANDMARK_COUNT], Resolution::REFERENCE).unwrap()
}

#[test]
fn frame_layout() {
    let bytes = encode_frame(&constant(Point::new(0.0, 0.0)), 0x0102_0304, 0x1122_3344_5566_7788).unwrap();
    assert_eq!(bytes.len(), 298);
    assert_eq!(&bytes[..4], b"FLM1");
    assert_eq!(bytes[4], 1);
    assert_eq!(&bytes[6..10], &[4, 3, 2, 1]);
    assert_eq!(&bytes[10..18], &[0x88, 0x77, 0x66, 0x55, 0x44, 0x33, 0x22, 0x11]);
    assert!(bytes[18..].iter().all(|&b| b == 0));
    let one = encode_frame(&constant(Point::new(258.0, 1.0)), 0, 0).unwrap();
    assert_eq!(&one[18..22], &[2, 1, 1, 0]);
}

#[test]
fn bitrate_arithmetic() {
    assert_eq!(payload_bitrate(30.0), 67_200.0);
    assert_eq!(FRAME_LEN, 298);
}

#[test]
fn out_of_range_coordinates_fail() {
    let neg = neutral().with_point(5, Point::new(-0.6, 10.0)).unwrap();
    assert!(matches!(encode_frame(&neg, 0, 0), Err(WireError::Encode { index: 5, .. })));
    let big = neutral().with_point(7, Point::new(10.0, 70000.0)).unwrap();
    assert!(matches!(encode_frame(&big, 0, 0), Err(WireError::Encode { index: 7, .. })));
    // rounds to zero, so still fine
    let small = neutral().with_point(5, Point::new(-0.4, 10.0)).unwrap();
    assert!(encode_frame(&small, 0, 0).is_ok());
}

#[test]
fn other_resolutions_travel_in_reference_space() {
    let f = neutral().rescaled(Resolution::square(128));
    let back = decode_frame(&encode_frame(&f, 0, 0).unwrap()).unwrap();
    assert_eq!(back.landmarks, neutral().rounded());
}

#[test]
fn decode_errors() {
    let mut bytes = encode_frame(&neutral(), 1, 2).unwrap();
    assert!(matches!(decode_frame(&bytes[..100]), Err(WireError::Framing(100))));
    bytes[4] = 9;
    assert!(matches!(decode_frame(&bytes), Err(WireError::Protocol)));
    bytes[4] = 1;
    bytes[0] = b'X';
    assert!(matches!(decode_frame(&bytes), Err(WireError::Protocol)));
}

#[test]
fn scanner_resumes_after_corruption() {
    let mut stream = Vec::new();
    stream.extend_from_slice(&encode_frame(&neutral(), 1, 0).unwrap());
    let mut bad = encode_frame(&neutral(), 2, 0).unwrap();
    bad[0] = b'?';
    stream.extend_from_slice(&bad);
    stream.extend_from_slice(&encode_frame(&neutral(), 3, 0).unwrap());
    let mut scanner = FrameScanner::new();
    let mut sequences = Vec::new();
    let mut errors = 0;
    // feed in awkward chunk sizes
    for chunk in stream.chunks(37) {
        scanner.push(chunk);
        while let Some(r) = scanner.next_frame() {
            match r {
                Ok(f) => sequences.push(f.sequence),
                Err(WireError::Protocol) => errors += 1,
                Err(e) => panic!("{e}"),
            }
        }
    }
    assert_eq!(sequences, vec![1, 3]);
    assert!(errors >= 1);
    assert!(scanner.buffered() < FRAME_LEN);
}

#[test]
fn sequence_gaps_and_reordering() {
    let mut t = StatsTracker::new();
    let now = std::time::Instant::now();
    for s in [5, 6, 8] {
        t.record(s, now);
    }
    assert_eq!(t.snapshot().gaps, 1);
    t.record(7, now);
    let s = t.snapshot();
    assert_eq!((s.out_of_order, s.frames_received, s.last_sequence), (1, 4, Some(8)));
}

#[test]
fn zero_rate_is_rejected() {
    let config = SenderConfig { endpoint: "127.0.0.1:9".into(), rate_hz: 0.0, transport: Transport::Udp, frames: Some(1) };
    assert!(matches!(run_sender(&config, |_| Some(neutral()), &AtomicBool::new(false)), Err(WireError::InvalidConfig(_))));
}

#[test]
fn unreachable_tcp_endpoint_fails_at_startup() {
    // bind then drop to find a closed port
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = SenderConfig { endpoint: format!("127.0.0.1:{port}"), rate_hz: 30.0, transport: Transport::Tcp, frames: Some(1) };
    assert!(matches!(spawn_sender(config, |_| Some(neutral())), Err(WireError::Endpoint { .. })));
    assert!("smoke".parse::<Transport>().is_err());
}

fn loopback(transport: Transport, frames: u64, rate: f64) -> StreamStats {
    let sink = Arc::new(Mailbox::new());
    let rx = spawn_receiver("127.0.0.1:0", transport, Arc::clone(&sink)).unwrap();
    let config = SenderConfig { endpoint: rx.local_addr().to_string(), rate_hz: rate, transport, frames: Some(frames) };
    let flm = neutral();
    let sent = run_sender(&config, move |_| Some(flm.clone()), &AtomicBool::new(false)).unwrap();
    assert_eq!(sent.frames_sent, frames);
    std::thread::sleep(std::time::Duration::from_millis(100));
    let latest = sink.take().unwrap();
    assert_eq!(latest.frame.landmarks, neutral().rounded());
    rx.stop()
}

#[test]
fn udp_loopback_stream() {
    let s = loopback(Transport::Udp, 30, 60.0);
    assert_eq!(s.frames_received, 30);
    assert_eq!((s.gaps, s.out_of_order, s.decode_errors), (0, 0, 0));
    assert!((s.frame_rate_hz - 60.0).abs() < 6.0, "{}", s.frame_rate_hz);
    assert!((s.payload_bitrate_bps - s.frame_rate_hz * 2240.0).abs() < 1e-6);
}

#[test]
fn tcp_loopback_stream() {
    let s = loopback(Transport::Tcp, 20, 100.0);
    assert_eq!(s.frames_received, 20);
    assert_eq!(s.last_sequence, Some(19));
}

#[test]
fn slow_sink_sees_only_latest_frames() {
    let sink = Arc::new(Mailbox::new());
    let rx = spawn_receiver("127.0.0.1:0", Transport::Udp, Arc::clone(&sink)).unwrap();
    let config = SenderConfig { endpoint: rx.local_addr().to_string(), rate_hz: 30.0, transport: Transport::Udp, frames: Some(45) };
    let flm = neutral();
    let tx = spawn_sender(config, move |_| Some(flm.clone())).unwrap();
    let mut consumed = Vec::new();
    let mut max_depth = 0;
    while !tx.is_finished() {
        std::thread::sleep(std::time::Duration::from_millis(100));
        max_depth = max_depth.max(sink.depth());
        if let Some(f) = sink.take() {
            consumed.push(f.frame.sequence);
        }
    }
    tx.join().unwrap();
    let stats = rx.stop();
    assert!(max_depth <= 1);
    assert!((12..=17).contains(&consumed.len()), "{}", consumed.len());
    assert!(consumed.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(stats.frames_received, 45);
}

fn arb_flm() -> impl Strategy<Value = FacialLandmarkSet> {
    prop::collection::vec((0.0f32..300.0, 0.0f32..300.0), LANDMARK_COUNT).prop_map(|v| {
        let pts: Vec<Point> = v.into_iter().map(|(x, y)| Point::new(x, y)).collect();
        FacialLandmarkSet::new(&pts, Resolution::REFERENCE).unwrap()
    })
}

proptest! {
    #[test]
    fn encode_decode_round_trip(f in arb_flm(), seq in any::<u32>(), ts in any::<u64>()) {
        let bytes = encode_frame(&f, seq, ts).unwrap();
        prop_assert_eq!(bytes.len(), FRAME_LEN);
        let back = decode_frame(&bytes).unwrap();
        prop_assert_eq!(back.landmarks, f.rounded());
        prop_assert_eq!((back.sequence, back.timestamp_us), (seq, ts));
    }
}
