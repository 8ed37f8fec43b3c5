use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs, UdpSocket};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{decode_frame, encode_frame, now_us, FrameScanner, StatsTracker, StreamStats, WireError, WireFrame, FRAME_LEN};
use crate::flm::FacialLandmarkSet;
use crate::mailbox::Mailbox;

const POLL: Duration = Duration::from_millis(20);

/// Datagrams by default: a lost frame is simply superseded by the next.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    Udp,
    Tcp,
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "udp" => Ok(Self::Udp),
            "tcp" => Ok(Self::Tcp),
            _ => Err(format!("unknown transport {s:?}, expected udp or tcp")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SenderConfig {
    /// `host:port`.
    pub endpoint: String,
    pub rate_hz: f64,
    pub transport: Transport,
    /// Stop after this many frames; `None` runs until stopped or the source
    /// ends.
    pub frames: Option<u64>,
}

impl SenderConfig {
    pub fn validate(&self) -> Result<(), WireError> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(WireError::InvalidConfig(format!("rate must be positive, got {}", self.rate_hz)));
        }
        Ok(())
    }
}

fn resolve(endpoint: &str) -> Result<SocketAddr, WireError> {
    let err = |source| WireError::Endpoint { endpoint: endpoint.to_string(), source };
    endpoint
        .to_socket_addrs()
        .map_err(err)?
        .next()
        .ok_or_else(|| err(std::io::Error::new(ErrorKind::NotFound, "no address")))
}

enum Link {
    Udp(UdpSocket),
    Tcp(TcpStream),
}

impl Link {
    fn open(config: &SenderConfig) -> Result<Self, WireError> {
        config.validate()?;
        let addr = resolve(&config.endpoint)?;
        let err = |source| WireError::Endpoint { endpoint: config.endpoint.clone(), source };
        Ok(match config.transport {
            Transport::Udp => {
                let local = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
                let socket = UdpSocket::bind(local).map_err(err)?;
                socket.connect(addr).map_err(err)?;
                Link::Udp(socket)
            }
            Transport::Tcp => {
                let stream = TcpStream::connect_timeout(&addr, Duration::from_secs(2)).map_err(err)?;
                stream.set_nodelay(true).map_err(err)?;
                Link::Tcp(stream)
            }
        })
    }

    fn send(&mut self, frame: &[u8]) -> Result<(), WireError> {
        match self {
            // no listener yet or a dropped datagram is not fatal
            Link::Udp(s) => {
                let _ = s.send(frame);
                Ok(())
            }
            Link::Tcp(s) => Ok(s.write_all(frame)?),
        }
    }
}

fn pace(
    mut link: Link,
    config: &SenderConfig,
    mut source: impl FnMut(u64) -> Option<FacialLandmarkSet>,
    stop: &AtomicBool,
    sent: &AtomicU64,
) -> Result<StreamStats, WireError> {
    let period = Duration::from_secs_f64(1.0 / config.rate_hz);
    let start = Instant::now();
    let mut i = 0u64;
    while config.frames.is_none_or(|n| i < n) && !stop.load(Ordering::Relaxed) {
        // absolute deadlines keep the average rate exact despite jitter
        let deadline = start + period.mul_f64(i as f64);
        if let Some(wait) = deadline.checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
        let Some(flm) = source(i) else { break };
        link.send(&encode_frame(&flm, i as u32, now_us())?)?;
        i += 1;
        sent.store(i, Ordering::Relaxed);
    }
    Ok(StreamStats { frames_sent: i, ..StreamStats::default() })
}

/// Sends one frame per period from `source(frame_index)` until the frame
/// limit, the end of the source, or `stop`.
pub fn run_sender(
    config: &SenderConfig,
    source: impl FnMut(u64) -> Option<FacialLandmarkSet>,
    stop: &AtomicBool,
) -> Result<StreamStats, WireError> {
    let link = Link::open(config)?;
    pace(link, config, source, stop, &AtomicU64::new(0))
}

pub struct SenderHandle {
    stop: Arc<AtomicBool>,
    sent: Arc<AtomicU64>,
    thread: JoinHandle<Result<StreamStats, WireError>>,
}

impl SenderHandle {
    pub fn frames_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub fn is_finished(&self) -> bool {
        self.thread.is_finished()
    }

    pub fn stop(self) -> Result<StreamStats, WireError> {
        self.stop.store(true, Ordering::Relaxed);
        self.join()
    }

    pub fn join(self) -> Result<StreamStats, WireError> {
        self.thread.join().expect("sender thread panicked")
    }
}

/// Connects (reporting endpoint errors immediately) and sends on a
/// background thread.
pub fn spawn_sender(
    config: SenderConfig,
    source: impl FnMut(u64) -> Option<FacialLandmarkSet> + Send + 'static,
) -> Result<SenderHandle, WireError> {
    let link = Link::open(&config)?;
    let stop = Arc::new(AtomicBool::new(false));
    let sent = Arc::new(AtomicU64::new(0));
    let (s, n) = (Arc::clone(&stop), Arc::clone(&sent));
    let thread = std::thread::Builder::new()
        .name("wire-sender".into())
        .spawn(move || pace(link, &config, source, &s, &n))
        .map_err(WireError::Io)?;
    Ok(SenderHandle { stop, sent, thread })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedFrame {
    pub frame: WireFrame,
    pub received_at: Instant,
}

pub struct ReceiverHandle {
    local_addr: SocketAddr,
    stats: Arc<Mutex<StatsTracker>>,
    stop: Arc<AtomicBool>,
    thread: JoinHandle<()>,
}

impl ReceiverHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn stats(&self) -> StreamStats {
        self.stats.lock().expect("stats poisoned").snapshot()
    }

    pub fn stop(self) -> StreamStats {
        self.stop.store(true, Ordering::Relaxed);
        self.thread.join().expect("receiver thread panicked");
        self.stats.lock().expect("stats poisoned").snapshot()
    }
}

fn deliver(result: Result<WireFrame, WireError>, stats: &Mutex<StatsTracker>, sink: &Mailbox<ReceivedFrame>) {
    let now = Instant::now();
    let mut s = stats.lock().expect("stats poisoned");
    match result {
        Ok(frame) => {
            s.record(frame.sequence, now);
            drop(s);
            sink.put(ReceivedFrame { frame, received_at: now });
        }
        Err(_) => s.record_error(),
    }
}

/// Binds `endpoint` and hands every decoded frame to `sink`, which keeps
/// only the newest, so a slow consumer never builds a queue.
pub fn spawn_receiver(
    endpoint: &str,
    transport: Transport,
    sink: Arc<Mailbox<ReceivedFrame>>,
) -> Result<ReceiverHandle, WireError> {
    let addr = resolve(endpoint)?;
    let err = |source| WireError::Endpoint { endpoint: endpoint.to_string(), source };
    let stats = Arc::new(Mutex::new(StatsTracker::new()));
    let stop = Arc::new(AtomicBool::new(false));
    let (st, sp) = (Arc::clone(&stats), Arc::clone(&stop));
    let (local_addr, thread) = match transport {
        Transport::Udp => {
            let socket = UdpSocket::bind(addr).map_err(err)?;
            socket.set_read_timeout(Some(POLL)).map_err(err)?;
            let local = socket.local_addr().map_err(err)?;
            let t = std::thread::Builder::new().name("wire-receiver".into()).spawn(move || {
                let mut buf = [0u8; 2048];
                while !sp.load(Ordering::Relaxed) {
                    match socket.recv(&mut buf) {
                        Ok(n) => deliver(decode_frame(&buf[..n]), &st, &sink),
                        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
                        Err(_) => std::thread::sleep(POLL),
                    }
                }
            });
            (local, t)
        }
        Transport::Tcp => {
            let listener = TcpListener::bind(addr).map_err(err)?;
            listener.set_nonblocking(true).map_err(err)?;
            let local = listener.local_addr().map_err(err)?;
            let t = std::thread::Builder::new().name("wire-receiver".into()).spawn(move || {
                while !sp.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((stream, _)) => serve_stream(stream, &sp, &st, &sink),
                        Err(_) => std::thread::sleep(POLL),
                    }
                }
            });
            (local, t)
        }
    };
    Ok(ReceiverHandle { local_addr, stats, stop, thread: thread.map_err(WireError::Io)? })
}

fn serve_stream(mut stream: TcpStream, stop: &AtomicBool, stats: &Mutex<StatsTracker>, sink: &Mailbox<ReceivedFrame>) {
    if stream.set_nonblocking(false).and_then(|_| stream.set_read_timeout(Some(POLL))).is_err() {
        return;
    }
    let mut scanner = FrameScanner::new();
    let mut buf = [0u8; 4 * FRAME_LEN];
    while !stop.load(Ordering::Relaxed) {
        match stream.read(&mut buf) {
            Ok(0) => return,
            Ok(n) => {
                scanner.push(&buf[..n]);
                while let Some(result) = scanner.next_frame() {
                    deliver(result, stats, sink);
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
}
