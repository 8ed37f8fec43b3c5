//! The HTTP control surface and the `/live` channel against a running
//! service with small untrained weights.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};

use rgbd_avatar::dataset::{build_capture_script, build_paired_dataset, save_paired, CaptureConfig};
use rgbd_avatar::flm::Resolution;
use rgbd_avatar::gan::{GanConfig, GanTrainer};
use rgbd_avatar::service::ws::{self, Message};
use rgbd_avatar::service::{spawn_service, ServiceConfig, ServiceHandle};
use rgbd_avatar::synth::IdentitySpec;

fn fixture(dir: &Path) -> ServiceConfig {
    let capture = CaptureConfig { repeats: 1, sentences: 0, frames_per_sentence: 0, talk_frames: 0, seed: 1 };
    let data =
        build_paired_dataset(&build_capture_script(&capture), &IdentitySpec::from_seed(7), Resolution::square(32)).unwrap();
    save_paired(&data, &dir.join("data")).unwrap();
    let config = GanConfig { resolution: 32, ngf: 8, ndf: 8, ..GanConfig::desk() };
    GanTrainer::new(&data, config).unwrap().weights().export(&dir.join("g.weights")).unwrap();
    ServiceConfig {
        data_dir: dir.join("data"),
        gan_weights: dir.join("g.weights"),
        http_addr: "127.0.0.1:0".into(),
        ..ServiceConfig::default()
    }
}

fn request(addr: SocketAddr, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let code = raw[9..12].parse().unwrap();
    let (_, payload) = raw.split_once("\r\n\r\n").unwrap();
    (code, serde_json::from_str(payload).unwrap_or(Value::Null))
}

fn wait_for(addr: SocketAddr, what: &str, pred: impl Fn(&Value) -> bool) -> Value {
    let deadline = Instant::now() + Duration::from_secs(30);
    loop {
        let (_, status) = request(addr, "GET", "/status", None);
        if pred(&status) {
            return status;
        }
        assert!(Instant::now() < deadline, "timed out waiting for {what}: {status}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

fn start() -> (tempfile::TempDir, ServiceHandle) {
    let dir = tempfile::tempdir().unwrap();
    let service = spawn_service(fixture(dir.path())).unwrap();
    (dir, service)
}

#[test]
fn control_endpoints() {
    let (_dir, service) = start();
    let addr = service.local_addr();
    let status = wait_for(addr, "live mode", |s| s["mode"] == "live" && s["frames_rendered"].as_u64() > Some(0));
    assert_eq!(status["calibrated"], true);
    assert_eq!(status["brows"].as_array().unwrap().len(), 2);

    let (code, reply) = request(addr, "POST", "/threshold", Some(json!({"side": "left", "value": 0})));
    assert_eq!(code, 200, "{reply}");
    wait_for(addr, "left brow lost", |s| s["brows"][0]["tracking_ok"] == false);
    let (code, _) = request(addr, "POST", "/threshold", Some(json!({"side": "left", "value": 300})));
    assert_eq!(code, 400);
    let (code, _) = request(addr, "POST", "/threshold", Some(json!({"side": "middle", "value": 10})));
    assert!(code >= 400);

    let (code, post) = request(addr, "POST", "/postproc", Some(json!({"erode": 2, "clip_near": 10, "clip_far": 240})));
    assert_eq!(code, 200);
    assert_eq!(post["erode_radius"], 2);
    let (code, _) = request(addr, "POST", "/postproc", Some(json!({"erode": 1, "clip_near": 200, "clip_far": 100})));
    assert_eq!(code, 400);

    let (code, _) = request(addr, "POST", "/params", Some(json!({"mouth_open": 0.8, "smile": 0.3})));
    assert_eq!(code, 200);
    wait_for(addr, "params applied", |s| (s["params"]["mouth_open"].as_f64().unwrap() - 0.8).abs() < 1e-6);
    let (code, _) = request(addr, "POST", "/params", Some(json!({"mouth_open": 3.0})));
    assert_eq!(code, 400);

    // a landmark dragged far outside its bound is clamped and reported
    let (code, _) = request(addr, "POST", "/landmarks", Some(json!({"points": [{"index": 5, "x": 0.0, "y": 0.0}]})));
    assert_eq!(code, 200);
    wait_for(addr, "clamped echo", |s| s["clamped"].as_array().unwrap().contains(&json!(5)));

    let (code, reply) = request(addr, "POST", "/calibrate", None);
    assert_eq!(code, 200);
    assert_eq!(reply["mode"], "capturing");
    wait_for(addr, "recalibrated", |s| s["mode"] == "live");

    let (code, _) = request(addr, "GET", "/live", None);
    assert_eq!(code, 426);
    service.shutdown().unwrap();
}

#[test]
fn live_channel_streams_previews_and_accepts_inputs() {
    let (_dir, service) = start();
    let addr = service.local_addr();
    wait_for(addr, "first render", |s| s["frames_rendered"].as_u64() > Some(0));
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    rt.block_on(async {
        let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
        ws::client_handshake(&mut stream, &addr.to_string(), "/live").await.unwrap();
        let (rd, mut wr) = tokio::io::split(stream);
        let mut rd = ws::Reader::new(rd);
        let mask = Some([9, 8, 7, 6]);

        let next_json = |m: Message| match m {
            Message::Text(t) => serde_json::from_str::<Value>(&t).unwrap(),
            other => panic!("unexpected {other:?}"),
        };
        let start = Instant::now();
        let mut frames = Vec::new();
        while frames.len() < 6 {
            let v = next_json(rd.next().await.unwrap());
            if v["type"] == "frame" {
                frames.push(v);
            }
        }
        let per_frame = start.elapsed().as_secs_f64() / 6.0;
        assert!(per_frame >= 1.0 / 15.0 * 0.8, "previews faster than 15 Hz: {per_frame}");
        let f = &frames[5];
        let png = |key: &str| base64::engine::general_purpose::STANDARD.decode(f[key].as_str().unwrap()).unwrap();
        for key in ["left_png", "right_png", "brow_left_png", "brow_right_png"] {
            let img = image::load_from_memory(&png(key)).unwrap();
            assert!(img.width() > 0, "{key}");
        }
        assert_eq!(f["landmarks"].as_array().unwrap().len(), 70);
        assert_eq!(f["tracking_ok"].as_array().unwrap().len(), 2);
        assert!(f["stats"]["render_fps"].is_number());

        let send = |v: Value| Message::Text(v.to_string());
        ws::write_message(&mut wr, &send(json!({"type": "params", "smile": -0.5})), mask).await.unwrap();
        ws::write_message(&mut wr, &send(json!({"type": "threshold", "side": "right", "value": 255})), mask).await.unwrap();
        ws::write_message(&mut wr, &Message::Text("not json".into()), mask).await.unwrap();
        ws::write_message(&mut wr, &Message::Ping(vec![1, 2]), mask).await.unwrap();
        let (mut saw_error, mut saw_pong, mut saw_threshold) = (false, false, false);
        let deadline = Instant::now() + Duration::from_secs(10);
        while !(saw_error && saw_pong && saw_threshold) {
            assert!(Instant::now() < deadline, "replies missing");
            match rd.next().await.unwrap() {
                Message::Pong(p) => saw_pong = p == vec![1, 2],
                m => {
                    let v = next_json(m);
                    saw_error |= v["type"] == "error";
                    saw_threshold |= v["tracking_ok"] == false && v["side"] == "right";
                }
            }
        }
        ws::write_message(&mut wr, &Message::Close, mask).await.unwrap();
    });
    let (_, status) = request(addr, "GET", "/status", None);
    assert!((status["params"]["smile"].as_f64().unwrap() + 0.5).abs() < 1e-6);
    assert_eq!(status["brows"][1]["tracking_ok"], false);
    service.shutdown().unwrap();
}

#[test]
fn busy_port_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let config = ServiceConfig { http_addr: taken.local_addr().unwrap().to_string(), ..fixture(dir.path()) };
    let err = spawn_service(config).err().expect("bind must fail");
    assert!(err.to_string().contains(&taken.local_addr().unwrap().to_string()), "{err}");
}
