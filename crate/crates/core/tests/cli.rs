use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use rgbd_avatar::dataset::load_paired;
use rgbd_avatar::gan::{GanConfig, GanTrainer};
use rgbd_avatar::mailbox::Mailbox;
use rgbd_avatar::wire::{spawn_receiver, Transport};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rgbd-avatar")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_and_runtime_errors_have_distinct_exit_codes() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["train-gan", "--data", "x", "--out", "y", "--preset", "huge"]).status.code(), Some(2));
    let out = run(&["evaluate", "--data", "/nonexistent", "--weights", "/nonexistent"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));
}

#[test]
fn capture_infer_evaluate_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth-capture", "--out", s(&data), "--resolution", "32"]);
    let dataset = load_paired(&data).unwrap();
    assert_eq!(dataset.len(), 600);

    let weights = dir.path().join("g.weights");
    let config = GanConfig { resolution: 32, ngf: 8, ndf: 8, ..GanConfig::desk() };
    GanTrainer::new(&dataset, config).unwrap().weights().export(&weights).unwrap();

    let out = dir.path().join("infer");
    ok(&["infer", "--weights", s(&weights), "--out-dir", s(&out), "--params", r#"{"smile": 0.5}"#]);
    for f in ["rgb.png", "depth.png", "left.png", "right.png", "cloud.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let bad = run(&["infer", "--weights", s(&weights), "--out-dir", s(&out), "--params", r#"{"smile": 4}"#]);
    assert_eq!(bad.status.code(), Some(1));

    let report = dir.path().join("report.json");
    ok(&["evaluate", "--data", s(&data), "--weights", s(&weights), "--report", s(&report)]);
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(v.to_string().contains("ssim"), "{v}");

    let bench = ok(&["bench", "--data", s(&data), "--weights", s(&weights), "--frames", "10"]);
    assert!(bench.contains("generate") && bench.contains("fps"), "{bench}");
}

#[test]
fn stream_send_reaches_a_receiver() {
    let inbox = Arc::new(Mailbox::new());
    let receiver = spawn_receiver("127.0.0.1:0", Transport::Udp, Arc::clone(&inbox)).unwrap();
    let to = receiver.local_addr().to_string();
    ok(&["stream-send", "--to", &to, "--rate", "100", "--frames", "20"]);
    std::thread::sleep(std::time::Duration::from_millis(100));
    let stats = receiver.stop();
    assert_eq!(stats.frames_received, 20);
    assert_eq!(stats.decode_errors, 0);
}
