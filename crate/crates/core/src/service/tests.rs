use super::*;
use crate::flm::Point;
use crate::merger::ReportSet;
use crate::tracking::PartialLandmarkReport;

#[test]
fn latency_table_keeps_pipeline_order_and_window() {
    let mut t = LatencyTable::new();
    t.record("generate", 2.0);
    t.record("track", 1.0);
    for i in 0..200 {
        t.record("merge", i as f64);
    }
    let rows = t.rows();
    let names: Vec<_> = rows.iter().map(|r| r.stage.as_str()).collect();
    assert_eq!(names, ["track", "merge", "generate"]);
    assert_eq!(rows[1].samples, 120);
    assert_eq!(rows[1].max_ms, 199.0);
    assert_eq!(rows[1].last_ms, 199.0);
    assert!((rows[1].mean_ms - 139.5).abs() < 1e-9);
    assert!(format_latency(&rows).contains("total"));
}

#[test]
fn overrides_replace_the_winning_report() {
    let lower = PartialLandmarkReport::new(Source::LowerFace, vec![(48, Point::new(1.0, 1.0))]);
    let brow = PartialLandmarkReport::new(Source::BrowLeft, vec![(17, Point::new(2.0, 2.0))]);
    let mut set = ReportSet::from_reports([lower, brow]);
    apply_overrides(&mut set, &[(48, Point::new(9.0, 9.0)), (17, Point::new(7.0, 7.0)), (0, Point::new(5.0, 5.0))]);
    let lower = set.get(Source::LowerFace).unwrap();
    assert_eq!(lower.point(48), Some(Point::new(9.0, 9.0)));
    assert_eq!(lower.point(0), Some(Point::new(5.0, 5.0)));
    assert_eq!(set.get(Source::BrowLeft).unwrap().point(17), Some(Point::new(7.0, 7.0)));
}

#[test]
fn rate_meter_counts_the_last_second() {
    let mut m = RateMeter::default();
    let t0 = Instant::now();
    for i in 0..60 {
        m.tick(t0 + Duration::from_millis(i * 33));
    }
    let now = t0 + Duration::from_millis(59 * 33);
    assert_eq!(m.total, 60);
    assert!((30.0..=31.0).contains(&m.rate(now)), "{}", m.rate(now));
}

#[test]
fn config_validation() {
    assert!(ServiceConfig::default().validate().is_ok());
    let bad = |f: fn(&mut ServiceConfig)| {
        let mut c = ServiceConfig::default();
        f(&mut c);
        c.validate().is_err()
    };
    assert!(bad(|c| c.tracking_hz = 0.0));
    assert!(bad(|c| c.preview_hz = 30.0));
    assert!(bad(|c| c.deadline_ms = 0));
    assert!(bad(|c| c.postproc = Some(PostprocessConfig { erode_radius: 1, clip_near: 200, clip_far: 10 })));
}

#[test]
fn client_messages_parse() {
    let m: ClientMessage = serde_json::from_str(r#"{"type":"threshold","side":"left","value":255}"#).unwrap();
    assert_eq!(m, ClientMessage::Threshold(ThresholdRequest { side: Side::Left, value: 255 }));
    let m: ClientMessage = serde_json::from_str(r#"{"type":"params","mouth_open":0.5}"#).unwrap();
    let ClientMessage::Params(p) = m else { panic!("{m:?}") };
    assert_eq!(p.mouth_open, 0.5);
    assert_eq!(p.eye_open_left, 1.0);
    let m: ClientMessage = serde_json::from_str(r#"{"type":"postproc","erode":2,"clip_near":3,"clip_far":250}"#).unwrap();
    assert_eq!(m, ClientMessage::Postproc(PostprocRequest { erode: 2, clip_near: 3, clip_far: 250 }));
    assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"calibrate"}"#).is_ok());
    assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"landmarks","points":[{"index":3,"x":1,"y":2}]}"#).is_ok());
    assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"warp"}"#).is_err());
}

#[test]
fn brow_mask_is_white_where_dark() {
    let img = GrayImage::from_raw(2, 1, vec![10, 200]).unwrap();
    assert_eq!(mask_image(&img, 100).as_raw(), &vec![255, 0]);
    assert!(mask_image(&img, 0).as_raw().iter().all(|&v| v == 0));
}

#[test]
fn clamped_indices_report_moved_points() {
    let a = FacialLandmarkSet::new(&[Point::new(10.0, 10.0); 70], crate::flm::Resolution::REFERENCE).unwrap();
    let mut pts = *a.points();
    pts[5] = Point::new(11.0, 10.0);
    let b = FacialLandmarkSet::new(&pts, crate::flm::Resolution::REFERENCE).unwrap();
    assert_eq!(clamped_indices(&a, &b), vec![5]);
}
