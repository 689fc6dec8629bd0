use std::path::Path;
use std::time::Instant;

use proptest::prelude::*;
use stalldet::detector::*;
use stalldet::media::{write_detections, BBox, Detection};
use stalldet::sorter::LightingClass;
use stalldet::synth::{Axis, Lane, Palette, SceneSpec, VehicleSpec};
use stalldet::Error;
use tempfile::tempdir;

fn sh(script: &str) -> Vec<String> {
    vec!["sh".into(), "-c".into(), script.into()]
}

fn image<'a>(path: &'a Path, frames: &'a [usize]) -> ImageRef<'a> {
    ImageRef {
        path,
        width: 64,
        height: 48,
        source_frames: frames,
    }
}

#[test]
fn external_empty_response() {
    let mut d = ExternalDetector::spawn(
        &sh(r#"echo '{"ready": true}'; while read line; do echo '{"detections":[]}'; done"#),
        5.0,
    )
    .unwrap();
    let p = Path::new("/tmp/bg_0.pgm");
    assert!(d.detect(&image(p, &[0])).unwrap().is_empty());
    // strict request/response: a second call works on the same process
    assert!(d.detect(&image(p, &[0])).unwrap().is_empty());
}

#[test]
fn external_echoes_request() {
    // the child answers with a box whose x is the length of the request line
    let script = r#"echo '{"ready": true}'
while read line; do
  n=${#line}
  echo "{\"detections\":[{\"class\":\"car\",\"score\":0.75,\"bbox\":[$((n % 50)),2,5,5]},{\"class\":\"person\",\"score\":0.9,\"bbox\":[1,1,2,2]}]}"
done"#;
    let child = ExternalDetector::spawn(&sh(script), 5.0).unwrap();
    let mut handle = DetectorHandle::new(Backend::External(child), default_vehicle_classes());
    assert_eq!(handle.kind(), DetectorKind::ExternalProcess);
    let p = Path::new("/x/bg_30000.pgm");
    let request = r#"{"image":"/x/bg_30000.pgm"}"#;
    let dets = handle.detect(&image(p, &[300])).unwrap();
    // the person is filtered by class
    assert_eq!(
        dets,
        vec![Detection::new(300, "car", 0.75, BBox::new((request.len() % 50) as u32, 2, 5, 5).unwrap()).unwrap()]
    );
}

#[test]
fn external_bad_handshake() {
    let r = ExternalDetector::spawn(&sh("echo hello; sleep 5"), 5.0);
    assert!(matches!(r, Err(Error::Protocol(_))));
    let r = ExternalDetector::spawn(&sh(r#"echo '{"ready": false}'"#), 5.0);
    assert!(matches!(r, Err(Error::Protocol(_))));
}

#[test]
fn external_garbage_response() {
    let mut d = ExternalDetector::spawn(&sh(r#"echo '{"ready": true}'; read line; echo 'not json'; sleep 5"#), 5.0).unwrap();
    let p = Path::new("/tmp/a.pgm");
    assert!(matches!(d.detect(&image(p, &[0])), Err(Error::Protocol(_))));
}

#[test]
fn external_timeout() {
    let mut d = ExternalDetector::spawn(&sh(r#"echo '{"ready": true}'; sleep 30"#), 0.3).unwrap();
    let start = Instant::now();
    let r = d.detect(&image(Path::new("/tmp/a.pgm"), &[0]));
    assert!(matches!(r, Err(Error::DetectorTimeout { .. })), "{r:?}");
    assert!(start.elapsed().as_secs_f64() < 5.0);
    // a timed-out process is not reused
    assert!(matches!(d.detect(&image(Path::new("/tmp/a.pgm"), &[0])), Err(Error::Protocol(_))));
}

#[test]
fn external_missing_program() {
    let r = ExternalDetector::spawn(&["/definitely/not/here".to_string()], 1.0);
    assert!(r.is_err());
    assert!(matches!(ExternalDetector::spawn(&[], 1.0), Err(Error::Config(_))));
}

#[test]
fn precomputed_passthrough() {
    let dir = tempdir().unwrap();
    let records = vec![
        Detection::new(0, "car", 0.9, BBox::new(1, 1, 4, 4).unwrap()).unwrap(),
        Detection::new(0, "truck", 0.6, BBox::new(10, 1, 4, 4).unwrap()).unwrap(),
        Detection::new(0, "bus", 0.3, BBox::new(20, 1, 4, 4).unwrap()).unwrap(),
    ];
    let image_path = dir.path().join("bg_30000.pgm");
    let det_path = precomputed_path(dir.path(), &image_path);
    assert_eq!(det_path.file_name().unwrap(), "bg_30000.det.jsonl");
    write_detections(&records, &det_path).unwrap();
    let mut handle = DetectorHandle::new(
        Backend::Precomputed(PrecomputedDetector::new(dir.path())),
        default_vehicle_classes(),
    );
    assert_eq!(handle.detect(&image(&image_path, &[0])).unwrap(), records);

    let missing = dir.path().join("bg_60000.pgm");
    assert!(matches!(handle.detect(&image(&missing, &[0])), Err(Error::MissingDetections(_))));
}

fn one_stall_scene() -> SceneSpec {
    SceneSpec {
        video_id: "s".into(),
        duration: 20.0,
        fps: 5.0,
        width: 64,
        height: 48,
        lighting: LightingClass::Day,
        palette: Palette::for_lighting(LightingClass::Day),
        road_texture_sigma: 3.0,
        noise_sigma: 2.0,
        lanes: vec![Lane { axis: Axis::Horizontal, center: 24, width: 12, direction: 1 }],
        vehicles: vec![VehicleSpec {
            lane: 0,
            length: 10,
            breadth: 8,
            speed: 20.0,
            spawn: 0.0,
            stall: Some((2.0, 18.0)),
            class: "car".into(),
        }],
        offroad_parked: vec![],
        seed: 4,
    }
}

#[test]
fn oracle_single_stall() {
    let scene = one_stall_scene();
    let gt_box = scene.vehicle_box(0, 5.0).unwrap();
    let mut handle = DetectorHandle::new(Backend::Oracle(OracleDetector::new(scene)), default_vehicle_classes());
    assert_eq!(handle.kind(), DetectorKind::OracleSynthetic);
    let frames = [25usize];
    let dets = handle.detect(&image(Path::new("frame_000025.pgm"), &frames)).unwrap();
    assert_eq!(dets, vec![Detection::new(25, "car", 1.0, gt_box).unwrap()]);
}

#[test]
fn oracle_background_majority() {
    let scene = one_stall_scene();
    let mut oracle = OracleDetector::new(scene.clone());
    let p = Path::new("bg.pgm");
    // stalled from frame 10 to 90: a background sampled mostly inside sees it
    let inside: Vec<usize> = (20..80).step_by(5).collect();
    assert_eq!(oracle.detect(&image(p, &inside)).unwrap().len(), 1);
    // mostly before the vehicle stops, the moving car is never at one box often enough
    let before: Vec<usize> = (0..10).collect();
    assert!(oracle.detect(&image(p, &before)).unwrap().is_empty());
    assert!(matches!(oracle.detect(&image(p, &[])), Err(Error::EmptyInput(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_sound_on_frames(frame in 0usize..100) {
        let scene = one_stall_scene();
        let mut oracle = OracleDetector::new(scene.clone());
        let frames = [frame];
        let mut got: Vec<(String, BBox)> = oracle
            .detect(&image(Path::new("f.pgm"), &frames))
            .unwrap()
            .into_iter()
            .map(|d| (d.class_label, d.bbox))
            .collect();
        let mut expected = scene.objects_at(frame);
        got.sort_by_key(|o| o.1);
        expected.sort_by_key(|o| o.1);
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn response_parsing_is_total(text in "\\PC{0,60}") {
        let p = Path::new("a.pgm");
        let frames = [0usize];
        match parse_response(&text, &image(p, &frames)) {
            Ok(ds) => prop_assert!(ds.iter().all(|d| (0.0..=1.0).contains(&d.score) && d.bbox.fits(64, 48))),
            Err(e) => prop_assert!(matches!(e, Error::Protocol(_))),
        }
    }

    #[test]
    fn response_boxes_clipped(x in -100i64..200, y in -100i64..200, w in 1i64..100, h in 1i64..100, s in 0.0f64..=1.0) {
        let line = format!(r#"{{"detections":[{{"class":"car","score":{s},"bbox":[{x},{y},{w},{h}]}}]}}"#);
        let p = Path::new("a.pgm");
        let frames = [7usize];
        let ds = parse_response(&line, &image(p, &frames)).unwrap();
        prop_assert!(ds.len() <= 1);
        for d in ds {
            prop_assert!(d.bbox.fits(64, 48));
            prop_assert_eq!(d.frame_index, 7);
        }
    }
}
