use proptest::prelude::*;
use stalldet::media::*;
use stalldet::Error;
use tempfile::tempdir;

#[test]
fn pgm_two_by_two() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("f.pgm");
    let f = Frame::new(2, 2, vec![0, 255, 128, 7]).unwrap();
    write_frame(&f, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let mut expected = b"P5\n2 2\n255\n".to_vec();
    expected.extend([0, 255, 128, 7]);
    assert_eq!(bytes, expected);
    assert_eq!(read_frame(&path).unwrap(), f);
}

#[test]
fn pgm_rejects_wide_maxval() {
    let mut bytes = b"P5\n2 1\n65535\n".to_vec();
    bytes.extend([0, 0, 0, 0]);
    assert!(matches!(decode_pgm(&bytes), Err(Error::UnsupportedFormat(_))));
}

#[test]
fn pgm_large_zero_frame() {
    let f = Frame::filled(1920, 410, 0);
    let back = decode_pgm(&encode_pgm(&f)).unwrap();
    assert_eq!(back.dims(), (1920, 410));
    assert!(back.pixels().iter().all(|&p| p == 0));
}

#[test]
fn pgm_malformed_and_truncated() {
    assert!(matches!(decode_pgm(b"P2\n1 1\n255\n\0"), Err(Error::Parse { .. })));
    assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\0\0"), Err(Error::Parse { .. })));
    assert!(matches!(decode_pgm(b"P5\nx 2\n255\n"), Err(Error::Parse { .. })));
    // comments in the header are allowed
    assert_eq!(
        decode_pgm(b"P5\n# made by hand\n1 1\n255\n\x07").unwrap().pixels(),
        &[7]
    );
}

fn write_video(dir: &std::path::Path, fps: f64, frames: &[Frame], indices: &[usize], frame_count: usize) {
    let (w, h) = frames.first().map_or((4, 3), Frame::dims);
    write_sequence_meta(
        dir,
        &SequenceMeta {
            video_id: "v".into(),
            fps,
            width: w,
            height: h,
            frame_count,
        },
    )
    .unwrap();
    for (&i, f) in indices.iter().zip(frames) {
        write_frame(f, dir.join(frame_file_name(i))).unwrap();
    }
}

#[test]
fn sequence_timestamps() {
    let dir = tempdir().unwrap();
    let frames = vec![Frame::filled(4, 3, 1); 3];
    write_video(dir.path(), 30.0, &frames, &[0, 1, 2], 3);
    let seq = open_sequence(dir.path()).unwrap();
    assert_eq!(seq.len(), 3);
    assert_eq!(
        (0..3).map(|i| seq.timestamp(i)).collect::<Vec<_>>(),
        vec![0.0, 1.0 / 30.0, 2.0 / 30.0]
    );
    assert_eq!(seq.frame(2).unwrap(), frames[2]);
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4);
    assert!(dir.path().join("frame_000002.pgm").is_file());
}

#[test]
fn sequence_gap_and_missing_meta() {
    let dir = tempdir().unwrap();
    let frames = vec![Frame::filled(4, 3, 1); 3];
    write_video(dir.path(), 30.0, &frames, &[0, 1, 3], 4);
    assert!(matches!(open_sequence(dir.path()), Err(Error::SequenceGap { missing: 2 })));

    let empty = tempdir().unwrap();
    assert!(matches!(open_sequence(empty.path()), Err(Error::MissingMetadata(_))));
}

#[test]
fn sequence_empty_is_valid() {
    let dir = tempdir().unwrap();
    write_video(dir.path(), 10.0, &[], &[], 0);
    let seq = open_sequence(dir.path()).unwrap();
    assert!(seq.is_empty());
}

#[test]
fn sequence_dimension_mismatch_at_access() {
    let dir = tempdir().unwrap();
    let frames = vec![Frame::filled(4, 3, 1), Frame::filled(5, 3, 1)];
    write_video(dir.path(), 10.0, &frames, &[0, 1], 2);
    let seq = open_sequence(dir.path()).unwrap();
    assert!(seq.frame(0).is_ok());
    assert!(matches!(seq.frame(1), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn detection_line_examples() {
    let d = parse_detection_line(r#"{"frame":0,"class":"car","score":0.9,"bbox":[10,10,20,20]}"#, 1).unwrap();
    assert_eq!(d, Detection::new(0, "car", 0.9, BBox::new(10, 10, 20, 20).unwrap()).unwrap());
    let e = parse_detections("{\"frame\":0,\"class\":\"car\",\"score\":0.9,\"bbox\":[1,1,2,2]}\n{\"frame\":0,\"class\":\"car\",\"score\":1.5,\"bbox\":[1,1,2,2]}");
    assert!(matches!(e, Err(Error::Parse { line: Some(2), .. })));
    assert!(matches!(
        parse_detection_line(r#"{"frame":0,"class":"car","score":0.5,"bbox":[1,1,-2,2]}"#, 1),
        Err(Error::InvalidBBox(_))
    ));
    assert!(matches!(parse_detection_line("{", 7), Err(Error::Parse { line: Some(7), .. })));
    let dir = tempdir().unwrap();
    let p = dir.path().join("empty.jsonl");
    std::fs::write(&p, "").unwrap();
    assert!(read_detections(&p).unwrap().is_empty());
}

#[test]
fn ground_truth_examples() {
    let gt = parse_ground_truth("video_id,start_seconds,end_seconds\nv1,120.0,300.0\n").unwrap();
    assert_eq!(gt, vec![GroundTruthEntry::new("v1", 120.0, 300.0).unwrap()]);
    assert!(matches!(
        parse_ground_truth("video_id,start_seconds,end_seconds\nv1,300,120\n"),
        Err(Error::InvalidInterval { .. })
    ));
    assert!(matches!(
        parse_ground_truth("video_id,start_seconds,end_seconds\nv1,abc,120\n"),
        Err(Error::Parse { .. })
    ));
    assert!(parse_ground_truth("video_id,start_seconds,end_seconds\n").unwrap().is_empty());
}

fn arb_frame() -> impl Strategy<Value = Frame> {
    (1u32..12, 1u32..12).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), (w * h) as usize).prop_map(move |px| Frame::new(w, h, px).unwrap())
    })
}

fn arb_detection() -> impl Strategy<Value = Detection> {
    (
        0usize..100_000,
        "[a-z]{1,8}( [a-z]{1,4})?",
        0.0f64..=1.0,
        0u32..5000,
        0u32..5000,
        1u32..500,
        1u32..500,
    )
        .prop_map(|(f, c, s, x, y, w, h)| Detection::new(f, c, s, BBox::new(x, y, w, h).unwrap()).unwrap())
}

fn arb_interval() -> impl Strategy<Value = (String, f64, f64)> {
    ("[a-zA-Z0-9_]{1,10}", 0.0f64..1e5, 1e-6f64..1e4).prop_map(|(v, s, d)| (v, s, s + d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn frame_round_trip(f in arb_frame()) {
        prop_assert_eq!(decode_pgm(&encode_pgm(&f)).unwrap(), f);
    }

    #[test]
    fn detections_round_trip(ds in proptest::collection::vec(arb_detection(), 0..20)) {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_detections(&ds, &p).unwrap();
        prop_assert_eq!(read_detections(&p).unwrap(), ds);
    }

    #[test]
    fn ground_truth_round_trip(rows in proptest::collection::vec(arb_interval(), 0..10)) {
        let gts: Vec<_> = rows.iter().filter(|(_, s, e)| e > s).map(|(v, s, e)| GroundTruthEntry::new(v.clone(), *s, *e).unwrap()).collect();
        let dir = tempdir().unwrap();
        let p = dir.path().join("gt.csv");
        write_ground_truth(&gts, &p).unwrap();
        prop_assert_eq!(read_ground_truth(&p).unwrap(), gts);
    }

    #[test]
    fn predictions_round_trip(rows in proptest::collection::vec((arb_interval(), 0.0f64..=1.0), 0..10)) {
        let preds: Vec<_> = rows
            .iter()
            .filter(|((_, s, e), _)| e > s)
            .map(|((v, s, e), c)| Prediction { video_id: v.clone(), start: *s, end: *e, confidence: *c })
            .collect();
        let dir = tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        write_predictions(&preds, &p).unwrap();
        prop_assert_eq!(read_predictions(&p).unwrap(), preds);
    }

    #[test]
    fn pgm_parser_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode_pgm(&bytes);
        let mut with_magic = b"P5 ".to_vec();
        with_magic.extend(&bytes);
        let _ = decode_pgm(&with_magic);
    }

    #[test]
    fn text_parsers_are_total(text in "\\PC{0,80}") {
        let _ = parse_detections(&text);
        let _ = parse_ground_truth(&text);
        let _ = parse_predictions(&text);
        let _ = parse_ground_truth(&format!("video_id,start_seconds,end_seconds\n{text}"));
    }

    #[test]
    fn timestamps_increase(fps in 0.5f64..120.0, n in 2usize..50) {
        let seq = FrameSequence::from_frames("v", fps, vec![Frame::filled(1, 1, 0); n]).unwrap();
        for i in 1..n {
            prop_assert!(seq.timestamp(i) > seq.timestamp(i - 1));
        }
    }
}
