use std::collections::BTreeMap;
use std::path::Path;

use stalldet::media::{open_sequence, read_detections, read_ground_truth};
use stalldet::sorter::{sort_video, LightingClass, RoadType, SortParams};
use stalldet::synth::*;
use stalldet::Error;
use tempfile::tempdir;

fn tiny() -> CorpusFormat {
    CorpusFormat { width: 160, height: 160, fps: 4.0, duration: 40.0 }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn corpus_is_deterministic() {
    let presets = standard_presets();
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    corpus(&presets, &tiny(), 11, a.path()).unwrap();
    corpus(&presets, &tiny(), 11, b.path()).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta, tb);

    let dirs = std::fs::read_dir(a.path()).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 12);
    assert!(a.path().join(GROUND_TRUTH_FILE).is_file());

    let c = tempdir().unwrap();
    corpus(&presets, &tiny(), 12, c.path()).unwrap();
    assert_ne!(ta, read_tree(c.path()));
}

#[test]
fn zero_stall_corpus_has_header_only_gt() {
    let dir = tempdir().unwrap();
    corpus(
        &[(LightingClass::Day, Layout::Freeway, Scenario::Clear), (LightingClass::Snow, Layout::Freeway, Scenario::Parked)],
        &tiny(),
        1,
        dir.path(),
    )
    .unwrap();
    let text = std::fs::read_to_string(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    assert_eq!(text.trim_end(), "video_id,start_seconds,end_seconds");
    assert!(matches!(corpus(&[], &tiny(), 1, dir.path()), Err(Error::InvalidSpec(_))));
}

#[test]
fn generated_layout_matches_reader() {
    let dir = tempdir().unwrap();
    let spec = preset_scene("g", LightingClass::Day, Layout::Freeway, Scenario::Stall, &tiny(), 3);
    let video = generate(&spec, dir.path()).unwrap();
    let seq = open_sequence(dir.path()).unwrap();
    assert_eq!(seq.len(), spec.frame_count());
    assert_eq!(seq.frame(5).unwrap(), Renderer::new(&spec).unwrap().render(5));
    assert_eq!(read_detections(dir.path().join(DETECTIONS_FILE)).unwrap(), video.detections);
    assert_eq!(read_scene(dir.path().join(SCENE_FILE)).unwrap(), spec);
    // every visible vehicle on every frame, at score 1
    for f in [0usize, 40, 100] {
        let n = video.detections.iter().filter(|d| d.frame_index == f).count();
        assert_eq!(n, spec.objects_at(f).len());
    }
    assert!(video.detections.iter().all(|d| d.score == 1.0));
}

#[test]
fn stall_interval_is_static_interval() {
    let format = CorpusFormat { duration: 600.0, ..tiny() };
    let mut spec = preset_scene("s", LightingClass::Day, Layout::Freeway, Scenario::Clear, &format, 4);
    let shoulder = spec.lanes.len() - 1;
    spec.vehicles.push(VehicleSpec {
        lane: shoulder,
        length: 14,
        breadth: 10,
        speed: 40.0,
        spawn: 119.0,
        stall: Some((120.0, 300.0)),
        class: "car".into(),
    });
    spec.validate().unwrap();
    assert_eq!(spec.ground_truth().len(), 1);
    assert_eq!((spec.ground_truth()[0].start, spec.ground_truth()[0].end), (120.0, 300.0));

    // scan every frame: the box is unchanged from one frame to the next exactly inside the stall
    let idx = spec.vehicles.len() - 1;
    let boxes: Vec<_> = (0..spec.frame_count()).map(|f| spec.vehicle_box(idx, f as f64 / spec.fps)).collect();
    let mut static_frames = Vec::new();
    for f in 1..boxes.len() {
        if boxes[f].is_some() && boxes[f] == boxes[f - 1] {
            static_frames.push(f);
        }
    }
    let first = (120.0 * spec.fps) as usize;
    let last = (300.0 * spec.fps) as usize;
    assert_eq!(static_frames, (first + 1..=last).collect::<Vec<_>>());
}

#[test]
fn free_flow_has_no_ground_truth() {
    for layout in [Layout::Freeway, Layout::Intersection] {
        let spec = preset_scene("f", LightingClass::Night, layout, Scenario::Clear, &tiny(), 2);
        assert!(spec.ground_truth().is_empty());
    }
}

#[test]
fn lighting_classes_are_realizable() {
    let params = SortParams::default();
    let dir = tempdir().unwrap();
    for (i, lighting) in [LightingClass::Day, LightingClass::Night, LightingClass::Snow].into_iter().enumerate() {
        for layout in [Layout::Freeway, Layout::Intersection] {
            let spec = preset_scene("r", lighting, layout, Scenario::Stall, &tiny(), 20 + i as u64);
            let sub = dir.path().join(format!("{i}_{layout:?}"));
            let video = generate(&spec, &sub).unwrap();
            let cat = sort_video(&video.sequence, &video.detections, &params).unwrap();
            let road = match layout {
                Layout::Freeway => RoadType::Freeway,
                Layout::Intersection => RoadType::Intersection,
            };
            assert_eq!((cat.lighting, cat.road_type), (lighting, road), "{lighting:?} {layout:?}");
        }
    }
}

#[test]
fn night_baseline_thirty() {
    let mut spec = preset_scene("n", LightingClass::Night, Layout::Freeway, Scenario::Clear, &tiny(), 8);
    spec.palette = Palette { road: 30, offroad: 30, vehicle: 0 };
    let dir = tempdir().unwrap();
    let video = generate(&spec, dir.path()).unwrap();
    let cat = sort_video(&video.sequence, &video.detections, &SortParams::default()).unwrap();
    assert_eq!(cat.lighting, LightingClass::Night);
}

#[test]
fn palette_invariants_enforced() {
    let mut spec = preset_scene("x", LightingClass::Night, Layout::Freeway, Scenario::Clear, &tiny(), 1);
    spec.palette.offroad = 120;
    assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    let mut spec = preset_scene("x", LightingClass::Snow, Layout::Freeway, Scenario::Clear, &tiny(), 1);
    spec.palette.offroad = 150;
    assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
    let mut spec = preset_scene("x", LightingClass::Day, Layout::Freeway, Scenario::Clear, &tiny(), 1);
    spec.vehicles[0].breadth = 500;
    assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
}

#[test]
fn corpus_gt_lists_every_stall() {
    let dir = tempdir().unwrap();
    let specs = corpus(&standard_presets(), &tiny(), 5, dir.path()).unwrap();
    let gt = read_ground_truth(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    let stalls = standard_presets().iter().filter(|p| p.2 == Scenario::Stall).count();
    assert_eq!(gt.len(), stalls);
    let expected: Vec<_> = specs.iter().flat_map(|s| s.ground_truth()).collect();
    assert_eq!(gt, expected);
}
