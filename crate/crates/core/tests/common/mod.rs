#![allow(dead_code)]

use stalldet::media::{GroundTruthEntry, Prediction};

/// Best (true positives, total squared start error) over every one-to-one
/// assignment within each video, found by exhaustive search.
pub fn brute_force_objective(preds: &[Prediction], gts: &[GroundTruthEntry], window: f64) -> (usize, f64) {
    let mut videos: Vec<&str> = preds.iter().map(|p| p.video_id.as_str()).chain(gts.iter().map(|g| g.video_id.as_str())).collect();
    videos.sort_unstable();
    videos.dedup();
    let mut total = (0usize, 0.0f64);
    for v in videos {
        let ps: Vec<f64> = preds.iter().filter(|p| p.video_id == v).map(|p| p.start).collect();
        let gs: Vec<f64> = gts.iter().filter(|g| g.video_id == v).map(|g| g.start).collect();
        let mut used = vec![false; gs.len()];
        let best = search(&ps, &gs, window, &mut used);
        total.0 += best.0;
        total.1 += best.1;
    }
    total
}

fn search(ps: &[f64], gs: &[f64], window: f64, used: &mut [bool]) -> (usize, f64) {
    let Some((&p, rest)) = ps.split_first() else {
        return (0, 0.0);
    };
    let mut best = search(rest, gs, window, used);
    for j in 0..gs.len() {
        let d = (p - gs[j]).abs();
        if used[j] || d > window {
            continue;
        }
        used[j] = true;
        let sub = search(rest, gs, window, used);
        used[j] = false;
        let cand = (sub.0 + 1, sub.1 + d * d);
        if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
            best = cand;
        }
    }
    best
}

pub fn pred(video: &str, start: f64) -> Prediction {
    Prediction {
        video_id: video.into(),
        start,
        end: start + 60.0,
        confidence: 0.9,
    }
}

pub fn gt(video: &str, start: f64) -> GroundTruthEntry {
    GroundTruthEntry::new(video, start, start + 60.0).unwrap()
}
