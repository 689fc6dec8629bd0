//! Matching predictions to ground truth and the F1 / RMSE / NRMSE / S4 metrics.
//!
//! Within a video a prediction and a ground-truth stall may pair when their
//! start times differ by at most the match window. Among all valid one-to-one
//! pairings the matcher picks one with the most true positives and, among
//! those, the smallest sum of squared start errors.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::media::{GroundTruthEntry, Prediction};

pub const DEFAULT_MATCH_WINDOW: f64 = 10.0;
/// RMSE at which NRMSE reaches 1; also the RMSE reported when nothing matched.
pub const RMSE_CAP: f64 = 300.0;
/// Past this many items on the smaller side of a video the matcher falls back to greedy.
pub const EXACT_MATCH_LIMIT: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruePositive {
    pub prediction: Prediction,
    pub ground_truth: GroundTruthEntry,
    pub start_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct MatchResult {
    pub true_positives: Vec<TruePositive>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl MatchResult {
    pub fn tp(&self) -> usize {
        self.true_positives.len()
    }

    pub fn squared_error(&self) -> f64 {
        self.true_positives.iter().map(|t| t.start_error * t.start_error).sum()
    }

    fn absorb(&mut self, other: MatchResult) {
        self.true_positives.extend(other.true_positives);
        self.false_positives += other.false_positives;
        self.false_negatives += other.false_negatives;
    }
}

fn check_duplicates(gts: &[GroundTruthEntry]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for g in gts {
        if !seen.insert((g.video_id.as_str(), g.start.to_bits(), g.end.to_bits())) {
            return Err(Error::DuplicateGroundTruth {
                video_id: g.video_id.clone(),
                start: g.start,
                end: g.end,
            });
        }
    }
    Ok(())
}

type Grouped<'a> = BTreeMap<&'a str, (Vec<&'a Prediction>, Vec<&'a GroundTruthEntry>)>;

fn group<'a>(preds: &'a [Prediction], gts: &'a [GroundTruthEntry]) -> Grouped<'a> {
    let mut by_video: Grouped<'a> = BTreeMap::new();
    for p in preds {
        by_video.entry(p.video_id.as_str()).or_default().0.push(p);
    }
    for g in gts {
        by_video.entry(g.video_id.as_str()).or_default().1.push(g);
    }
    for (ps, gs) in by_video.values_mut() {
        ps.sort_by(|a, b| {
            a.start
                .total_cmp(&b.start)
                .then(a.end.total_cmp(&b.end))
                .then(b.confidence.total_cmp(&a.confidence))
        });
        gs.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.end.total_cmp(&b.end)));
    }
    by_video
}

fn build(ps: &[&Prediction], gs: &[&GroundTruthEntry], pairs: &[(usize, usize)]) -> MatchResult {
    let mut tps: Vec<TruePositive> = pairs
        .iter()
        .map(|&(i, j)| TruePositive {
            prediction: ps[i].clone(),
            ground_truth: gs[j].clone(),
            start_error: (ps[i].start - gs[j].start).abs(),
        })
        .collect();
    tps.sort_by(|a, b| a.ground_truth.start.total_cmp(&b.ground_truth.start));
    MatchResult {
        false_positives: ps.len() - pairs.len(),
        false_negatives: gs.len() - pairs.len(),
        true_positives: tps,
    }
}

/// Closest-first greedy pairing of one video's (sorted) predictions and ground truth.
fn greedy_pairs(ps: &[&Prediction], gs: &[&GroundTruthEntry], window: f64) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in ps.iter().enumerate() {
        for (j, g) in gs.iter().enumerate() {
            let d = (p.start - g.start).abs();
            if d <= window {
                cands.push((d, i, j));
            }
        }
    }
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let (mut used_p, mut used_g) = (vec![false; ps.len()], vec![false; gs.len()]);
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Optimal pairing by dynamic programming over subsets of the smaller side.
fn exact_pairs(ps: &[&Prediction], gs: &[&GroundTruthEntry], window: f64) -> Vec<(usize, usize)> {
    // `cost(a, b)` is defined with `a` indexing the larger side
    let swap = ps.len() < gs.len();
    let (n_big, n_small) = if swap { (gs.len(), ps.len()) } else { (ps.len(), gs.len()) };
    let err = |big: usize, small: usize| -> Option<f64> {
        let (i, j) = if swap { (small, big) } else { (big, small) };
        let d = (ps[i].start - gs[j].start).abs();
        (d <= window).then_some(d * d)
    };
    let states = 1usize << n_small;
    // (matches, squared error); better = more matches, then less error
    let better = |a: (usize, f64), b: (usize, f64)| a.0 > b.0 || (a.0 == b.0 && a.1 < b.1);
    let mut dp: Vec<Option<(usize, f64)>> = vec![None; states];
    dp[0] = Some((0, 0.0));
    // choice[k][mask] = small index paired with big item k to reach mask, or None for skip
    let mut choice: Vec<Vec<Option<usize>>> = Vec::with_capacity(n_big);
    for k in 0..n_big {
        // skipping big item k carries every state over unchanged
        let mut next: Vec<Option<(usize, f64)>> = dp.clone();
        let mut ch: Vec<Option<usize>> = vec![None; states];
        for mask in 0..states {
            let Some(cur) = dp[mask] else { continue };
            for j in 0..n_small {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let Some(e) = err(k, j) else { continue };
                let cand = (cur.0 + 1, cur.1 + e);
                let to = mask | (1 << j);
                if next[to].is_none_or(|n| better(cand, n)) {
                    next[to] = Some(cand);
                    ch[to] = Some(j);
                }
            }
        }
        choice.push(ch);
        dp = next;
    }
    let mut best = 0usize;
    for mask in 1..states {
        if let (Some(c), Some(b)) = (dp[mask], dp[best]) {
            if better(c, b) {
                best = mask;
            }
        }
    }
    let mut pairs = Vec::new();
    let mut mask = best;
    for k in (0..n_big).rev() {
        if let Some(j) = choice[k][mask] {
            pairs.push(if swap { (j, k) } else { (k, j) });
            mask &= !(1 << j);
        }
    }
    pairs.sort_unstable();
    pairs
}

fn match_with(
    preds: &[Prediction],
    gts: &[GroundTruthEntry],
    window: f64,
    pairing: impl Fn(&[&Prediction], &[&GroundTruthEntry], f64) -> Vec<(usize, usize)>,
) -> Result<MatchResult> {
    check_duplicates(gts)?;
    let mut out = MatchResult::default();
    for (_, (ps, gs)) in group(preds, gts) {
        let pairs = pairing(&ps, &gs, window);
        out.absorb(build(&ps, &gs, &pairs));
    }
    Ok(out)
}

/// Optimal matching: most true positives, then least total squared start error.
pub fn match_events(preds: &[Prediction], gts: &[GroundTruthEntry], window: f64) -> Result<MatchResult> {
    match_with(preds, gts, window, |ps, gs, w| {
        if ps.len().min(gs.len()) > EXACT_MATCH_LIMIT {
            warn!(
                "{} predictions vs {} ground truths in one video; using greedy matching",
                ps.len(),
                gs.len()
            );
            greedy_pairs(ps, gs, w)
        } else {
            exact_pairs(ps, gs, w)
        }
    })
}

/// Closest-first greedy matching. Not always optimal; kept for comparison.
pub fn match_greedy(preds: &[Prediction], gts: &[GroundTruthEntry], window: f64) -> Result<MatchResult> {
    match_with(preds, gts, window, greedy_pairs)
}

pub fn f1_counts(tp: usize, fp: usize, fn_: usize) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::UndefinedScore);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

pub fn f1(m: &MatchResult) -> Result<f64> {
    f1_counts(m.tp(), m.false_positives, m.false_negatives)
}

pub fn rmse(m: &MatchResult) -> f64 {
    if m.true_positives.is_empty() {
        return RMSE_CAP;
    }
    (m.squared_error() / m.tp() as f64).sqrt()
}

pub fn nrmse(rmse: f64) -> f64 {
    rmse.clamp(0.0, RMSE_CAP) / RMSE_CAP
}

pub fn s4(f1: f64, rmse: f64) -> f64 {
    f1 * (1.0 - nrmse(rmse))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoScore {
    pub video_id: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub start_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub f1: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub s4: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_video: Vec<VideoScore>,
}

pub fn score(preds: &[Prediction], gts: &[GroundTruthEntry], window: f64) -> Result<ScoreReport> {
    let m = match_events(preds, gts, window)?;
    let f1 = f1(&m)?;
    let rmse = rmse(&m);

    let mut per: BTreeMap<String, VideoScore> = BTreeMap::new();
    fn entry<'a>(per: &'a mut BTreeMap<String, VideoScore>, id: &str) -> &'a mut VideoScore {
        per.entry(id.to_string()).or_insert_with(|| VideoScore {
            video_id: id.to_string(),
            tp: 0,
            fp: 0,
            fn_: 0,
            start_errors: vec![],
        })
    }
    for p in preds {
        entry(&mut per, &p.video_id).fp += 1;
    }
    for g in gts {
        entry(&mut per, &g.video_id).fn_ += 1;
    }
    for t in &m.true_positives {
        let v = entry(&mut per, &t.ground_truth.video_id);
        v.tp += 1;
        v.fp -= 1;
        v.fn_ -= 1;
        v.start_errors.push(t.start_error);
    }
    Ok(ScoreReport {
        f1,
        rmse,
        nrmse: nrmse(rmse),
        s4: s4(f1, rmse),
        tp: m.tp(),
        fp: m.false_positives,
        fn_: m.false_negatives,
        per_video: per.into_values().collect(),
    })
}
