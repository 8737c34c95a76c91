//! Gluing per-frame, per-channel decisions into signal-event tracks, and
//! filtering them against an operator error budget.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{threshold_decide, validate_thresholds, EnsembleOutput, ThresholdVector, DEFAULT_ALPHA};
use crate::error::{config_err, Error, Result};
use crate::framing::FrameShaperConfig;
use crate::siggen::GroundTruth;
use crate::{NUM_CLASSES, SAMPLE_RATE_HZ};

/// Thresholds that accept every argmax.
const PASS_THROUGH: ThresholdVector = [f64::MIN_POSITIVE; NUM_CLASSES];

/// Frames × channels grid of fused scores and hard decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionMap {
    pub frames: usize,
    pub channels: usize,
    /// `frames * channels * NUM_CLASSES`, frame-major.
    pub scores: Vec<f64>,
    pub decisions: Vec<u8>,
}

impl DecisionMap {
    pub fn score(&self, n: usize, l: usize) -> &[f64] {
        let i = (n * self.channels + l) * NUM_CLASSES;
        &self.scores[i..i + NUM_CLASSES]
    }

    pub fn decision(&self, n: usize, l: usize) -> usize {
        self.decisions[n * self.channels + l] as usize
    }

    /// Map from hard decisions alone; each cell's score is one-hot.
    pub fn from_decisions(decisions: &[Vec<usize>]) -> Result<Self> {
        let scores: Vec<Vec<Vec<f64>>> = decisions
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&c| (0..NUM_CLASSES).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
                    .collect()
            })
            .collect();
        if decisions.iter().flatten().any(|&c| c >= NUM_CLASSES) {
            return Err(Error::Shape("decision outside class range".into()));
        }
        build_decision_map(&scores, &PASS_THROUGH)
    }
}

/// `scores[n][l]` is the fused score vector of frame `n` on channel `l`.
pub fn build_decision_map(scores: &[Vec<Vec<f64>>], thresholds: &ThresholdVector) -> Result<DecisionMap> {
    validate_thresholds(thresholds)?;
    let frames = scores.len();
    let channels = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != channels) || scores.iter().flatten().any(|s| s.len() != NUM_CLASSES) {
        return Err(Error::Shape("decision map input is not rectangular".into()));
    }
    let flat: Vec<f64> = scores.iter().flatten().flatten().copied().collect();
    let decisions = flat
        .par_chunks(NUM_CLASSES)
        .map(|s| threshold_decide(s, thresholds) as u8)
        .collect();
    Ok(DecisionMap {
        frames,
        channels,
        scores: flat,
        decisions,
    })
}

/// Map from `infer_stream` output, using the fused scores.
pub fn map_from_outputs(outputs: &[Vec<EnsembleOutput>], thresholds: &ThresholdVector) -> Result<DecisionMap> {
    let scores: Vec<Vec<Vec<f64>>> = outputs
        .iter()
        .map(|row| row.iter().map(|o| o.fused.probs.clone()).collect())
        .collect();
    build_decision_map(&scores, thresholds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    /// Frames of tolerated gap.
    pub gap: usize,
    /// Channels of tolerated gap.
    pub width: usize,
    pub min_duration: usize,
    pub min_area: usize,
    pub thresholds: ThresholdVector,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gap: 2,
            width: 2,
            min_duration: 3,
            min_area: 1,
            thresholds: [DEFAULT_ALPHA; NUM_CLASSES],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEventTrack {
    pub class_id: usize,
    pub n_b: usize,
    pub n_e: usize,
    pub channel_lo: usize,
    pub channel_hi: usize,
    pub central_channel: usize,
    pub cells: usize,
    /// Mean winning-class score over the track's cells.
    pub confidence: f64,
}

impl SignalEventTrack {
    pub fn duration(&self) -> usize {
        self.n_e - self.n_b + 1
    }
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

fn glue_class(map: &DecisionMap, class: usize, cfg: &TrackerConfig) -> Vec<SignalEventTrack> {
    let (nf, nl) = (map.frames, map.channels);
    let idx = |n: usize, l: usize| n * nl + l;
    let on = |n: usize, l: usize| map.decision(n, l) == class;
    let mut dsu = Dsu((0..nf * nl).collect());
    let (dn, dl) = (cfg.gap + 1, cfg.width + 1);
    for n in 0..nf {
        for l in 0..nl {
            if !on(n, l) {
                continue;
            }
            // Forward half of the neighborhood; the rest is covered symmetrically.
            for m in n..(n + dn + 1).min(nf) {
                let l0 = if m == n { l + 1 } else { l.saturating_sub(dl) };
                for k in l0..(l + dl + 1).min(nl) {
                    if on(m, k) {
                        dsu.union(idx(n, l), idx(m, k));
                    }
                }
            }
        }
    }
    let mut boxes: std::collections::BTreeMap<usize, SignalEventTrack> = Default::default();
    let mut sums: std::collections::BTreeMap<usize, f64> = Default::default();
    for n in 0..nf {
        for l in 0..nl {
            if !on(n, l) {
                continue;
            }
            let root = dsu.find(idx(n, l));
            let t = boxes.entry(root).or_insert(SignalEventTrack {
                class_id: class,
                n_b: n,
                n_e: n,
                channel_lo: l,
                channel_hi: l,
                central_channel: l,
                cells: 0,
                confidence: 0.0,
            });
            t.n_b = t.n_b.min(n);
            t.n_e = t.n_e.max(n);
            t.channel_lo = t.channel_lo.min(l);
            t.channel_hi = t.channel_hi.max(l);
            t.cells += 1;
            *sums.entry(root).or_insert(0.0) += map.score(n, l)[class];
        }
    }
    boxes
        .into_iter()
        .map(|(root, mut t)| {
            t.confidence = sums[&root] / t.cells as f64;
            t.central_channel = (t.channel_lo + t.channel_hi) / 2;
            t
        })
        .filter(|t| t.duration() >= cfg.min_duration && t.cells >= cfg.min_area)
        .collect()
}

/// Connected same-class components under adjacency `|Δn| <= gap + 1`,
/// `|Δl| <= width + 1`, filtered by duration and area. Ordered by
/// `(class, n_b, channel_lo)`.
pub fn glue_tracks(map: &DecisionMap, cfg: &TrackerConfig) -> Vec<SignalEventTrack> {
    let mut tracks: Vec<SignalEventTrack> = (1..NUM_CLASSES)
        .into_par_iter()
        .flat_map_iter(|c| glue_class(map, c, cfg))
        .collect();
    tracks.sort_by_key(|t| (t.class_id, t.n_b, t.channel_lo, t.n_e, t.channel_hi));
    tracks
}

/// Fills each track's bounding box with its class; later tracks overwrite.
pub fn rasterize(tracks: &[SignalEventTrack], frames: usize, channels: usize) -> Result<DecisionMap> {
    let mut scores = vec![vec![vec![0.0; NUM_CLASSES]; channels]; frames];
    for row in scores.iter_mut().flatten() {
        row[0] = 1.0;
    }
    for t in tracks {
        if t.n_e >= frames || t.channel_hi >= channels {
            return Err(Error::Shape("track exceeds map bounds".into()));
        }
        for row in &mut scores[t.n_b..=t.n_e] {
            for cell in &mut row[t.channel_lo..=t.channel_hi] {
                cell.fill(0.0);
                cell[t.class_id] = t.confidence.max(f64::MIN_POSITIVE);
            }
        }
    }
    build_decision_map(&scores, &PASS_THROUGH)
}

/// Whether each track overlaps a same-class ground-truth event, with the
/// given slack in frames and channels.
pub fn match_tracks(tracks: &[SignalEventTrack], truth: &GroundTruth, slack_frames: usize, slack_channels: usize) -> Vec<bool> {
    tracks
        .iter()
        .map(|t| {
            truth.entries.iter().any(|g| {
                g.class_id == t.class_id
                    && t.n_b <= g.frame_end + slack_frames
                    && g.frame_begin <= t.n_e + slack_frames
                    && t.channel_lo <= g.channel_hi + slack_channels
                    && g.channel_lo <= t.channel_hi + slack_channels
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBudget {
    pub alpha: f64,
    pub beta: f64,
}

impl ErrorBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0 && self.beta > 0.0 && self.beta < 1.0) {
            return Err(config_err("error budget rates must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// A track is kept at this point when its confidence exceeds `threshold`
/// and its duration reaches the table's `min_duration`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Smoothed share of false validation tracks kept.
    pub alpha: f64,
    /// Smoothed share of true validation tracks rejected.
    pub beta: f64,
}

/// Operating points ordered from most to least permissive. Thresholds
/// only grow along the table, so kept sets are nested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTable {
    pub min_duration: usize,
    pub points: Vec<OperatingPoint>,
}

/// Builds the table from validation tracks labeled true or false.
pub fn calibrate(tracks: &[SignalEventTrack], is_true: &[bool], min_duration: usize) -> Result<CalibrationTable> {
    if tracks.len() != is_true.len() {
        return Err(Error::Shape("track and label counts differ".into()));
    }
    let eligible: Vec<(f64, bool)> = tracks
        .iter()
        .zip(is_true)
        .filter(|(t, _)| t.duration() >= min_duration)
        .map(|(t, &ok)| (t.confidence, ok))
        .collect();
    let n_true = eligible.iter().filter(|e| e.1).count() as f64;
    let n_false = eligible.len() as f64 - n_true;
    let mut thresholds: Vec<f64> = eligible.iter().map(|e| e.0).collect();
    thresholds.push(-1.0);
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let points = thresholds
        .into_iter()
        .map(|thr| {
            let fp = eligible.iter().filter(|e| !e.1 && e.0 > thr).count() as f64;
            let missed = eligible.iter().filter(|e| e.1 && e.0 <= thr).count() as f64;
            OperatingPoint {
                threshold: thr,
                alpha: fp / (n_false + 1.0),
                beta: missed / (n_true + 1.0),
            }
        })
        .collect();
    Ok(CalibrationTable { min_duration, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    #[serde(flatten)]
    pub track: SignalEventTrack,
    pub start_s: f64,
    pub end_s: f64,
}

impl EventReport {
    pub fn new(track: SignalEventTrack, framing: &FrameShaperConfig) -> Self {
        let start_s = framing.bounds(track.n_b).0 as f64 / SAMPLE_RATE_HZ;
        let end_s = (framing.bounds(track.n_e).1 + 1) as f64 / SAMPLE_RATE_HZ;
        Self { track, start_s, end_s }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetOutcome {
    pub point: OperatingPoint,
    /// False when no point meeting alpha also meets beta.
    pub beta_met: bool,
    pub reports: Vec<EventReport>,
}

/// Uses the most permissive calibrated point whose alpha fits the budget,
/// or the strictest point when none does.
pub fn apply_error_budget(tracks: &[SignalEventTrack], budget: &ErrorBudget, table: Option<&CalibrationTable>, framing: &FrameShaperConfig) -> Result<BudgetOutcome> {
    budget.validate()?;
    let table = table.ok_or_else(|| Error::Missing("error budget needs a calibration table".into()))?;
    let strictest = *table
        .points
        .last()
        .ok_or_else(|| Error::Missing("calibration table is empty".into()))?;
    let point = table
        .points
        .iter()
        .find(|p| p.alpha <= budget.alpha)
        .copied()
        .unwrap_or(strictest);
    let reports = tracks
        .iter()
        .filter(|t| t.confidence > point.threshold && t.duration() >= table.min_duration)
        .map(|t| EventReport::new(t.clone(), framing))
        .collect();
    Ok(BudgetOutcome {
        point,
        beta_met: point.beta <= budget.beta,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn grid(frames: usize, channels: usize) -> Vec<Vec<usize>> {
        vec![vec![0; channels]; frames]
    }

    fn paint(g: &mut [Vec<usize>], n: std::ops::RangeInclusive<usize>, l: std::ops::RangeInclusive<usize>, c: usize) {
        for row in &mut g[n] {
            for cell in &mut row[l.clone()] {
                *cell = c;
            }
        }
    }

    #[test]
    fn background_map_is_empty() {
        let scores = vec![vec![vec![0.9, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01]; 8]; 30];
        let m = build_decision_map(&scores, &[0.5; 7]).unwrap();
        assert!(m.decisions.iter().all(|&d| d == 0));
        assert!(glue_tracks(&m, &TrackerConfig::default()).is_empty());
    }

    #[test]
    fn ragged_input_rejected() {
        let scores = vec![vec![vec![1.0 / 7.0; 7]; 3], vec![vec![1.0 / 7.0; 7]; 2]];
        assert!(build_decision_map(&scores, &[0.5; 7]).is_err());
    }

    #[test]
    fn solid_block_is_one_track() {
        let mut g = grid(40, 12);
        paint(&mut g, 10..=20, 5..=7, 6);
        let m = DecisionMap::from_decisions(&g).unwrap();
        let t = glue_tracks(&m, &TrackerConfig::default());
        assert_eq!(t.len(), 1);
        let t = &t[0];
        assert_eq!((t.class_id, t.n_b, t.n_e, t.channel_lo, t.channel_hi, t.central_channel), (6, 10, 20, 5, 7, 6));
        assert_eq!(t.cells, 33);
        assert_eq!(t.confidence, 1.0);
    }

    #[test]
    fn short_blip_filtered() {
        let mut g = grid(20, 5);
        g[4][2] = 3;
        let m = DecisionMap::from_decisions(&g).unwrap();
        assert!(glue_tracks(&m, &TrackerConfig::default()).is_empty());
    }

    #[test]
    fn gaps_within_tolerance_merge() {
        let mut g = grid(40, 10);
        paint(&mut g, 5..=9, 2..=4, 2);
        paint(&mut g, 12..=16, 2..=4, 2);
        let m = DecisionMap::from_decisions(&g).unwrap();
        let t = glue_tracks(&m, &TrackerConfig::default());
        assert_eq!(t.len(), 1);
        assert_eq!((t[0].n_b, t[0].n_e), (5, 16));
        let strict = TrackerConfig { gap: 1, ..TrackerConfig::default() };
        assert_eq!(glue_tracks(&m, &strict).len(), 2);
    }

    #[test]
    fn classes_never_merge() {
        let mut g = grid(30, 6);
        paint(&mut g, 5..=10, 0..=2, 1);
        paint(&mut g, 5..=10, 3..=5, 2);
        let t = glue_tracks(&DecisionMap::from_decisions(&g).unwrap(), &TrackerConfig::default());
        assert_eq!(t.iter().map(|t| t.class_id).collect::<Vec<_>>(), vec![1, 2]);
    }

    /// Independent oracle: BFS over the dilated neighborhood.
    fn flood_fill(g: &[Vec<usize>], cfg: &TrackerConfig) -> Vec<(usize, usize, usize, usize, usize, usize)> {
        let (nf, nl) = (g.len(), g[0].len());
        let mut seen = vec![vec![false; nl]; nf];
        let mut out = Vec::new();
        for n in 0..nf {
            for l in 0..nl {
                let c = g[n][l];
                if c == 0 || seen[n][l] {
                    continue;
                }
                let mut stack = vec![(n, l)];
                seen[n][l] = true;
                let (mut nb, mut ne, mut lo, mut hi, mut cells) = (n, n, l, l, 0);
                while let Some((a, b)) = stack.pop() {
                    cells += 1;
                    nb = nb.min(a);
                    ne = ne.max(a);
                    lo = lo.min(b);
                    hi = hi.max(b);
                    for x in a.saturating_sub(cfg.gap + 1)..=(a + cfg.gap + 1).min(nf - 1) {
                        for y in b.saturating_sub(cfg.width + 1)..=(b + cfg.width + 1).min(nl - 1) {
                            if !seen[x][y] && g[x][y] == c {
                                seen[x][y] = true;
                                stack.push((x, y));
                            }
                        }
                    }
                }
                if ne - nb + 1 >= cfg.min_duration && cells >= cfg.min_area {
                    out.push((c, nb, ne, lo, hi, cells));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn matches_flood_fill_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for trial in 0..300 {
            let (nf, nl) = (rng.random_range(1..40), rng.random_range(1..20));
            let density = rng.random_range(0.0..0.3);
            let g: Vec<Vec<usize>> = (0..nf)
                .map(|_| {
                    (0..nl)
                        .map(|_| if rng.random::<f64>() < density { rng.random_range(1..4) } else { 0 })
                        .collect()
                })
                .collect();
            let cfg = TrackerConfig {
                gap: trial % 3,
                width: (trial / 3) % 3,
                min_duration: trial % 4,
                min_area: trial % 5,
                ..TrackerConfig::default()
            };
            let mut got: Vec<_> = glue_tracks(&DecisionMap::from_decisions(&g).unwrap(), &cfg)
                .iter()
                .map(|t| (t.class_id, t.n_b, t.n_e, t.channel_lo, t.channel_hi, t.cells))
                .collect();
            got.sort();
            assert_eq!(got, flood_fill(&g, &cfg), "trial {trial}");
        }
    }

    proptest! {
        #[test]
        fn tracks_stay_in_bounds(cells in proptest::collection::vec(0usize..7, 1..400), width in 1usize..20) {
            let g: Vec<Vec<usize>> = cells.chunks(width).filter(|c| c.len() == width).map(|c| c.to_vec()).collect();
            prop_assume!(!g.is_empty());
            let m = DecisionMap::from_decisions(&g).unwrap();
            for t in glue_tracks(&m, &TrackerConfig { gap: 0, width: 0, min_duration: 0, ..TrackerConfig::default() }) {
                prop_assert!(t.n_b <= t.n_e && t.n_e < m.frames);
                prop_assert!(t.channel_lo <= t.channel_hi && t.channel_hi < m.channels);
                prop_assert!(t.class_id != 0);
                prop_assert!(g[t.n_b..=t.n_e].iter().flat_map(|r| &r[t.channel_lo..=t.channel_hi]).any(|&c| c == t.class_id));
            }
        }

        #[test]
        fn regluing_boxes_is_idempotent(blocks in proptest::collection::vec((0usize..50, 1usize..6, 0usize..30, 1usize..4, 1usize..7), 0..6)) {
            let (nf, nl) = (60, 40);
            let mut g = grid(nf, nl);
            let mut placed: Vec<(usize, usize, usize, usize)> = Vec::new();
            for (n, dn, l, dl, c) in blocks {
                let b = (n, (n + dn).min(nf - 1), l, (l + dl).min(nl - 1));
                // Keep boxes at least one cell apart so gluing at zero tolerance sees them separately.
                if placed.iter().all(|p| b.0 > p.1 + 1 || p.0 > b.1 + 1 || b.2 > p.3 + 1 || p.2 > b.3 + 1) {
                    paint(&mut g, b.0..=b.1, b.2..=b.3, c);
                    placed.push(b);
                }
            }
            let cfg = TrackerConfig { gap: 0, width: 0, min_duration: 1, ..TrackerConfig::default() };
            let first = glue_tracks(&DecisionMap::from_decisions(&g).unwrap(), &cfg);
            let again = glue_tracks(&rasterize(&first, nf, nl).unwrap(), &cfg);
            prop_assert_eq!(first.len(), again.len());
            for (a, b) in first.iter().zip(&again) {
                prop_assert_eq!((a.class_id, a.n_b, a.n_e, a.channel_lo, a.channel_hi, a.central_channel),
                    (b.class_id, b.n_b, b.n_e, b.channel_lo, b.channel_hi, b.central_channel));
                prop_assert!((a.confidence - b.confidence).abs() < 1e-12);
            }
        }
    }

    fn track(conf: f64, duration: usize) -> SignalEventTrack {
        SignalEventTrack {
            class_id: 1,
            n_b: 0,
            n_e: duration - 1,
            channel_lo: 0,
            channel_hi: 0,
            central_channel: 0,
            cells: duration,
            confidence: conf,
        }
    }

    fn validation() -> (Vec<SignalEventTrack>, Vec<bool>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        (0..200)
            .map(|i| {
                let ok = i % 3 != 0;
                let conf = if ok { rng.random_range(0.55..1.0) } else { rng.random_range(0.5..0.8) };
                (track(conf, rng.random_range(1..10)), ok)
            })
            .unzip()
    }

    #[test]
    fn missing_calibration_is_an_error() {
        let b = ErrorBudget { alpha: 0.1, beta: 0.1 };
        let e = apply_error_budget(&[track(0.9, 5)], &b, None, &FrameShaperConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Missing(_)));
    }

    #[test]
    fn permissive_budget_keeps_everything() {
        let (v, ok) = validation();
        let table = calibrate(&v, &ok, 3).unwrap();
        let tracks: Vec<_> = (0..20).map(|i| track(0.5 + i as f64 * 0.02, 3 + i % 4)).collect();
        let b = ErrorBudget { alpha: 1.0 - 1e-9, beta: 0.5 };
        let out = apply_error_budget(&tracks, &b, Some(&table), &FrameShaperConfig::default()).unwrap();
        assert_eq!(out.reports.len(), tracks.len());
        let none = apply_error_budget(&[], &b, Some(&table), &FrameShaperConfig::default()).unwrap();
        assert!(none.reports.is_empty());
    }

    #[test]
    fn budget_sweep_is_nested() {
        let (v, ok) = validation();
        let table = calibrate(&v, &ok, 3).unwrap();
        assert!(table.points.windows(2).all(|w| w[0].threshold < w[1].threshold && w[0].alpha >= w[1].alpha && w[0].beta <= w[1].beta));
        let tracks: Vec<_> = (0..100).map(|i| track(0.5 + i as f64 * 0.005, 3 + i % 5)).collect();
        let f = FrameShaperConfig::default();
        let mut prev: Option<Vec<f64>> = None;
        for k in 1..200 {
            let alpha = k as f64 / 200.0;
            let kept: Vec<f64> = apply_error_budget(&tracks, &ErrorBudget { alpha, beta: 0.5 }, Some(&table), &f)
                .unwrap()
                .reports
                .iter()
                .map(|r| r.track.confidence)
                .collect();
            if let Some(p) = &prev {
                assert!(p.iter().all(|c| kept.contains(c)), "alpha {alpha}");
            }
            prev = Some(kept);
        }
        let tight = apply_error_budget(&tracks, &ErrorBudget { alpha: 1e-9, beta: 0.5 }, Some(&table), &f).unwrap();
        let max_false = v.iter().zip(&ok).filter(|(t, o)| !**o && t.duration() >= 3).map(|(t, _)| t.confidence).fold(0.0, f64::max);
        assert!(tight.reports.iter().all(|r| r.track.confidence > max_false));
        assert!(!tight.reports.is_empty());
    }

    #[test]
    fn report_times_follow_framing() {
        let mut t = track(0.9, 3);
        t.n_b = 2;
        t.n_e = 4;
        let r = EventReport::new(t, &FrameShaperConfig::default());
        assert!((r.start_s - 2048.0 / 1666.0).abs() < 1e-12);
        assert!((r.end_s - (4.0 * 1024.0 + 2048.0) / 1666.0).abs() < 1e-12);
    }

    #[test]
    fn track_matching() {
        use crate::siggen::GroundTruthEntry;
        let truth = GroundTruth {
            entries: vec![GroundTruthEntry {
                class_id: 1,
                frame_begin: 10,
                frame_end: 12,
                channel_lo: 3,
                channel_hi: 4,
                central_channel: 3,
            }],
        };
        let mut a = track(0.9, 3);
        a.n_b = 13;
        a.n_e = 15;
        a.channel_lo = 3;
        a.channel_hi = 3;
        assert_eq!(match_tracks(&[a.clone()], &truth, 0, 0), vec![false]);
        assert_eq!(match_tracks(&[a], &truth, 1, 0), vec![true]);
    }
}
