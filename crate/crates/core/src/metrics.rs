//! Evaluation metrics for the five downstream tasks.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::audio::annotation::{BeatAnnotation, LabeledIntervals};
use crate::audio::labels::{HarmonyLabel, Mode};
use crate::error::{Error, Result};

/// Every tolerance and weight used by the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    /// Beat and downbeat hit window, seconds, inclusive.
    pub beat_tolerance: f64,
    /// Boundary hit window, seconds, inclusive.
    pub boundary_window: f64,
    pub key_fifth: f64,
    pub key_relative: f64,
    pub key_parallel: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            beat_tolerance: 0.07,
            boundary_window: 0.5,
            key_fifth: 0.5,
            key_relative: 0.3,
            key_parallel: 0.2,
        }
    }
}

/// Hits, false alarms and misses of an event matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F-measure; 1 when both lists were empty, 0 when `P + R = 0`.
    pub fn f_measure(&self) -> f64 {
        if self.tp + self.fp + self.fn_ == 0 {
            return 1.0;
        }
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn ascending(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.into()));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!("{} must be ascending", what)));
    }
    Ok(())
}

/// The hit predicate shared by matching and its oracle.
#[inline]
pub fn within(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Size of a maximum matching in a bipartite graph (Hopcroft-Karp);
/// `adj[u]` lists the right vertices of left vertex `u`.
pub fn max_matching(adj: &[Vec<usize>], n_right: usize) -> usize {
    const NIL: usize = usize::MAX;
    let n_left = adj.len();
    let mut match_l = vec![NIL; n_left];
    let mut match_r = vec![NIL; n_right];
    let mut dist = vec![0usize; n_left];
    let mut size = 0;
    loop {
        // BFS layers from free left vertices
        let mut queue = std::collections::VecDeque::new();
        for u in 0..n_left {
            if match_l[u] == NIL {
                dist[u] = 0;
                queue.push_back(u);
            } else {
                dist[u] = usize::MAX;
            }
        }
        let mut found = false;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                let w = match_r[v];
                if w == NIL {
                    found = true;
                } else if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if !found {
            return size;
        }
        fn augment(u: usize, adj: &[Vec<usize>], ml: &mut [usize], mr: &mut [usize], dist: &mut [usize]) -> bool {
            for &v in &adj[u] {
                let w = mr[v];
                if w == usize::MAX || (dist[w] == dist[u] + 1 && augment(w, adj, ml, mr, dist)) {
                    ml[u] = v;
                    mr[v] = u;
                    return true;
                }
            }
            dist[u] = usize::MAX;
            false
        }
        for u in 0..n_left {
            if match_l[u] == NIL && augment(u, adj, &mut match_l, &mut match_r, &mut dist) {
                size += 1;
            }
        }
    }
}

/// One-to-one matching of event times within `tol`.
pub fn match_events(est: &[f64], reference: &[f64], tol: f64) -> Result<MatchCounts> {
    ascending(est, "estimated events")?;
    ascending(reference, "reference events")?;
    let adj: Vec<Vec<usize>> = est
        .iter()
        .map(|&e| (0..reference.len()).filter(|&j| within(e, reference[j], tol)).collect())
        .collect();
    let tp = max_matching(&adj, reference.len());
    Ok(MatchCounts {
        tp,
        fp: est.len() - tp,
        fn_: reference.len() - tp,
    })
}

pub fn beat_f1(est: &[f64], reference: &[f64], tol: f64) -> Result<f64> {
    Ok(match_events(est, reference, tol)?.f_measure())
}

pub fn boundary_hr(est: &[f64], reference: &[f64], window: f64) -> Result<f64> {
    Ok(match_events(est, reference, window)?.f_measure())
}

fn parse_harmony(iv: &LabeledIntervals) -> Result<Vec<(f64, f64, HarmonyLabel)>> {
    iv.validate()?;
    iv.intervals
        .iter()
        .map(|i| Ok((i.start, i.end, i.label.parse::<HarmonyLabel>()?)))
        .collect()
}

/// Duration with matching labels and total reference duration.
pub fn chord_overlap(est: &LabeledIntervals, reference: &LabeledIntervals) -> Result<(f64, f64)> {
    let e = parse_harmony(est)?;
    let r = parse_harmony(reference)?;
    let total: f64 = r.iter().map(|(a, b, _)| b - a).sum();
    if r.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidArgument("reference chord annotation is empty".into()));
    }
    let (mut i, mut j, mut hit) = (0, 0, 0.0);
    while i < e.len() && j < r.len() {
        let (ea, eb, el) = e[i];
        let (ra, rb, rl) = r[j];
        let overlap = eb.min(rb) - ea.max(ra);
        if overlap > 0.0 && el == rl {
            hit += overlap;
        }
        if eb <= rb {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok((hit, total))
}

/// Fraction of reference time whose estimated label is the same major/minor class.
pub fn chord_weighted_acc(est: &LabeledIntervals, reference: &LabeledIntervals) -> Result<f64> {
    let (hit, total) = chord_overlap(est, reference)?;
    Ok(hit / total)
}

/// Partial-credit key score.
pub fn key_weighted_score(est: HarmonyLabel, reference: HarmonyLabel, cfg: &MetricConfig) -> f64 {
    use HarmonyLabel::{None, Tonal};
    match (est, reference) {
        (None, None) => 1.0,
        (None, _) | (_, None) => 0.0,
        (Tonal { root: er, mode: em }, Tonal { root: rr, mode: rm }) => {
            let up = (er + 12 - rr) % 12;
            if em == rm {
                match up {
                    0 => 1.0,
                    7 => cfg.key_fifth,
                    _ => 0.0,
                }
            } else {
                let relative = match rm {
                    Mode::Major => up == 9,
                    Mode::Minor => up == 3,
                };
                if relative {
                    cfg.key_relative
                } else if up == 0 {
                    cfg.key_parallel
                } else {
                    0.0
                }
            }
        }
    }
}

/// Key score on label strings.
pub fn key_weighted_score_str(est: &str, reference: &str, cfg: &MetricConfig) -> Result<f64> {
    Ok(key_weighted_score(est.parse()?, reference.parse()?, cfg))
}

pub fn frame_accuracy<L: PartialEq>(est: &[L], reference: &[L]) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(Error::Shape(format!("{} estimated frames, {} reference frames", est.len(), reference.len())));
    }
    if est.is_empty() {
        return Err(Error::InvalidArgument("frame accuracy of empty sequences".into()));
    }
    Ok(est.iter().zip(reference).filter(|(a, b)| a == b).count() as f64 / est.len() as f64)
}

/// Average precision of one tag: mean precision at the rank of each positive,
/// ranking by descending score with ties in index order.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// ROC-AUC of one tag with half credit for ties (rank-sum form).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // count of (pos > neg) pairs plus half of ties, in doubled units so it stays integral
    let (mut doubled, mut negs_below, mut k) = (0u64, 0u64, 0);
    while k < order.len() {
        let mut end = k;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let (p, n) = order[k..end].iter().fold((0u64, 0u64), |(p, n), &i| if labels[i] { (p + 1, n) } else { (p, n + 1) });
        doubled += 2 * p * negs_below + p * n;
        negs_below += n;
        k = end;
    }
    Some(doubled as f64 / (2 * pos * neg) as f64)
}

/// Macro-averaged mAP and ROC-AUC over tag columns; degenerate columns are
/// skipped with a warning.
pub fn tagging_scores(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Shape(format!("{} score rows, {} label rows", scores.len(), labels.len())));
    }
    let tags = scores[0].len();
    if scores.iter().any(|r| r.len() != tags) || labels.iter().any(|r| r.len() != tags) {
        return Err(Error::Shape("ragged tagging matrices".into()));
    }
    if scores.iter().flatten().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("tag scores".into()));
    }
    let (mut aps, mut aucs) = (Vec::new(), Vec::new());
    for k in 0..tags {
        let s: Vec<f64> = scores.iter().map(|r| r[k]).collect();
        let l: Vec<bool> = labels.iter().map(|r| r[k]).collect();
        match roc_auc(&s, &l) {
            Some(a) => aucs.push(a),
            None => log::warn!("tag column {} lacks positives or negatives, skipped", k),
        }
        if let Some(a) = average_precision(&s, &l) {
            aps.push(a);
        }
    }
    if aps.is_empty() || aucs.is_empty() {
        return Err(Error::InvalidArgument("no tag column has both positives and negatives".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&aps), mean(&aucs)))
}

pub const BEAT_F1: &str = "beat_f1";
pub const DOWNBEAT_F1: &str = "downbeat_f1";
pub const CHORD_ACC: &str = "chord_acc";
pub const STRUCTURE_ACC: &str = "structure_acc";
pub const STRUCTURE_HR5F: &str = "structure_hr5f";
pub const KEY_ACC: &str = "key_acc";
pub const TAG_MAP: &str = "tag_map";
pub const TAG_AUC: &str = "tag_auc";

/// Metrics of one task over a set of clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub metrics: BTreeMap<String, f64>,
    pub counts: BTreeMap<String, u64>,
    pub config: MetricConfig,
}

impl EvalReport {
    fn new(task: &str, cfg: &MetricConfig) -> Self {
        Self {
            task: task.into(),
            metrics: BTreeMap::new(),
            counts: BTreeMap::new(),
            config: *cfg,
        }
    }

    fn add_counts(&mut self, prefix: &str, c: MatchCounts) {
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("fn", c.fn_)] {
            *self.counts.entry(format!("{prefix}_{k}")).or_default() += v as u64;
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn need_clips(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one clip".into()));
    }
    Ok(())
}

/// Per-clip beat and downbeat F-measures, averaged.
pub fn evaluate_beats(pairs: &[(BeatAnnotation, BeatAnnotation)], cfg: &MetricConfig) -> Result<EvalReport> {
    need_clips(pairs.len())?;
    let mut r = EvalReport::new("beat", cfg);
    let (mut fb, mut fd) = (Vec::new(), Vec::new());
    for (est, reference) in pairs {
        let b = match_events(&est.beats, &reference.beats, cfg.beat_tolerance)?;
        let d = match_events(&est.downbeats, &reference.downbeats, cfg.beat_tolerance)?;
        fb.push(b.f_measure());
        fd.push(d.f_measure());
        r.add_counts("beat", b);
        r.add_counts("downbeat", d);
    }
    r.metrics.insert(BEAT_F1.into(), mean(&fb));
    r.metrics.insert(DOWNBEAT_F1.into(), mean(&fd));
    r.counts.insert("clips".into(), pairs.len() as u64);
    Ok(r)
}

/// Duration-weighted chord accuracy over all clips.
pub fn evaluate_chords(pairs: &[(LabeledIntervals, LabeledIntervals)], cfg: &MetricConfig) -> Result<EvalReport> {
    need_clips(pairs.len())?;
    let mut r = EvalReport::new("chord", cfg);
    let (mut hit, mut total) = (0.0, 0.0);
    for (est, reference) in pairs {
        let (h, t) = chord_overlap(est, reference)?;
        hit += h;
        total += t;
    }
    r.metrics.insert(CHORD_ACC.into(), hit / total);
    r.counts.insert("clips".into(), pairs.len() as u64);
    Ok(r)
}

/// One structure clip: per-frame labels and boundary times.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureClip {
    pub est_frames: Vec<String>,
    pub ref_frames: Vec<String>,
    pub est_boundaries: Vec<f64>,
    pub ref_boundaries: Vec<f64>,
}

/// Frame accuracy pooled over all frames; HR.5F averaged per clip.
pub fn evaluate_structure(clips: &[StructureClip], cfg: &MetricConfig) -> Result<EvalReport> {
    need_clips(clips.len())?;
    let mut r = EvalReport::new("structure", cfg);
    let (mut same, mut frames, mut hr) = (0usize, 0usize, Vec::new());
    for c in clips {
        let acc = frame_accuracy(&c.est_frames, &c.ref_frames)?;
        same += (acc * c.ref_frames.len() as f64).round() as usize;
        frames += c.ref_frames.len();
        let m = match_events(&c.est_boundaries, &c.ref_boundaries, cfg.boundary_window)?;
        hr.push(m.f_measure());
        r.add_counts("boundary", m);
    }
    r.metrics.insert(STRUCTURE_ACC.into(), same as f64 / frames as f64);
    r.metrics.insert(STRUCTURE_HR5F.into(), mean(&hr));
    r.counts.insert("frames".into(), frames as u64);
    r.counts.insert("clips".into(), clips.len() as u64);
    Ok(r)
}

/// Mean weighted key score over `(estimate, reference)` labels.
pub fn evaluate_keys(pairs: &[(HarmonyLabel, HarmonyLabel)], cfg: &MetricConfig) -> Result<EvalReport> {
    need_clips(pairs.len())?;
    let mut r = EvalReport::new("key", cfg);
    let scores: Vec<f64> = pairs.iter().map(|&(e, t)| key_weighted_score(e, t, cfg)).collect();
    r.metrics.insert(KEY_ACC.into(), mean(&scores));
    r.counts.insert("exact".into(), scores.iter().filter(|&&s| s == 1.0).count() as u64);
    r.counts.insert("clips".into(), pairs.len() as u64);
    Ok(r)
}

pub fn evaluate_tagging(scores: &[Vec<f64>], labels: &[Vec<bool>], cfg: &MetricConfig) -> Result<EvalReport> {
    let (map, auc) = tagging_scores(scores, labels)?;
    let mut r = EvalReport::new("tagging", cfg);
    r.metrics.insert(TAG_MAP.into(), map);
    r.metrics.insert(TAG_AUC.into(), auc);
    r.counts.insert("clips".into(), scores.len() as u64);
    Ok(r)
}

/// Column keys and headers of the results table.
pub const TABLE_COLUMNS: [(&str, &str); 8] = [
    (BEAT_F1, "Beat F1"),
    (DOWNBEAT_F1, "Downbeat F1"),
    (CHORD_ACC, "Chord Acc"),
    (STRUCTURE_ACC, "Struct Acc"),
    (STRUCTURE_HR5F, "HR.5F"),
    (KEY_ACC, "Key Acc"),
    (TAG_MAP, "mAP"),
    (TAG_AUC, "ROC"),
];

/// Rows of named metric sets rendered as text or CSV.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<(String, BTreeMap<String, f64>)>,
}

impl ResultsTable {
    pub fn push(&mut self, name: impl Into<String>, reports: &[EvalReport]) {
        let metrics = reports.iter().flat_map(|r| r.metrics.iter().map(|(k, v)| (k.clone(), *v))).collect();
        self.rows.push((name.into(), metrics));
    }

    fn cell(m: &BTreeMap<String, f64>, key: &str) -> String {
        m.get(key).map_or_else(|| "-".to_string(), |v| format!("{:.4}", v))
    }

    pub fn to_text(&self) -> String {
        let name_w = self.rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("config".len());
        let mut out = format!("{:<name_w$}", "config");
        for (_, h) in TABLE_COLUMNS {
            let _ = write!(out, "  {:>11}", h);
        }
        out.push('\n');
        for (name, m) in &self.rows {
            let _ = write!(out, "{:<name_w$}", name);
            for (k, _) in TABLE_COLUMNS {
                let _ = write!(out, "  {:>11}", Self::cell(m, k));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("config");
        for (k, _) in TABLE_COLUMNS {
            out.push(',');
            out.push_str(k);
        }
        out.push('\n');
        for (name, m) in &self.rows {
            out.push_str(&name.replace(',', ";"));
            for (k, _) in TABLE_COLUMNS {
                out.push(',');
                if let Some(v) = m.get(k) {
                    let _ = write!(out, "{}", v);
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests;
