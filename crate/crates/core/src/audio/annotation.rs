//! Annotation types and their JSON file formats.
//!
//! * beats: `{"beats": [s, ...], "downbeats": [s, ...]}`
//! * chords / structure / keys: `[[start, end, "label"], ...]`
//! * tags: `{"tags": ["tag", ...]}` (predictions add `"scores": {"tag": p}`)

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::labels::HarmonyLabel;
use crate::error::{Error, Result};

/// Tolerance for matching a downbeat to its beat.
const SUBSET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub beats: Vec<f64>,
    pub downbeats: Vec<f64>,
}

impl BeatAnnotation {
    /// Strictly ascending beats; every downbeat is a beat.
    pub fn validate(&self) -> Result<()> {
        strictly_ascending(&self.beats, "beats")?;
        strictly_ascending(&self.downbeats, "downbeats")?;
        for &d in &self.downbeats {
            if !self.beats.iter().any(|&b| (b - d).abs() <= SUBSET_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "downbeat {} is not a beat",
                    d
                )));
            }
        }
        Ok(())
    }
}

pub(crate) fn strictly_ascending(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{} must be strictly ascending", what)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, String)", into = "(f64, f64, String)")]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub label: String,
}

impl Interval {
    pub fn new(start: f64, end: f64, label: impl Into<String>) -> Self {
        Self {
            start,
            end,
            label: label.into(),
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

impl From<(f64, f64, String)> for Interval {
    fn from((start, end, label): (f64, f64, String)) -> Self {
        Self { start, end, label }
    }
}

impl From<Interval> for (f64, f64, String) {
    fn from(i: Interval) -> Self {
        (i.start, i.end, i.label)
    }
}

/// Non-overlapping, ascending labeled intervals (chords, sections, keys).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabeledIntervals {
    pub intervals: Vec<Interval>,
}

/// Chord intervals over the 25-class major/minor vocabulary.
pub type ChordAnnotation = LabeledIntervals;

impl LabeledIntervals {
    pub fn new(intervals: Vec<Interval>) -> Self {
        Self { intervals }
    }

    pub fn validate(&self) -> Result<()> {
        for iv in &self.intervals {
            if !(iv.start.is_finite() && iv.end.is_finite()) {
                return Err(Error::NonFinite("interval bounds".into()));
            }
            if iv.end <= iv.start {
                return Err(Error::InvalidArgument(format!(
                    "interval [{}, {}) must have end > start",
                    iv.start, iv.end
                )));
            }
        }
        if self
            .intervals
            .windows(2)
            .any(|w| w[1].start < w[0].end)
        {
            return Err(Error::InvalidArgument(
                "intervals must be ascending and non-overlapping".into(),
            ));
        }
        Ok(())
    }

    /// Also checks every label against the major/minor vocabulary.
    pub fn validate_harmony(&self) -> Result<()> {
        self.validate()?;
        for iv in &self.intervals {
            iv.label.parse::<HarmonyLabel>()?;
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.intervals.iter().map(Interval::duration).sum()
    }

    pub fn end_time(&self) -> f64 {
        self.intervals.last().map_or(0.0, |i| i.end)
    }

    /// Label of the interval containing `t` (`start <= t < end`).
    pub fn label_at(&self, t: f64) -> Option<&str> {
        self.intervals
            .iter()
            .find(|i| i.start <= t && t < i.end)
            .map(|i| i.label.as_str())
    }

    /// Label with the greatest total duration; ties go to the first seen.
    pub fn dominant_label(&self) -> Option<&str> {
        let mut totals: Vec<(&str, f64)> = Vec::new();
        for iv in &self.intervals {
            match totals.iter_mut().find(|(l, _)| *l == iv.label) {
                Some((_, d)) => *d += iv.duration(),
                None => totals.push((&iv.label, iv.duration())),
            }
        }
        let mut best: Option<(&str, f64)> = None;
        for (l, d) in totals {
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((l, d));
            }
        }
        best.map(|(l, _)| l)
    }

    /// Interior boundaries: starts of every interval but the first.
    pub fn boundaries(&self) -> Vec<f64> {
        self.intervals.iter().skip(1).map(|i| i.start).collect()
    }

    /// Merge per-frame labels on a grid of `frame_s` seconds into intervals;
    /// the last interval ends at `duration`.
    pub fn from_frames(labels: &[String], frame_s: f64, duration: f64) -> Self {
        let mut intervals: Vec<Interval> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            let start = i as f64 * frame_s;
            match intervals.last_mut() {
                Some(last) if &last.label == l => {}
                _ => {
                    if let Some(last) = intervals.last_mut() {
                        last.end = start;
                    }
                    intervals.push(Interval::new(start, start, l.clone()));
                }
            }
        }
        if let Some(last) = intervals.last_mut() {
            last.end = duration.max(last.start + f64::EPSILON);
        }
        Self { intervals }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TagAnnotation {
    pub tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<BTreeMap<String, f64>>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec(value).map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    crate::util::write_atomic(path, &bytes)
}
