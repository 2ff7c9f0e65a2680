//! Labeled synthetic audio for every downstream task.
//!
//! Click tracks carry beat/downbeat labels, triad renderings carry chord
//! labels, and the piece generators compose them into key, structure and
//! tagging examples. Everything is a pure function of its arguments and seed.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::annotation::{BeatAnnotation, ChordAnnotation, Interval, LabeledIntervals, TagAnnotation};
use super::labels::{midi_to_hz, HarmonyLabel, Mode};
use super::AudioBuffer;
use crate::error::{Error, Result};
use crate::util::{derive_seed, rng};

/// Click burst length.
pub const CLICK_SECONDS: f64 = 0.010;
/// Downbeat clicks are this much louder than other beats.
pub const DOWNBEAT_GAIN: f32 = 2.0;

const CLICK_AMP: f32 = 0.25;
const CLICK_DECAY_S: f64 = 0.0025;
const TONE_AMP: f32 = 0.15;
const NOISE_STD: f32 = 1e-5;
const FADE_S: f64 = 0.005;

/// Structural section classes.
pub const SECTION_LABELS: [&str; 7] = ["intro", "verse", "chorus", "bridge", "inst", "outro", "silence"];

/// Tags the tagging generator can emit.
pub const TAG_VOCABULARY: [&str; 6] = ["fast", "harmonic", "major", "minor", "noisy", "percussive"];

fn add_noise(samples: &mut [f32], std: f32, rng: &mut impl Rng) {
    if std <= 0.0 {
        return;
    }
    let n = Normal::new(0.0f32, std).expect("positive std");
    for s in samples.iter_mut() {
        *s += n.sample(rng);
    }
}

fn add_clicks(samples: &mut [f32], sr: u32, times: &[(f64, f32)], rng: &mut impl Rng) {
    let len = (CLICK_SECONDS * sr as f64).round() as usize;
    for &(t, gain) in times {
        let start = (t * sr as f64).round() as usize;
        for i in 0..len {
            let Some(s) = samples.get_mut(start + i) else { break };
            let env = (-(i as f64 / sr as f64) / CLICK_DECAY_S).exp() as f32;
            *s += CLICK_AMP * gain * env * rng.random_range(-1.0f32..1.0);
        }
    }
}

/// Frequencies of the root-position triad with its root in octave 4.
pub fn triad_frequencies(label: HarmonyLabel) -> Option<[f64; 3]> {
    let HarmonyLabel::Tonal { root, mode } = label else { return None };
    let root_note = 60.0 + root as f64;
    let third = if mode == Mode::Major { 4.0 } else { 3.0 };
    Some([
        midi_to_hz(root_note),
        midi_to_hz(root_note + third),
        midi_to_hz(root_note + 7.0),
    ])
}

fn add_triad(samples: &mut [f32], sr: u32, start: f64, end: f64, label: HarmonyLabel, amp: f32, rng: &mut impl Rng) {
    let Some(freqs) = triad_frequencies(label) else { return };
    let s0 = (start * sr as f64).round() as usize;
    let s1 = ((end * sr as f64).round() as usize).min(samples.len());
    let fade = (FADE_S * sr as f64) as usize;
    let phases: Vec<f64> = freqs.iter().map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    for i in s0..s1 {
        let t = (i - s0) as f64 / sr as f64;
        let edge = (i - s0).min(s1 - 1 - i);
        let env = if edge < fade {
            0.5 - 0.5 * (std::f64::consts::PI * edge as f64 / fade as f64).cos()
        } else {
            1.0
        };
        let v: f64 = freqs
            .iter()
            .zip(&phases)
            .map(|(f, p)| (std::f64::consts::TAU * f * t + p).sin())
            .sum();
        samples[i] += amp * (env * v) as f32;
    }
}

/// Click track at `bpm`; every `beats_per_bar`-th beat is a louder downbeat.
pub fn synth_click_track(
    bpm: f64,
    beats_per_bar: usize,
    duration: f64,
    sr: u32,
    seed: u64,
) -> Result<(AudioBuffer, BeatAnnotation)> {
    if !(bpm > 0.0) || !(duration > 0.0) || beats_per_bar == 0 {
        return Err(Error::InvalidArgument(
            "click track needs bpm > 0, duration > 0, beats_per_bar >= 1".into(),
        ));
    }
    let ann = beat_grid(bpm, beats_per_bar, 0.0, duration);
    let mut samples = vec![0.0f32; (duration * sr as f64).round() as usize];
    let mut r = rng(seed);
    add_clicks(&mut samples, sr, &click_events(&ann), &mut r);
    Ok((AudioBuffer::new(samples, sr)?, ann))
}

/// Beats at `offset + k * 60 / bpm < duration`.
fn beat_grid(bpm: f64, beats_per_bar: usize, offset: f64, duration: f64) -> BeatAnnotation {
    let period = 60.0 / bpm;
    let mut beats = Vec::new();
    let mut downbeats = Vec::new();
    let mut k = 0usize;
    loop {
        let t = offset + k as f64 * period;
        if t >= duration {
            break;
        }
        beats.push(t);
        if k % beats_per_bar == 0 {
            downbeats.push(t);
        }
        k += 1;
    }
    BeatAnnotation { beats, downbeats }
}

fn click_events(ann: &BeatAnnotation) -> Vec<(f64, f32)> {
    let mut di = 0;
    ann.beats
        .iter()
        .map(|&b| {
            if ann.downbeats.get(di) == Some(&b) {
                di += 1;
                (b, DOWNBEAT_GAIN)
            } else {
                (b, 1.0)
            }
        })
        .collect()
}

/// Each chord held for `seconds_per_chord`, rendered as three sinusoids
/// (root, third, fifth) plus mild noise; `none` is noise only.
pub fn synth_chord_sequence<S: AsRef<str>>(
    progression: &[S],
    seconds_per_chord: f64,
    sr: u32,
    seed: u64,
) -> Result<(AudioBuffer, ChordAnnotation)> {
    if !(seconds_per_chord > 0.0) {
        return Err(Error::InvalidArgument("seconds_per_chord must be positive".into()));
    }
    let labels = progression
        .iter()
        .map(|s| s.as_ref().parse::<HarmonyLabel>())
        .collect::<Result<Vec<_>>>()?;
    let duration = labels.len() as f64 * seconds_per_chord;
    let mut samples = vec![0.0f32; (duration * sr as f64).round() as usize];
    let mut r = rng(seed);
    let mut intervals = Vec::with_capacity(labels.len());
    for (i, &l) in labels.iter().enumerate() {
        let start = i as f64 * seconds_per_chord;
        let end = start + seconds_per_chord;
        add_triad(&mut samples, sr, start, end, l, TONE_AMP, &mut r);
        intervals.push(Interval::new(start, end, l.chord_name()));
    }
    add_noise(&mut samples, NOISE_STD, &mut r);
    Ok((AudioBuffer::new(samples, sr)?, LabeledIntervals::new(intervals)))
}

/// Annotation attached to a synthetic example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskAnnotation {
    Beat(BeatAnnotation),
    Chord(LabeledIntervals),
    Structure(LabeledIntervals),
    Key(LabeledIntervals),
    Tagging(TagAnnotation),
}

/// A generated clip with every label it supports.
#[derive(Debug, Clone)]
pub struct SynthExample {
    pub audio: AudioBuffer,
    pub beats: Option<BeatAnnotation>,
    pub chords: Option<LabeledIntervals>,
    pub sections: Option<LabeledIntervals>,
    pub key: Option<LabeledIntervals>,
    pub tags: Option<TagAnnotation>,
}

fn random_chord(r: &mut impl Rng) -> HarmonyLabel {
    HarmonyLabel::from_index(r.random_range(0..24)).expect("index < 24")
}

/// Diatonic triads of a key: I ii iii IV V vi (major) or i III iv v VI VII (natural minor).
fn diatonic_chords(key: HarmonyLabel) -> Vec<HarmonyLabel> {
    let HarmonyLabel::Tonal { root, mode } = key else { return Vec::new() };
    let degree = |semis: u8, minor: bool| {
        let pc = (root + semis) % 12;
        if minor {
            HarmonyLabel::minor(pc)
        } else {
            HarmonyLabel::major(pc)
        }
    };
    match mode {
        Mode::Major => vec![
            degree(0, false),
            degree(2, true),
            degree(4, true),
            degree(5, false),
            degree(7, false),
            degree(9, true),
        ],
        Mode::Minor => vec![
            degree(0, true),
            degree(3, false),
            degree(5, true),
            degree(7, true),
            degree(8, false),
            degree(10, false),
        ],
    }
}

/// Random chord changes over a click track: beat and chord labels.
pub fn synth_mixed_clip(seconds: f64, sr: u32, seed: u64) -> Result<SynthExample> {
    let mut r = rng(seed);
    let bpm = r.random_range(80.0..160.0);
    let bpb = if r.random_bool(0.5) { 4 } else { 3 };
    let period = 60.0 / bpm;
    let bar = period * bpb as f64;
    let n = (seconds * sr as f64).round() as usize;
    let mut samples = vec![0.0f32; n];

    let beats = beat_grid(bpm, bpb, 0.0, seconds);
    add_clicks(&mut samples, sr, &click_events(&beats), &mut r);

    // chords change on bar lines, holding one or two bars
    let mut intervals = Vec::new();
    let mut t = 0.0;
    while t < seconds {
        let bars = r.random_range(1..=2) as f64;
        let end = (t + bars * bar).min(seconds);
        let label = if r.random_bool(0.05) { HarmonyLabel::None } else { random_chord(&mut r) };
        add_triad(&mut samples, sr, t, end, label, TONE_AMP, &mut r);
        intervals.push(Interval::new(t, end, label.chord_name()));
        t = end;
    }
    add_noise(&mut samples, NOISE_STD, &mut r);
    Ok(SynthExample {
        audio: AudioBuffer::new(samples, sr)?,
        beats: Some(beats),
        chords: Some(LabeledIntervals::new(intervals)),
        sections: None,
        key: None,
        tags: None,
    })
}

/// Random triads with random durations and no percussion.
pub fn synth_triad_clip(seconds: f64, sr: u32, seed: u64) -> Result<SynthExample> {
    let mut r = rng(seed);
    let mut labels = Vec::new();
    let mut intervals = Vec::new();
    let mut t = 0.0;
    while t < seconds {
        let end = (t + r.random_range(0.5..2.0)).min(seconds);
        let label = if r.random_bool(0.05) { HarmonyLabel::None } else { random_chord(&mut r) };
        labels.push((t, end, label));
        intervals.push(Interval::new(t, end, label.chord_name()));
        t = end;
    }
    let mut samples = vec![0.0f32; (seconds * sr as f64).round() as usize];
    for (s, e, l) in labels {
        add_triad(&mut samples, sr, s, e, l, TONE_AMP, &mut r);
    }
    add_noise(&mut samples, NOISE_STD, &mut r);
    Ok(SynthExample {
        audio: AudioBuffer::new(samples, sr)?,
        beats: None,
        chords: Some(LabeledIntervals::new(intervals)),
        sections: None,
        key: None,
        tags: None,
    })
}

/// Diatonic progression in a random key, one chord per second.
pub fn synth_key_clip(seconds: f64, sr: u32, seed: u64) -> Result<SynthExample> {
    let mut r = rng(seed);
    let key = random_chord(&mut r);
    let chords = diatonic_chords(key);
    let mut samples = vec![0.0f32; (seconds * sr as f64).round() as usize];
    let mut intervals = Vec::new();
    let mut t = 0.0;
    let mut i = 0;
    while t < seconds {
        let end = (t + 1.0).min(seconds);
        // tonic on every other chord anchors the key
        let label = if i % 2 == 0 { chords[0] } else { chords[r.random_range(1..chords.len())] };
        add_triad(&mut samples, sr, t, end, label, TONE_AMP, &mut r);
        intervals.push(Interval::new(t, end, label.chord_name()));
        t = end;
        i += 1;
    }
    add_noise(&mut samples, NOISE_STD, &mut r);
    Ok(SynthExample {
        audio: AudioBuffer::new(samples, sr)?,
        beats: None,
        chords: Some(LabeledIntervals::new(intervals)),
        sections: None,
        key: Some(LabeledIntervals::new(vec![Interval::new(0.0, seconds, key.key_name())])),
        tags: None,
    })
}

/// Texture of one section class: (tonic offsets, mode flags, clicks, loudness, noise).
fn section_texture(label: &str) -> (&'static [(u8, bool)], bool, f32, f32) {
    match label {
        "intro" => (&[(0, false)], false, 0.5, NOISE_STD),
        "verse" => (&[(0, false), (9, true)], true, 1.0, NOISE_STD),
        "chorus" => (&[(5, false), (7, false)], true, 1.5, NOISE_STD),
        "bridge" => (&[(9, true), (4, true)], false, 1.0, NOISE_STD),
        "inst" => (&[], true, 1.0, 0.05),
        "outro" => (&[(0, false)], false, 0.3, NOISE_STD),
        _ => (&[], false, 0.0, 0.002),
    }
}

/// Sequence of functional sections, each with its own texture.
pub fn synth_structure_clip(seconds: f64, sr: u32, seed: u64) -> Result<SynthExample> {
    let mut r = rng(seed);
    let tonic = r.random_range(0..12u8);
    let bpm = r.random_range(90.0..140.0);
    let mut order: Vec<&str> = vec!["intro"];
    let body = ["verse", "chorus", "verse", "chorus", "bridge", "inst", "chorus"];
    let start = r.random_range(0..3);
    order.extend(body.iter().cycle().skip(start).take(12));
    let mut samples = vec![0.0f32; (seconds * sr as f64).round() as usize];
    let mut intervals = Vec::new();
    let mut t = 0.0;
    for (i, &label) in order.iter().enumerate() {
        if t >= seconds {
            break;
        }
        let remaining = seconds - t;
        let mut label = label;
        let mut len = r.random_range(2.0..4.0f64).min(remaining);
        if remaining < 5.0 || i + 1 == order.len() {
            label = if r.random_bool(0.5) { "outro" } else { "silence" };
            len = remaining;
        }
        let end = t + len;
        let (chords, clicks, gain, noise) = section_texture(label);
        if !chords.is_empty() {
            let step = len / chords.len() as f64;
            for (j, &(off, minor)) in chords.iter().enumerate() {
                let pc = (tonic + off) % 12;
                let l = if minor { HarmonyLabel::minor(pc) } else { HarmonyLabel::major(pc) };
                add_triad(&mut samples, sr, t + j as f64 * step, t + (j + 1) as f64 * step, l, TONE_AMP * gain, &mut r);
            }
        }
        if clicks {
            let grid = beat_grid(bpm, 4, t, end);
            let ev: Vec<(f64, f32)> = click_events(&grid).into_iter().map(|(b, g)| (b, g * gain)).collect();
            add_clicks(&mut samples, sr, &ev, &mut r);
        }
        let s0 = (t * sr as f64).round() as usize;
        let s1 = ((end * sr as f64).round() as usize).min(samples.len());
        add_noise(&mut samples[s0..s1], noise, &mut r);
        intervals.push(Interval::new(t, end, label));
        t = end;
        if label == "outro" || label == "silence" {
            break;
        }
    }
    Ok(SynthExample {
        audio: AudioBuffer::new(samples, sr)?,
        beats: None,
        chords: None,
        sections: Some(LabeledIntervals::new(intervals)),
        key: None,
        tags: None,
    })
}

/// Random combination of texture attributes, each reflected in the tags.
pub fn synth_tagged_clip(seconds: f64, sr: u32, seed: u64) -> Result<SynthExample> {
    let mut r = rng(seed);
    let percussive = r.random_bool(0.5);
    let harmonic = !percussive || r.random_bool(0.5);
    let fast = r.random_bool(0.5);
    let noisy = r.random_bool(0.3);
    let minor = r.random_bool(0.5);
    let mut samples = vec![0.0f32; (seconds * sr as f64).round() as usize];
    let mut tags = Vec::new();
    if percussive {
        let bpm = if fast { r.random_range(150.0..180.0) } else { r.random_range(70.0..100.0) };
        let grid = beat_grid(bpm, 4, 0.0, seconds);
        add_clicks(&mut samples, sr, &click_events(&grid), &mut r);
        tags.push("percussive");
        if fast {
            tags.push("fast");
        }
    }
    if harmonic {
        let root = r.random_range(0..12u8);
        let l = if minor { HarmonyLabel::minor(root) } else { HarmonyLabel::major(root) };
        add_triad(&mut samples, sr, 0.0, seconds, l, TONE_AMP, &mut r);
        tags.push("harmonic");
        tags.push(if minor { "minor" } else { "major" });
    }
    add_noise(&mut samples, if noisy { 0.08 } else { NOISE_STD }, &mut r);
    if noisy {
        tags.push("noisy");
    }
    tags.sort_unstable();
    Ok(SynthExample {
        audio: AudioBuffer::new(samples, sr)?,
        beats: None,
        chords: None,
        sections: None,
        key: None,
        tags: Some(TagAnnotation {
            tags: tags.into_iter().map(String::from).collect(),
            scores: None,
        }),
    })
}

/// Which generator to use for a corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusKind {
    Mixed,
    Triads,
    Beat,
    Chord,
    Structure,
    Key,
    Tagging,
}

impl std::str::FromStr for CorpusKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mixed" => CorpusKind::Mixed,
            "triads" => CorpusKind::Triads,
            "beat" => CorpusKind::Beat,
            "chord" => CorpusKind::Chord,
            "structure" => CorpusKind::Structure,
            "key" => CorpusKind::Key,
            "tagging" => CorpusKind::Tagging,
            other => return Err(Error::Config(format!("unknown corpus kind `{}`", other))),
        })
    }
}

/// Generate clip `index` of a corpus; each clip has its own derived seed.
pub fn synth_corpus_clip(kind: CorpusKind, seconds: f64, sr: u32, seed: u64, index: u64) -> Result<SynthExample> {
    let s = derive_seed(seed, &[index]);
    match kind {
        CorpusKind::Mixed | CorpusKind::Beat => synth_mixed_clip(seconds, sr, s),
        CorpusKind::Triads | CorpusKind::Chord => synth_triad_clip(seconds, sr, s),
        CorpusKind::Structure => synth_structure_clip(seconds, sr, s),
        CorpusKind::Key => synth_key_clip(seconds, sr, s),
        CorpusKind::Tagging => synth_tagged_clip(seconds, sr, s),
    }
}
