//! Shallow probes on encoder features for the five downstream tasks.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::annotation::{BeatAnnotation, Interval, LabeledIntervals, TagAnnotation};
use crate::audio::labels::HarmonyLabel;
use crate::audio::synth::{synth_corpus_clip, CorpusKind, TaskAnnotation, SECTION_LABELS, TAG_VOCABULARY};
use crate::audio::{load_wav, resample, AudioBuffer, TARGET_SAMPLE_RATE};
use crate::config::{LayerChoice, LayerName, ProbeSection};
use crate::encoder::{EncoderConfig, EncoderGraph};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate_beats, evaluate_chords, evaluate_keys, evaluate_structure, evaluate_tagging, EvalReport, MetricConfig, StructureClip,
};
use crate::pretrain::Checkpoint;
use crate::scalar::Scalar;
use crate::tensor::{
    adam_step, read_container, write_container, AdamConfig, AdamState, BoundParams, Container, ParamStore, Tape, Tensor,
    Var,
};
use crate::util::{derive_seed, rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskName {
    Beat,
    Chord,
    Structure,
    Key,
    Tagging,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [TaskName::Beat, TaskName::Chord, TaskName::Structure, TaskName::Key, TaskName::Tagging];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::Beat => "beat",
            TaskName::Chord => "chord",
            TaskName::Structure => "structure",
            TaskName::Key => "key",
            TaskName::Tagging => "tagging",
        }
    }

    /// Synthetic generator whose clips carry this task's labels.
    pub fn corpus_kind(self) -> CorpusKind {
        match self {
            TaskName::Beat => CorpusKind::Beat,
            TaskName::Chord => CorpusKind::Triads,
            TaskName::Structure => CorpusKind::Structure,
            TaskName::Key => CorpusKind::Key,
            TaskName::Tagging => CorpusKind::Tagging,
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{}` (beat, chord, structure, key, tagging)", s)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskLevel {
    Token,
    Sequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    pub level: TaskLevel,
    pub classes: usize,
    /// Prediction grid; `None` for whole-clip tasks.
    pub frame_ms: Option<f64>,
    pub labels: Vec<String>,
}

pub const BEAT_CLASSES: [&str; 3] = ["none", "beat", "downbeat"];

impl TaskSpec {
    pub fn new(name: TaskName) -> Self {
        let harmony = || (0..HarmonyLabel::CLASSES).map(|i| HarmonyLabel::from_index(i).expect("index < 25")).collect::<Vec<_>>();
        let (level, frame_ms, labels): (TaskLevel, Option<f64>, Vec<String>) = match name {
            TaskName::Beat => (TaskLevel::Token, Some(50.0), BEAT_CLASSES.iter().map(|s| s.to_string()).collect()),
            TaskName::Chord => (TaskLevel::Token, Some(125.0), harmony().into_iter().map(|h| h.chord_name()).collect()),
            TaskName::Structure => (TaskLevel::Token, Some(200.0), SECTION_LABELS.iter().map(|s| s.to_string()).collect()),
            TaskName::Key => (TaskLevel::Sequence, Some(2000.0), harmony().into_iter().map(|h| h.key_name()).collect()),
            TaskName::Tagging => (TaskLevel::Sequence, None, TAG_VOCABULARY.iter().map(|s| s.to_string()).collect()),
        };
        Self {
            name,
            level,
            classes: labels.len(),
            frame_ms,
            labels,
        }
    }

    pub fn frame_s(&self) -> Option<f64> {
        self.frame_ms.map(|m| m / 1000.0)
    }

    pub fn multi_label(&self) -> bool {
        self.name == TaskName::Tagging
    }

    pub fn has_boundary_head(&self) -> bool {
        self.name == TaskName::Structure
    }

    /// Class index of a label in this task's vocabulary.
    pub fn class_of(&self, label: &str) -> Result<usize> {
        match self.name {
            TaskName::Chord | TaskName::Key => Ok(label.parse::<HarmonyLabel>()?.index()),
            _ => self
                .labels
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::UnknownLabel(label.to_string())),
        }
    }
}

/// Number of task frames covering `duration_s`: `ceil(duration / frame)`.
pub fn n_task_frames(duration_s: f64, frame_ms: f64) -> usize {
    let x = duration_s * 1000.0 / frame_ms;
    let r = x.round();
    (if (x - r).abs() < 1e-9 { r } else { x.ceil() }).max(0.0) as usize
}

/// Token frames assigned to each task frame `[k F, (k + 1) F)`: those whose
/// centers fall inside, else the single nearest by center distance.
pub fn task_assignment(centers: &[f64], n_out: usize, frame_s: f64) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); n_out];
    for (t, &c) in centers.iter().enumerate() {
        let k = (c / frame_s).floor();
        if k >= 0.0 && (k as usize) < n_out {
            out[k as usize].push(t);
        }
    }
    for (k, rows) in out.iter_mut().enumerate() {
        if rows.is_empty() && !centers.is_empty() {
            let mid = (k as f64 + 0.5) * frame_s;
            let mut best = 0;
            for (t, &c) in centers.iter().enumerate() {
                if (c - mid).abs() < (centers[best] - mid).abs() {
                    best = t;
                }
            }
            rows.push(best);
        }
    }
    out
}

fn average_rows<T: Scalar>(x: &Tensor<T>, groups: &[Vec<usize>]) -> Result<Tensor<T>> {
    let (_, d) = x.dims2()?;
    let mut data = Vec::with_capacity(groups.len() * d);
    for g in groups {
        let mut acc = vec![0.0f64; d];
        for &t in g {
            for (a, &v) in acc.iter_mut().zip(x.row(t)) {
                *a += v.as_f64();
            }
        }
        let n = g.len().max(1) as f64;
        data.extend(acc.into_iter().map(|a| T::of(a / n)));
    }
    Tensor::new(vec![groups.len(), d], data)
}

fn averaging_matrix<T: Scalar>(groups: &[Vec<usize>], t: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(&[groups.len(), t]);
    for (k, g) in groups.iter().enumerate() {
        let w = T::of(1.0 / g.len().max(1) as f64);
        for &i in g {
            m.data_mut()[k * t + i] += w;
        }
    }
    m
}

/// Resample token-rate features onto the task grid of `frame_ms`.
pub fn align_to_task<T: Scalar>(features: &Tensor<T>, centers: &[f64], duration_s: f64, frame_ms: f64) -> Result<Tensor<T>> {
    let (t, _) = features.dims2()?;
    if centers.len() != t {
        return Err(Error::Shape(format!("{} frame centers for {} feature rows", centers.len(), t)));
    }
    if !(frame_ms > 0.0) || t == 0 {
        return Err(Error::InvalidArgument("alignment needs frame_ms > 0 and at least one feature row".into()));
    }
    let n = n_task_frames(duration_s, frame_ms);
    average_rows(features, &task_assignment(centers, n, frame_ms / 1000.0))
}

/// Temporal mean.
pub fn pool_sequence<T: Scalar>(features: &Tensor<T>) -> Result<Vec<T>> {
    let (t, _) = features.dims2()?;
    if t == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty sequence".into()));
    }
    Ok(average_rows(features, &[(0..t).collect()])?.into_data())
}

/// Encoder states of a clip: every layer, the token frame centers and the clip length.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatures<T: Scalar> {
    /// Input projection then each block, each `T x d_model`.
    pub layers: Vec<Tensor<T>>,
    pub centers: Vec<f64>,
    pub duration_s: f64,
}

impl<T: Scalar> ClipFeatures<T> {
    pub fn n_frames(&self) -> usize {
        self.centers.len()
    }

    /// States of one layer per `choice`; all layers for `weighted`.
    pub fn select(&self, choice: LayerChoice) -> Result<Vec<&Tensor<T>>> {
        match choice {
            LayerChoice::Named(LayerName::Last) => Ok(vec![self.layers.last().expect("layers")]),
            LayerChoice::Named(LayerName::Weighted) => Ok(self.layers.iter().collect()),
            LayerChoice::Index(i) => self
                .layers
                .get(i)
                .map(|l| vec![l])
                .ok_or_else(|| Error::Config(format!("layer {} of {}", i, self.layers.len() - 1))),
        }
    }
}

/// Normalized mel of a clip cut into encoder-sized chunks.
fn mel_chunks<T: Scalar>(ck: &Checkpoint<T>, audio: &AudioBuffer) -> Result<(Vec<Tensor<T>>, Vec<f64>, f64)> {
    let fe_cfg = ck.config.frontend_config();
    let mf = ck.normalizer.apply(&ck.featurize(audio)?)?;
    let t = mf.n_frames();
    if t == 0 {
        return Err(Error::InvalidArgument("clip is shorter than one hop".into()));
    }
    let max = ck.encoder_config().max_frames();
    let chunks = (0..t).step_by(max).map(|s| mf.crop(s, max.min(t - s)).into_frames()).collect();
    let centers = (0..t).map(|i| fe_cfg.frame_center(i)).collect();
    Ok((chunks, centers, audio.duration_seconds()))
}

/// Frozen features: mel, checkpoint normalizer, encoder (in chunks of the
/// maximum input length).
pub fn extract_features<T: Scalar>(ck: &Checkpoint<T>, audio: &AudioBuffer) -> Result<ClipFeatures<T>> {
    let (chunks, centers, duration_s) = mel_chunks(ck, audio)?;
    let enc = ck.encoder_config();
    let mut layers: Vec<Vec<T>> = vec![Vec::new(); enc.layers + 1];
    for c in &chunks {
        let hs = crate::encoder::encode(&enc, &ck.params, c)?;
        for (acc, l) in layers.iter_mut().zip(hs.layers) {
            acc.extend(l.into_data());
        }
    }
    let t = centers.len();
    let layers = layers
        .into_iter()
        .map(|d| Tensor::new(vec![t, enc.d_model], d))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClipFeatures {
        layers,
        centers,
        duration_s,
    })
}

/// Targets of one clip on the task grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Structure { classes: Vec<usize>, boundary: Vec<bool> },
    Tags(Vec<bool>),
}

impl Targets {
    fn rows(&self) -> usize {
        match self {
            Targets::Classes(c) | Targets::Structure { classes: c, .. } => c.len(),
            Targets::Tags(_) => 1,
        }
    }
}

/// Frames `k` whose time `k F` lies within one frame of an event.
fn event_frames(events: &[f64], n: usize, frame_s: f64) -> Vec<bool> {
    (0..n)
        .map(|k| {
            let t = k as f64 * frame_s;
            events.iter().any(|&e| (t - e).abs() <= frame_s + 1e-9)
        })
        .collect()
}

fn interval_classes(spec: &TaskSpec, ann: &LabeledIntervals, n: usize, frame_s: f64, default: usize) -> Result<Vec<usize>> {
    ann.validate()?;
    for iv in &ann.intervals {
        spec.class_of(&iv.label)?;
    }
    (0..n)
        .map(|k| match ann.label_at((k as f64 + 0.5) * frame_s) {
            Some(l) => spec.class_of(l),
            None => Ok(default),
        })
        .collect()
}

/// Rasterize an annotation onto `n` task frames (or a multi-hot vector).
pub fn rasterize(spec: &TaskSpec, ann: &TaskAnnotation, n: usize) -> Result<Targets> {
    let frame_s = spec.frame_s().unwrap_or(1.0);
    match (spec.name, ann) {
        (TaskName::Beat, TaskAnnotation::Beat(b)) => {
            b.validate()?;
            let beat = event_frames(&b.beats, n, frame_s);
            let down = event_frames(&b.downbeats, n, frame_s);
            Ok(Targets::Classes((0..n).map(|k| if down[k] { 2 } else if beat[k] { 1 } else { 0 }).collect()))
        }
        (TaskName::Chord, TaskAnnotation::Chord(c)) => {
            Ok(Targets::Classes(interval_classes(spec, c, n, frame_s, HarmonyLabel::None.index())?))
        }
        (TaskName::Key, TaskAnnotation::Key(c)) => {
            Ok(Targets::Classes(interval_classes(spec, c, n, frame_s, HarmonyLabel::None.index())?))
        }
        (TaskName::Structure, TaskAnnotation::Structure(s)) => {
            let silence = spec.class_of("silence")?;
            Ok(Targets::Structure {
                classes: interval_classes(spec, s, n, frame_s, silence)?,
                boundary: event_frames(&s.boundaries(), n, frame_s),
            })
        }
        (TaskName::Tagging, TaskAnnotation::Tagging(t)) => {
            let mut hot = vec![false; spec.classes];
            for tag in &t.tags {
                hot[spec.class_of(tag)?] = true;
            }
            Ok(Targets::Tags(hot))
        }
        (task, _) => Err(Error::InvalidArgument(format!("annotation does not belong to the {} task", task))),
    }
}

/// Annotation of a task read from its JSON file.
pub fn read_task_annotation(path: &Path, task: TaskName) -> Result<TaskAnnotation> {
    use crate::audio::annotation::read_json;
    Ok(match task {
        TaskName::Beat => TaskAnnotation::Beat(read_json(path)?),
        TaskName::Chord => TaskAnnotation::Chord(read_json(path)?),
        TaskName::Structure => TaskAnnotation::Structure(read_json(path)?),
        TaskName::Key => TaskAnnotation::Key(read_json(path)?),
        TaskName::Tagging => TaskAnnotation::Tagging(read_json(path)?),
    })
}

pub fn write_task_annotation(path: &Path, ann: &TaskAnnotation) -> Result<()> {
    use crate::audio::annotation::write_json;
    match ann {
        TaskAnnotation::Beat(b) => write_json(path, b),
        TaskAnnotation::Chord(c) | TaskAnnotation::Structure(c) | TaskAnnotation::Key(c) => write_json(path, c),
        TaskAnnotation::Tagging(t) => write_json(path, t),
    }
}

/// Labeled synthetic clips for a task; clip `i` uses `derive_seed(seed, [i])`.
pub fn synth_task_dataset(task: TaskName, clips: usize, seconds: f64, seed: u64) -> Result<Vec<(AudioBuffer, TaskAnnotation)>> {
    (0..clips)
        .map(|i| {
            let ex = synth_corpus_clip(task.corpus_kind(), seconds, TARGET_SAMPLE_RATE, seed, i as u64)?;
            let ann = match task {
                TaskName::Beat => ex.beats.map(TaskAnnotation::Beat),
                TaskName::Chord => ex.chords.map(TaskAnnotation::Chord),
                TaskName::Structure => ex.sections.map(TaskAnnotation::Structure),
                TaskName::Key => ex.key.map(TaskAnnotation::Key),
                TaskName::Tagging => ex.tags.map(TaskAnnotation::Tagging),
            }
            .expect("generator emits its task's labels");
            Ok((ex.audio, ann))
        })
        .collect()
}

/// Synthetic train and test sets of a task as sized by the probe settings.
pub fn synth_probe_splits(section: &ProbeSection, task: TaskName) -> Result<(Vec<(AudioBuffer, TaskAnnotation)>, Vec<(AudioBuffer, TaskAnnotation)>)> {
    let base = derive_seed(section.seed, &[task as u64]);
    Ok((
        synth_task_dataset(task, section.train_clips, section.clip_seconds, derive_seed(base, &[0]))?,
        synth_task_dataset(task, section.test_clips, section.clip_seconds, derive_seed(base, &[1]))?,
    ))
}

/// Hidden layer width.
pub const PROBE_HIDDEN: usize = 512;

/// A trained probe: MLP weights, the layer it reads, and for fine-tuned
/// probes the updated backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct Probe<T: Scalar> {
    pub spec: TaskSpec,
    pub layer: LayerChoice,
    pub params: ParamStore<T>,
    pub backbone: Option<ParamStore<T>>,
    /// Fingerprint of the checkpoint the probe was trained on.
    pub fingerprint: String,
}

fn xavier<T: Scalar>(r: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| T::of(r.random_range(-b..=b)))
}

/// Seeded probe parameters: `hidden`, `out`, optional `boundary` head and layer `mix` logits.
pub fn init_probe<T: Scalar>(spec: &TaskSpec, input_dim: usize, hidden: usize, n_layers: Option<usize>, seed: u64) -> ParamStore<T> {
    let mut r = rng(seed);
    let mut p = ParamStore::new();
    p.insert("hidden.weight", xavier(&mut r, input_dim, hidden));
    p.insert("hidden.bias", Tensor::zeros(&[hidden]));
    p.insert("out.weight", xavier(&mut r, hidden, spec.classes));
    p.insert("out.bias", Tensor::zeros(&[spec.classes]));
    if spec.has_boundary_head() {
        p.insert("boundary.weight", xavier(&mut r, hidden, 1));
        p.insert("boundary.bias", Tensor::zeros(&[1]));
    }
    if let Some(l) = n_layers {
        p.insert("mix", Tensor::zeros(&[l]));
    }
    p
}

/// Output logits of the probe for input rows (one var per layer).
struct ProbeOut<'t, T: Scalar> {
    logits: Var<'t, T>,
    boundary: Option<Var<'t, T>>,
}

fn probe_forward<'t, T: Scalar>(p: &BoundParams<'t, T>, inputs: &[Var<'t, T>]) -> Result<ProbeOut<'t, T>> {
    let x = if inputs.len() == 1 {
        inputs[0]
    } else {
        let w = p.get("mix")?.softmax(0)?;
        let mut acc = inputs[0].mul(w.slice(0, 0, 1)?)?;
        for (l, &xl) in inputs.iter().enumerate().skip(1) {
            acc = acc.add(xl.mul(w.slice(0, l, l + 1)?)?)?;
        }
        acc
    };
    let h = x.matmul(p.get("hidden.weight")?)?.add(p.get("hidden.bias")?)?.relu();
    let logits = h.matmul(p.get("out.weight")?)?.add(p.get("out.bias")?)?;
    let boundary = match p.get("boundary.weight") {
        Ok(w) => Some(h.matmul(w)?.add(p.get("boundary.bias")?)?),
        Err(_) => None,
    };
    Ok(ProbeOut { logits, boundary })
}

fn bool_f<T: Scalar>(b: &[bool]) -> Vec<T> {
    b.iter().map(|&v| if v { T::one() } else { T::zero() }).collect()
}

fn probe_loss<'t, T: Scalar>(spec: &TaskSpec, out: &ProbeOut<'t, T>, targets: &Targets) -> Result<Var<'t, T>> {
    match targets {
        Targets::Classes(c) => out.logits.cross_entropy(c, &vec![true; c.len()]),
        Targets::Structure { classes, boundary } => {
            let ce = out.logits.cross_entropy(classes, &vec![true; classes.len()])?;
            let b = out.boundary.ok_or_else(|| Error::Shape("structure probe lacks a boundary head".into()))?;
            ce.add(b.bce_with_logits(&bool_f::<T>(boundary))?)
        }
        Targets::Tags(_) if !spec.multi_label() => Err(Error::InvalidArgument("tag targets for a single-label task".into())),
        Targets::Tags(hot) => out.logits.bce_with_logits(&bool_f::<T>(hot)),
    }
}

/// Probe inputs and targets of one clip.
#[derive(Debug, Clone)]
pub struct ProbeExample<T: Scalar> {
    /// Aligned features, one `n x D` tensor per selected layer.
    pub inputs: Vec<Tensor<T>>,
    pub targets: Targets,
}

/// Features aligned to the task grid (or pooled), one tensor per selected layer.
pub fn task_inputs<T: Scalar>(spec: &TaskSpec, feats: &ClipFeatures<T>, layer: LayerChoice) -> Result<Vec<Tensor<T>>> {
    let groups = task_groups(spec, &feats.centers, feats.duration_s);
    feats.select(layer)?.into_iter().map(|x| average_rows(x, &groups)).collect()
}

/// Token frames averaged into each probe row.
fn task_groups(spec: &TaskSpec, centers: &[f64], duration_s: f64) -> Vec<Vec<usize>> {
    match spec.frame_ms {
        Some(ms) => task_assignment(centers, n_task_frames(duration_s, ms), ms / 1000.0),
        None => vec![(0..centers.len()).collect()],
    }
}

fn task_rows(spec: &TaskSpec, duration_s: f64) -> usize {
    spec.frame_ms.map_or(1, |ms| n_task_frames(duration_s, ms))
}

/// Training settings of a probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_frames: usize,
    pub val_fraction: f64,
    pub layer: LayerChoice,
    pub finetune: bool,
    pub finetune_lr: f64,
    pub seed: u64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self::from(&ProbeSection::default())
    }
}

impl From<&ProbeSection> for ProbeOptions {
    fn from(s: &ProbeSection) -> Self {
        Self {
            hidden: s.hidden,
            lr: s.lr,
            epochs: s.epochs,
            patience: s.patience,
            batch_frames: s.batch_frames,
            val_fraction: s.val_fraction,
            layer: s.layer,
            finetune: s.finetune,
            finetune_lr: s.finetune_lr,
            seed: s.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Frame (or clip) accuracy on the training rows for single-label tasks.
    pub train_accuracy: Option<f64>,
}

/// Stack rows of many examples.
struct RowSet<T: Scalar> {
    inputs: Vec<Tensor<T>>,
    targets: Targets,
}

fn stack_rows<T: Scalar>(examples: &[&ProbeExample<T>]) -> Result<RowSet<T>> {
    let n_layers = examples[0].inputs.len();
    let d = examples[0].inputs[0].shape()[1];
    let mut inputs = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let mut data = Vec::new();
        for ex in examples {
            data.extend_from_slice(ex.inputs[l].data());
        }
        let n = data.len() / d;
        inputs.push(Tensor::new(vec![n, d], data)?);
    }
    let targets = match &examples[0].targets {
        Targets::Classes(_) => Targets::Classes(
            examples
                .iter()
                .flat_map(|e| match &e.targets {
                    Targets::Classes(c) => c.clone(),
                    _ => unreachable!("uniform targets"),
                })
                .collect(),
        ),
        Targets::Structure { .. } => {
            let (mut c, mut b) = (Vec::new(), Vec::new());
            for e in examples {
                if let Targets::Structure { classes, boundary } = &e.targets {
                    c.extend_from_slice(classes);
                    b.extend_from_slice(boundary);
                }
            }
            Targets::Structure { classes: c, boundary: b }
        }
        Targets::Tags(_) => Targets::Tags(
            examples
                .iter()
                .flat_map(|e| match &e.targets {
                    Targets::Tags(h) => h.clone(),
                    _ => unreachable!("uniform targets"),
                })
                .collect(),
        ),
    };
    Ok(RowSet { inputs, targets })
}

fn pick_rows<T: Scalar>(set: &RowSet<T>, spec: &TaskSpec, idx: &[usize]) -> Result<RowSet<T>> {
    let inputs = set
        .inputs
        .iter()
        .map(|x| {
            let d = x.shape()[1];
            let mut data = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                data.extend_from_slice(x.row(i));
            }
            Tensor::new(vec![idx.len(), d], data)
        })
        .collect::<Result<Vec<_>>>()?;
    let targets = match &set.targets {
        Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        Targets::Structure { classes, boundary } => Targets::Structure {
            classes: idx.iter().map(|&i| classes[i]).collect(),
            boundary: idx.iter().map(|&i| boundary[i]).collect(),
        },
        Targets::Tags(h) => {
            let k = spec.classes;
            Targets::Tags(idx.iter().flat_map(|&i| h[i * k..(i + 1) * k].to_vec()).collect())
        }
    };
    Ok(RowSet { inputs, targets })
}

fn set_rows<T: Scalar>(set: &RowSet<T>) -> usize {
    set.inputs[0].shape()[0]
}

/// Loss (no gradient) and single-label accuracy of a row set.
fn eval_rows<T: Scalar>(spec: &TaskSpec, params: &ParamStore<T>, set: &RowSet<T>) -> Result<(f64, Option<f64>)> {
    let tape = Tape::new();
    let p = params.bind(&tape, false);
    let inputs: Vec<_> = set.inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = probe_forward(&p, &inputs)?;
    let loss = probe_loss(spec, &out, &set.targets)?.value().item().as_f64();
    let acc = match &set.targets {
        Targets::Classes(c) | Targets::Structure { classes: c, .. } => {
            let l = out.logits.value();
            let k = l.shape()[1];
            let hits = c.iter().enumerate().filter(|&(i, &y)| argmax(&l.data()[i * k..(i + 1) * k]) == y).count();
            Some(hits as f64 / c.len().max(1) as f64)
        }
        Targets::Tags(_) => None,
    };
    Ok((loss, acc))
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn split_val(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng(seed));
    let n_val = if n >= 2 { ((n as f64 * frac).round() as usize).min(n - 1) } else { 0 };
    let val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

/// Fit probe weights on fixed inputs with Adam, mini-batches of rows and
/// early stopping on the validation loss.
pub fn fit_probe<T: Scalar>(
    spec: &TaskSpec,
    train: &[ProbeExample<T>],
    val: &[ProbeExample<T>],
    opts: &ProbeOptions,
) -> Result<(ParamStore<T>, ProbeTrainReport)> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("probe training set is empty".into()));
    }
    let n_layers = train[0].inputs.len();
    let d = train[0].inputs[0].shape()[1];
    let mix = (n_layers > 1).then_some(n_layers);
    let mut params = init_probe::<T>(spec, d, opts.hidden, mix, derive_seed(opts.seed, &[1]));
    let tr = stack_rows(&train.iter().collect::<Vec<_>>())?;
    let va = if val.is_empty() { None } else { Some(stack_rows(&val.iter().collect::<Vec<_>>())?) };
    let n = set_rows(&tr);
    let mut opt = AdamState::new();
    let mut r = rng(derive_seed(opts.seed, &[2]));
    let mut best = (f64::INFINITY, params.clone(), 0usize);
    let mut epochs_run = 0;
    for epoch in 0..opts.epochs {
        epochs_run = epoch + 1;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut r);
        for batch in order.chunks(opts.batch_frames.max(1)) {
            let rows = pick_rows(&tr, spec, batch)?;
            let tape = Tape::new();
            let p = params.bind(&tape, true);
            let inputs: Vec<_> = rows.inputs.iter().map(|x| tape.constant(x.clone())).collect();
            let loss = probe_loss(spec, &probe_forward(&p, &inputs)?, &rows.targets)?;
            if !loss.value().item().is_finite() {
                return Err(Error::NonFinite("probe loss".into()));
            }
            let grads = p.gradients(&tape.backward(loss)?);
            adam_step(&mut params, &grads, &mut opt, opts.lr, &AdamConfig::default())?;
        }
        let monitor = match &va {
            Some(v) => eval_rows(spec, &params, v)?.0,
            None => eval_rows(spec, &params, &tr)?.0,
        };
        if monitor < best.0 {
            best = (monitor, params.clone(), epoch + 1);
        } else if epoch + 1 - best.2 >= opts.patience.max(1) {
            break;
        }
    }
    let params = best.1;
    let (train_loss, train_accuracy) = eval_rows(spec, &params, &tr)?;
    let val_loss = match &va {
        Some(v) => Some(eval_rows(spec, &params, v)?.0),
        None => None,
    };
    Ok((
        params,
        ProbeTrainReport {
            epochs_run,
            best_epoch: best.2,
            train_loss,
            val_loss,
            train_accuracy,
        },
    ))
}

/// Probe examples for a dataset under a checkpoint (frozen features).
pub fn build_examples<T: Scalar>(
    ck: &Checkpoint<T>,
    dataset: &[(AudioBuffer, TaskAnnotation)],
    spec: &TaskSpec,
    layer: LayerChoice,
) -> Result<Vec<ProbeExample<T>>> {
    dataset
        .iter()
        .map(|(audio, ann)| {
            let feats = extract_features(ck, audio)?;
            let inputs = task_inputs(spec, &feats, layer)?;
            let targets = rasterize(spec, ann, task_rows(spec, feats.duration_s))?;
            debug_assert_eq!(inputs[0].shape()[0], targets.rows());
            Ok(ProbeExample { inputs, targets })
        })
        .collect()
}

/// Train a probe on `(audio, annotation)` pairs. The backbone stays frozen
/// unless `opts.finetune` is set, in which case the returned probe carries
/// its own updated copy; `ck` itself is never modified.
pub fn train_probe<T: Scalar>(
    ck: &Checkpoint<T>,
    dataset: &[(AudioBuffer, TaskAnnotation)],
    spec: &TaskSpec,
    opts: &ProbeOptions,
) -> Result<(Probe<T>, ProbeTrainReport)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("probe dataset is empty".into()));
    }
    let (train_idx, val_idx) = split_val(dataset.len(), opts.val_fraction, derive_seed(opts.seed, &[0]));
    if opts.finetune {
        return finetune_probe(ck, dataset, &train_idx, spec, opts);
    }
    let examples = build_examples(ck, dataset, spec, opts.layer)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let (params, report) = fit_probe(spec, &pick(&train_idx), &pick(&val_idx), opts)?;
    Ok((
        Probe {
            spec: spec.clone(),
            layer: opts.layer,
            params,
            backbone: None,
            fingerprint: ck.fingerprint(),
        },
        report,
    ))
}

struct FinetuneClip<T: Scalar> {
    chunks: Vec<Tensor<T>>,
    align: Tensor<T>,
    targets: Targets,
}

fn layer_indices(choice: LayerChoice, layers: usize) -> Result<Vec<usize>> {
    Ok(match choice {
        LayerChoice::Named(LayerName::Last) => vec![layers],
        LayerChoice::Named(LayerName::Weighted) => (0..=layers).collect(),
        LayerChoice::Index(i) if i <= layers => vec![i],
        LayerChoice::Index(i) => return Err(Error::Config(format!("layer {} of {}", i, layers))),
    })
}

/// Probe inputs computed on the tape from mel chunks, so gradients reach the encoder.
fn finetune_inputs<'t, T: Scalar>(
    enc: &EncoderConfig,
    backbone: &BoundParams<'t, T>,
    tape: &'t Tape<T>,
    clip: &FinetuneClip<T>,
    layers: &[usize],
) -> Result<Vec<Var<'t, T>>> {
    let graph = EncoderGraph::new(enc, backbone, tape);
    let mut per_layer: Vec<Vec<Var<'t, T>>> = vec![Vec::new(); layers.len()];
    for c in &clip.chunks {
        let states = graph.forward(tape.constant(c.clone()), None)?;
        for (slot, &l) in per_layer.iter_mut().zip(layers) {
            slot.push(states[l]);
        }
    }
    let align = tape.constant(clip.align.clone());
    per_layer
        .into_iter()
        .map(|parts| {
            let h = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 0)? };
            align.matmul(h)
        })
        .collect()
}

fn finetune_probe<T: Scalar>(
    ck: &Checkpoint<T>,
    dataset: &[(AudioBuffer, TaskAnnotation)],
    train_idx: &[usize],
    spec: &TaskSpec,
    opts: &ProbeOptions,
) -> Result<(Probe<T>, ProbeTrainReport)> {
    let enc = ck.encoder_config();
    let layers = layer_indices(opts.layer, enc.layers)?;
    let clips = train_idx
        .iter()
        .map(|&i| {
            let (audio, ann) = &dataset[i];
            let (chunks, centers, duration_s) = mel_chunks(ck, audio)?;
            let groups = task_groups(spec, &centers, duration_s);
            Ok(FinetuneClip {
                chunks,
                align: averaging_matrix(&groups, centers.len()),
                targets: rasterize(spec, ann, task_rows(spec, duration_s))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mix = (layers.len() > 1).then_some(layers.len());
    let mut probe = init_probe::<T>(spec, enc.d_model, opts.hidden, mix, derive_seed(opts.seed, &[1]));
    let mut backbone = ck.encoder_weights();
    let (mut opt_p, mut opt_b) = (AdamState::new(), AdamState::new());
    let mut r = rng(derive_seed(opts.seed, &[2]));
    let mut last = f64::NAN;
    for _ in 0..opts.epochs {
        let mut order: Vec<usize> = (0..clips.len()).collect();
        order.shuffle(&mut r);
        let mut total = 0.0;
        for &i in &order {
            let tape = Tape::new();
            let bp = backbone.bind(&tape, true);
            let pp = probe.bind(&tape, true);
            let inputs = finetune_inputs(&enc, &bp, &tape, &clips[i], &layers)?;
            let loss = probe_loss(spec, &probe_forward(&pp, &inputs)?, &clips[i].targets)?;
            let v = loss.value().item().as_f64();
            if !v.is_finite() {
                return Err(Error::NonFinite("fine-tuning loss".into()));
            }
            total += v;
            let g = tape.backward(loss)?;
            let (gp, gb) = (pp.gradients(&g), bp.gradients(&g));
            adam_step(&mut probe, &gp, &mut opt_p, opts.lr, &AdamConfig::default())?;
            adam_step(&mut backbone, &gb, &mut opt_b, opts.finetune_lr, &AdamConfig::default())?;
        }
        last = total / clips.len() as f64;
    }
    Ok((
        Probe {
            spec: spec.clone(),
            layer: opts.layer,
            params: probe,
            backbone: Some(backbone),
            fingerprint: ck.fingerprint(),
        },
        ProbeTrainReport {
            epochs_run: opts.epochs,
            best_epoch: opts.epochs,
            train_loss: last,
            val_loss: None,
            train_accuracy: None,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProbeMeta {
    format: String,
    spec: TaskSpec,
    layer: LayerChoice,
    fingerprint: String,
}

const PROBE_FORMAT: &str = "rqmir-probe-1";

impl<T: Scalar> Probe<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = ProbeMeta {
            format: PROBE_FORMAT.into(),
            spec: self.spec.clone(),
            layer: self.layer,
            fingerprint: self.fingerprint.clone(),
        };
        let mut tensors = ParamStore::new();
        tensors.merge_prefixed("probe.", self.params.clone());
        if let Some(b) = &self.backbone {
            tensors.merge_prefixed("backbone.", b.clone());
        }
        write_container(
            path,
            &Container {
                meta: serde_json::to_string(&meta).expect("probe meta serializes"),
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container::<T>(path)?;
        let meta: ProbeMeta = serde_json::from_str(&c.meta).map_err(|e| Error::format(path, e.to_string()))?;
        if meta.format != PROBE_FORMAT {
            return Err(Error::format(path, format!("unknown probe format `{}`", meta.format)));
        }
        let backbone = c.tensors.strip_prefix("backbone.");
        Ok(Self {
            spec: meta.spec,
            layer: meta.layer,
            params: c.tensors.strip_prefix("probe."),
            backbone: (!backbone.is_empty()).then_some(backbone),
            fingerprint: meta.fingerprint,
        })
    }

    /// Encoder weights this probe reads: its fine-tuned copy or the checkpoint's.
    fn backbone_for<'a>(&'a self, ck: &'a Checkpoint<T>) -> std::borrow::Cow<'a, ParamStore<T>> {
        match &self.backbone {
            Some(b) => std::borrow::Cow::Borrowed(b),
            None => std::borrow::Cow::Borrowed(&ck.params),
        }
    }

    /// Per-row probabilities (softmax, or sigmoid for tags) and boundary probabilities.
    pub fn predict_probs(&self, ck: &Checkpoint<T>, audio: &AudioBuffer) -> Result<TaskOutput> {
        if ck.fingerprint() != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found: ck.fingerprint(),
            });
        }
        let feats = match &self.backbone {
            Some(_) => {
                let mut tuned = ck.clone();
                tuned.params = self.backbone_for(ck).into_owned();
                extract_features(&tuned, audio)?
            }
            None => extract_features(ck, audio)?,
        };
        let inputs = task_inputs(&self.spec, &feats, self.layer)?;
        self.probs_from_inputs(&inputs, feats.duration_s)
    }

    pub fn probs_from_inputs(&self, inputs: &[Tensor<T>], duration_s: f64) -> Result<TaskOutput> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = probe_forward(&p, &vars)?;
        let logits = out.logits.value().cast::<f64>();
        let probs = if self.spec.multi_label() {
            Tensor::new(logits.shape().to_vec(), logits.data().iter().map(|&z| sigmoid(z)).collect())?
        } else {
            softmax_rows(&logits)
        };
        let boundary = out.boundary.map(|b| b.value().data().iter().map(|&z| sigmoid(z.as_f64())).collect());
        Ok(TaskOutput {
            probs,
            boundary,
            duration_s,
        })
    }

    pub fn predict(&self, ck: &Checkpoint<T>, audio: &AudioBuffer) -> Result<TaskAnnotation> {
        Ok(decode(&self.spec, &self.predict_probs(ck, audio)?, &DecodeConfig::default()))
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax_rows(x: &Tensor<f64>) -> Tensor<f64> {
    let k = x.shape()[1];
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter_mut().map(|v| {
            *v = (*v - m).exp();
            *v
        }).sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Probe output on the task grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutput {
    pub probs: Tensor<f64>,
    pub boundary: Option<Vec<f64>>,
    pub duration_s: f64,
}

/// Peak picking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub threshold: f64,
    pub beat_distance_ms: f64,
    pub downbeat_distance_ms: f64,
    pub boundary_distance_ms: f64,
    pub tag_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            beat_distance_ms: 120.0,
            downbeat_distance_ms: 500.0,
            boundary_distance_ms: 1000.0,
            tag_threshold: 0.5,
        }
    }
}

/// Local maxima at or above `threshold` (plateaus count once, at their first
/// index), kept greedily by height so that kept peaks are at least
/// `distance` frames apart.
pub fn pick_peaks(act: &[f64], threshold: f64, distance: usize) -> Vec<usize> {
    let n = act.len();
    let mut cands: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || act[i] > act[i - 1];
            let mut j = i + 1;
            while j < n && act[j] == act[i] {
                j += 1;
            }
            let right = j == n || act[i] > act[j];
            act[i] >= threshold && left && right
        })
        .collect();
    cands.sort_by(|&a, &b| act[b].total_cmp(&act[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= distance.max(1)) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

fn frames_for(ms: f64, frame_ms: f64) -> usize {
    ((ms / frame_ms) - 1e-9).ceil().max(1.0) as usize
}

fn argmax_labels(spec: &TaskSpec, probs: &Tensor<f64>) -> Vec<String> {
    let k = probs.shape()[1];
    probs.data().chunks(k).map(|row| spec.labels[argmax(row)].clone()).collect()
}

/// Task output to annotation form.
pub fn decode(spec: &TaskSpec, out: &TaskOutput, cfg: &DecodeConfig) -> TaskAnnotation {
    let frame_ms = spec.frame_ms.unwrap_or(1000.0);
    let frame_s = frame_ms / 1000.0;
    let probs = &out.probs;
    let k = probs.shape()[1];
    let col = |c: usize| probs.data().chunks(k).map(|r| r[c]).collect::<Vec<f64>>();
    match spec.name {
        TaskName::Beat => {
            let beat_act: Vec<f64> = probs.data().chunks(k).map(|r| r[1] + r[2]).collect();
            let beat_idx = pick_peaks(&beat_act, cfg.threshold, frames_for(cfg.beat_distance_ms, frame_ms));
            let down_idx = pick_peaks(&col(2), cfg.threshold, frames_for(cfg.downbeat_distance_ms, frame_ms));
            let snap = frames_for(cfg.beat_distance_ms, frame_ms);
            let mut downs: Vec<usize> = down_idx
                .iter()
                .filter_map(|&d| beat_idx.iter().copied().filter(|b| b.abs_diff(d) < snap).min_by_key(|b| b.abs_diff(d)))
                .collect();
            downs.dedup();
            let t = |i: usize| i as f64 * frame_s;
            TaskAnnotation::Beat(BeatAnnotation {
                beats: beat_idx.into_iter().map(t).collect(),
                downbeats: downs.into_iter().map(t).collect(),
            })
        }
        TaskName::Chord => TaskAnnotation::Chord(LabeledIntervals::from_frames(&argmax_labels(spec, probs), frame_s, out.duration_s)),
        TaskName::Structure => {
            let labels = argmax_labels(spec, probs);
            let cuts = out
                .boundary
                .as_ref()
                .map(|b| pick_peaks(b, cfg.threshold, frames_for(cfg.boundary_distance_ms, frame_ms)))
                .unwrap_or_default();
            TaskAnnotation::Structure(segments(&labels, &cuts, frame_s, out.duration_s))
        }
        TaskName::Key => {
            // clip key: the class with the largest summed probability
            let mut sums = vec![0.0; k];
            for r in probs.data().chunks(k) {
                sums.iter_mut().zip(r).for_each(|(s, v)| *s += v);
            }
            let label = spec.labels[argmax(&sums)].clone();
            TaskAnnotation::Key(LabeledIntervals::new(vec![Interval::new(0.0, out.duration_s.max(f64::EPSILON), label)]))
        }
        TaskName::Tagging => {
            let scores: std::collections::BTreeMap<String, f64> =
                spec.labels.iter().cloned().zip(probs.data().iter().copied()).collect();
            TaskAnnotation::Tagging(TagAnnotation {
                tags: scores.iter().filter(|(_, &s)| s >= cfg.tag_threshold).map(|(t, _)| t.clone()).collect(),
                scores: Some(scores),
            })
        }
    }
}

/// Contiguous label runs, additionally split at `cuts` (frame indices).
fn segments(labels: &[String], cuts: &[usize], frame_s: f64, duration: f64) -> LabeledIntervals {
    let mut out: Vec<Interval> = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        let start = i as f64 * frame_s;
        let new = match out.last() {
            None => true,
            Some(last) => &last.label != l || cuts.contains(&i),
        };
        if new {
            if let Some(last) = out.last_mut() {
                last.end = start;
            }
            out.push(Interval::new(start, start, l.clone()));
        }
    }
    if let Some(last) = out.last_mut() {
        last.end = duration.max(last.start + f64::EPSILON);
    }
    LabeledIntervals::new(out)
}

/// Ground truth labels per task frame, for frame-level scoring.
pub fn frame_labels(spec: &TaskSpec, ann: &LabeledIntervals, n: usize) -> Vec<String> {
    let frame_s = spec.frame_s().unwrap_or(1.0);
    (0..n)
        .map(|k| ann.label_at((k as f64 + 0.5) * frame_s).unwrap_or("silence").to_string())
        .collect()
}

/// Score `(estimate, reference)` annotation pairs of one task.
pub fn evaluate_annotations(task: TaskName, pairs: &[(TaskAnnotation, TaskAnnotation)], cfg: &MetricConfig) -> Result<EvalReport> {
    let spec = TaskSpec::new(task);
    let mismatch = || Error::InvalidArgument(format!("annotation pair does not belong to the {} task", task));
    match task {
        TaskName::Beat => {
            let v = pairs
                .iter()
                .map(|p| match p {
                    (TaskAnnotation::Beat(e), TaskAnnotation::Beat(r)) => Ok((e.clone(), r.clone())),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_beats(&v, cfg)
        }
        TaskName::Chord => {
            let v = pairs
                .iter()
                .map(|p| match p {
                    (TaskAnnotation::Chord(e), TaskAnnotation::Chord(r)) => Ok((e.clone(), r.clone())),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_chords(&v, cfg)
        }
        TaskName::Structure => {
            let frame_ms = spec.frame_ms.expect("structure has a frame grid");
            let v = pairs
                .iter()
                .map(|p| match p {
                    (TaskAnnotation::Structure(e), TaskAnnotation::Structure(r)) => {
                        let n = n_task_frames(r.end_time(), frame_ms);
                        Ok(StructureClip {
                            est_frames: frame_labels(&spec, e, n),
                            ref_frames: frame_labels(&spec, r, n),
                            est_boundaries: e.boundaries(),
                            ref_boundaries: r.boundaries(),
                        })
                    }
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_structure(&v, cfg)
        }
        TaskName::Key => {
            let key = |iv: &LabeledIntervals| -> Result<HarmonyLabel> {
                iv.dominant_label().ok_or_else(|| Error::InvalidArgument("empty key annotation".into()))?.parse()
            };
            let v = pairs
                .iter()
                .map(|p| match p {
                    (TaskAnnotation::Key(e), TaskAnnotation::Key(r)) => Ok((key(e)?, key(r)?)),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            evaluate_keys(&v, cfg)
        }
        TaskName::Tagging => {
            let (mut scores, mut labels) = (Vec::new(), Vec::new());
            for p in pairs {
                let (TaskAnnotation::Tagging(e), TaskAnnotation::Tagging(r)) = p else { return Err(mismatch()) };
                let s = spec
                    .labels
                    .iter()
                    .map(|l| match &e.scores {
                        Some(m) => m.get(l).copied().unwrap_or(0.0),
                        None => f64::from(u8::from(e.tags.contains(l))),
                    })
                    .collect();
                let Targets::Tags(hot) = rasterize(&spec, &TaskAnnotation::Tagging(r.clone()), 1)? else {
                    unreachable!("tagging rasterizes to tags")
                };
                scores.push(s);
                labels.push(hot);
            }
            evaluate_tagging(&scores, &labels, cfg)
        }
    }
}

/// Predict every clip of a labeled set with a probe and score the predictions.
pub fn evaluate_probe<T: Scalar>(
    ck: &Checkpoint<T>,
    probe: &Probe<T>,
    dataset: &[(AudioBuffer, TaskAnnotation)],
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    let pairs = dataset
        .iter()
        .map(|(audio, reference)| Ok((probe.predict(ck, audio)?, reference.clone())))
        .collect::<Result<Vec<_>>>()?;
    evaluate_annotations(probe.spec.name, &pairs, cfg)
}

/// Annotation file of a clip for a task: `<stem>.<task>.json` next to `<stem>.wav`.
pub fn annotation_path(wav: &Path, task: TaskName) -> std::path::PathBuf {
    wav.with_extension(format!("{}.json", task))
}

/// Sorted `.wav` files of a directory.
pub fn list_wavs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Read a clip at the working sample rate.
pub fn load_audio(path: &Path) -> Result<AudioBuffer> {
    let a = load_wav(path)?;
    if a.sample_rate() == TARGET_SAMPLE_RATE {
        Ok(a)
    } else {
        resample(&a, TARGET_SAMPLE_RATE)
    }
}

/// Every `<stem>.wav` of `dir` that has a `<stem>.<task>.json`, in name order.
pub fn load_task_dir(dir: &Path, task: TaskName) -> Result<Vec<(AudioBuffer, TaskAnnotation)>> {
    let mut out = Vec::new();
    for wav in list_wavs(dir)? {
        let ann = annotation_path(&wav, task);
        if ann.exists() {
            out.push((load_audio(&wav)?, read_task_annotation(&ann, task)?));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no clips labeled for {}", dir.display(), task)));
    }
    Ok(out)
}
