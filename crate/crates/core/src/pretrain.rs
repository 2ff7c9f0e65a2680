//! Masked token modeling: mask mel spans, encode, predict the quantizer's
//! tokens at masked positions.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::config::RunConfig;
use crate::dsp::{fit_normalizer, Frontend, MelFrameSequence, Normalizer};
use crate::encoder::{init_weights, EncoderConfig, EncoderGraph};
use crate::error::{Error, Result};
use crate::quantizer::{build_quantizer, utilization, LookupMode, Quantizer};
use crate::scalar::Scalar;
use crate::tensor::{
    adam_step, read_container, write_container, AdamConfig, AdamState, BoundParams, Container, ParamStore, Tape, Tensor,
    Var,
};
use crate::util::{derive_seed, rng};

pub const HEAD_WEIGHT: &str = "head.weight";
pub const HEAD_BIAS: &str = "head.bias";

const STREAM_INIT: u64 = 1;
const STREAM_BATCH: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Masked spans of a `T`-frame sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPlan {
    pub spans: Vec<(usize, usize)>,
    pub masked: Vec<bool>,
}

impl MaskPlan {
    pub fn none(t: usize) -> Self {
        Self::from_spans(t, Vec::new())
    }

    pub fn full(t: usize) -> Self {
        Self::from_spans(t, if t > 0 { vec![(0, t)] } else { Vec::new() })
    }

    fn from_spans(t: usize, spans: Vec<(usize, usize)>) -> Self {
        let mut masked = vec![false; t];
        for &(a, b) in &spans {
            masked[a..b].iter_mut().for_each(|m| *m = true);
        }
        Self { spans, masked }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.masked.is_empty() {
            0.0
        } else {
            self.masked_count() as f64 / self.masked.len() as f64
        }
    }

    pub fn masked_indices(&self) -> Vec<usize> {
        (0..self.masked.len()).filter(|&i| self.masked[i]).collect()
    }
}

/// Frames per mask span, at least one.
pub fn span_frames(token_rate: f64, span_ms: f64) -> usize {
    ((span_ms / 1000.0 * token_rate).round() as usize).max(1)
}

/// Cut `[0, t)` into consecutive spans and mask each with probability `p`.
pub fn plan_masks(t: usize, token_rate: f64, span_ms: f64, p: f64, seed: u64) -> MaskPlan {
    let len = span_frames(token_rate, span_ms);
    let mut r = rng(seed);
    let mut spans = Vec::new();
    let mut start = 0;
    while start < t {
        let end = (start + len).min(t);
        if r.random::<f64>() < p {
            spans.push((start, end));
        }
        start = end;
    }
    MaskPlan::from_spans(t, spans)
}

/// Replace masked rows with i.i.d. `N(0, noise_std^2)` noise.
pub fn apply_mask<T: Scalar>(frames: &Tensor<T>, plan: &MaskPlan, noise_seed: u64, noise_std: f64) -> Result<Tensor<T>> {
    let (t, d) = frames.dims2()?;
    if plan.len() != t {
        return Err(Error::Shape(format!("mask plan covers {} frames, input has {}", plan.len(), t)));
    }
    let normal = Normal::new(0.0, noise_std)
        .map_err(|e| Error::InvalidArgument(format!("noise std {}: {}", noise_std, e)))?;
    let mut r = rng(noise_seed);
    let mut out = frames.clone();
    let data = out.data_mut();
    for (i, _) in plan.masked.iter().enumerate().filter(|(_, &m)| m) {
        for v in &mut data[i * d..(i + 1) * d] {
            *v = T::of(normal.sample(&mut r));
        }
    }
    Ok(out)
}

/// `base * min(1, step / warmup)`; `step` counts from 1.
pub fn warmup_lr(base: f64, step: u64, warmup: u64) -> f64 {
    if step >= warmup {
        base
    } else {
        base * step as f64 / warmup as f64
    }
}

/// Zero-initialized linear prediction head, `d_model -> n`.
pub fn init_head<T: Scalar>(d_model: usize, n: usize) -> ParamStore<T> {
    let mut p = ParamStore::new();
    p.insert(HEAD_WEIGHT, Tensor::zeros(&[d_model, n]));
    p.insert(HEAD_BIAS, Tensor::zeros(&[n]));
    p
}

/// One training item: masked input, targets from the unmasked input, plan.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample<T: Scalar> {
    pub frames: Tensor<T>,
    pub tokens: Vec<u32>,
    pub plan: MaskPlan,
}

/// Masked-position loss and the logits it came from.
pub struct MaskedLoss<'t, T: Scalar> {
    pub loss: Var<'t, T>,
    pub targets: Vec<usize>,
    pub logits: Var<'t, T>,
}

impl<T: Scalar> MaskedLoss<'_, T> {
    /// Fraction of masked positions whose argmax logit is the target.
    pub fn top1(&self) -> f64 {
        let logits = self.logits.value();
        let n = logits.shape()[1];
        let hits = self
            .targets
            .iter()
            .enumerate()
            .filter(|&(i, &y)| argmax(&logits.data()[i * n..(i + 1) * n]) == y)
            .count();
        hits as f64 / self.targets.len().max(1) as f64
    }
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

/// Cross-entropy averaged over the masked positions of the batch, or `None`
/// when nothing is masked.
pub fn masked_loss<'t, T: Scalar>(
    tape: &'t Tape<T>,
    cfg: &EncoderConfig,
    p: &BoundParams<'t, T>,
    batch: &[TrainExample<T>],
) -> Result<Option<MaskedLoss<'t, T>>> {
    let graph = EncoderGraph::new(cfg, p, tape);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for ex in batch {
        let (t, _) = ex.frames.dims2()?;
        if ex.tokens.len() != t || ex.plan.len() != t {
            return Err(Error::Shape(format!(
                "example has {} frames, {} tokens, {}-frame plan",
                t,
                ex.tokens.len(),
                ex.plan.len()
            )));
        }
        let idx = ex.plan.masked_indices();
        if idx.is_empty() {
            continue;
        }
        let states = graph.forward(tape.constant(ex.frames.clone()), None)?;
        let last = *states.last().expect("encoder returns states");
        rows.push(last.embedding_lookup(&idx)?);
        targets.extend(idx.iter().map(|&i| ex.tokens[i] as usize));
    }
    if rows.is_empty() {
        return Ok(None);
    }
    let h = if rows.len() == 1 { rows[0] } else { tape.concat(&rows, 0)? };
    let logits = h.matmul(p.get(HEAD_WEIGHT)?)?.add(p.get(HEAD_BIAS)?)?;
    let loss = logits.cross_entropy(&targets, &vec![true; targets.len()])?;
    Ok(Some(MaskedLoss { loss, targets, logits }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub top1: f64,
    pub masked_frames: usize,
    pub total_frames: usize,
}

/// One Adam step on the masked loss at learning rate `lr`; `None` (and no
/// update) when the batch has no masked frame.
pub fn train_step<T: Scalar>(
    cfg: &EncoderConfig,
    params: &mut ParamStore<T>,
    opt: &mut AdamState<T>,
    batch: &[TrainExample<T>],
    lr: f64,
) -> Result<Option<StepStats>> {
    let tape = Tape::new();
    let bound = params.bind(&tape, true);
    let Some(ml) = masked_loss(&tape, cfg, &bound, batch)? else {
        return Ok(None);
    };
    let loss = ml.loss.value().item().as_f64();
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let stats = StepStats {
        loss,
        top1: ml.top1(),
        masked_frames: ml.targets.len(),
        total_frames: batch.iter().map(|e| e.plan.len()).sum(),
    };
    let grads = bound.gradients(&tape.backward(ml.loss)?);
    drop(bound);
    if grads.values().any(|g| !g.all_finite()) {
        return Err(Error::NonFinite("gradients".into()));
    }
    adam_step(params, &grads, opt, lr, &AdamConfig::default())?;
    Ok(Some(stats))
}

/// A normalized clip and its tokens (computed before any masking).
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedClip<T: Scalar> {
    pub frames: Tensor<T>,
    pub tokens: Vec<u32>,
}

/// Quantizer for a run, rounded through `T` so a saved copy reloads exactly.
pub fn run_quantizer<T: Scalar>(cfg: &RunConfig) -> Result<Quantizer> {
    let q = &cfg.quantizer;
    let full = build_quantizer(q.seed, cfg.frontend.n_mels, q.code_dim, q.codebook_size, q.mode)?;
    let round = |t: &Tensor<f64>| t.cast::<T>().cast::<f64>();
    Quantizer::from_parts(round(full.projection()), round(full.codebook()), q.mode, q.seed)
}

/// Pipeline events, in order of occurrence.
#[derive(Debug, Clone, PartialEq)]
pub enum PretrainEvent {
    Tokenized { clip: usize },
    Masked { step: u64, clip: usize },
    Step(StepLog),
    Skipped { step: u64 },
    Checkpoint { step: u64, path: PathBuf },
}

/// One JSON-lines record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub masked_frac: f64,
    pub top1: f64,
    /// Fraction of the codebook appearing among this batch's targets.
    pub utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    dtype: String,
    fingerprint: String,
    config: RunConfig,
    step: u64,
    adam_step: u64,
    quantizer_seed: u64,
    quantizer_mode: LookupMode,
    normalizer: Normalizer,
}

const CHECKPOINT_FORMAT: &str = "rqmir-checkpoint-1";

/// Everything needed to resume training or extract features.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    /// Semantic configuration; paths are cleared.
    pub config: RunConfig,
    /// Encoder weights and the prediction head.
    pub params: ParamStore<T>,
    pub quantizer: Quantizer,
    pub normalizer: Normalizer,
    pub optimizer: AdamState<T>,
    pub step: u64,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        self.config.encoder_config()
    }

    /// Encoder weights without the head.
    pub fn encoder_weights(&self) -> ParamStore<T> {
        self.params
            .iter()
            .filter(|(k, _)| !k.starts_with("head."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn to_container(&self) -> Container<T> {
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            dtype: format!("{:?}", T::DTYPE),
            fingerprint: self.fingerprint(),
            config: self.config.clone(),
            step: self.step,
            adam_step: self.optimizer.step,
            quantizer_seed: self.quantizer.seed(),
            quantizer_mode: self.quantizer.mode(),
            normalizer: self.normalizer.clone(),
        };
        let mut tensors = ParamStore::new();
        tensors.merge_prefixed("model.", self.params.clone());
        tensors.merge_prefixed("quantizer.", self.quantizer.to_params().cast::<T>());
        tensors.merge_prefixed("adam.m.", self.optimizer.m.clone().into_iter().collect());
        tensors.merge_prefixed("adam.v.", self.optimizer.v.clone().into_iter().collect());
        Container {
            meta: serde_json::to_string(&meta).expect("checkpoint meta serializes"),
            tensors,
        }
    }

    pub fn from_container(c: &Container<T>) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("checkpoint: {}", m));
        let meta: CheckpointMeta = serde_json::from_str(&c.meta).map_err(|e| bad(e.to_string()))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format `{}`", meta.format)));
        }
        if meta.config.fingerprint() != meta.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: meta.config.fingerprint(),
                found: meta.fingerprint,
            });
        }
        meta.config.validate()?;
        let quantizer = Quantizer::from_params(
            &c.tensors.strip_prefix("quantizer.").cast::<f64>(),
            meta.quantizer_mode,
            meta.quantizer_seed,
        )?;
        let optimizer = AdamState {
            m: c.tensors.strip_prefix("adam.m.").iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            v: c.tensors.strip_prefix("adam.v.").iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            step: meta.adam_step,
        };
        let ck = Self {
            config: meta.config,
            params: c.tensors.strip_prefix("model."),
            quantizer,
            normalizer: meta.normalizer,
            optimizer,
            step: meta.step,
        };
        ck.check_shapes()?;
        Ok(ck)
    }

    fn check_shapes(&self) -> Result<()> {
        let enc = self.encoder_config();
        let expected = init_weights::<T>(&enc, 0)?;
        for (name, t) in expected.iter() {
            let got = self.params.require(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Shape(format!("checkpoint `{}` is {:?}, expected {:?}", name, got.shape(), t.shape())));
            }
        }
        let n = self.quantizer.vocab_size();
        let w = self.params.require(HEAD_WEIGHT)?;
        if w.shape() != [enc.d_model, n] || self.params.require(HEAD_BIAS)?.shape() != [n] {
            return Err(Error::Shape("prediction head does not match the quantizer".into()));
        }
        if self.quantizer.input_dim() != enc.input_dim || self.normalizer.dim() != enc.input_dim {
            return Err(Error::Shape("quantizer or normalizer width differs from the encoder input".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_container(path, &self.to_container())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    /// Load and require the checkpoint to belong to `cfg`.
    pub fn load_for(path: &Path, cfg: &RunConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        ck.ensure_matches(cfg)?;
        Ok(ck)
    }

    pub fn ensure_matches(&self, cfg: &RunConfig) -> Result<()> {
        if self.fingerprint() != cfg.fingerprint() {
            return Err(Error::FingerprintMismatch {
                expected: cfg.fingerprint(),
                found: self.fingerprint(),
            });
        }
        Ok(())
    }

    /// Unnormalized log-mel of `audio` under this checkpoint's frontend.
    pub fn featurize(&self, audio: &AudioBuffer) -> Result<MelFrameSequence<T>> {
        Frontend::new(self.config.frontend_config())?.featurize(audio)
    }

    /// Normalized frames and their tokens.
    pub fn prepare(&self, audio: &AudioBuffer) -> Result<PreparedClip<T>> {
        let mf = self.normalizer.apply(&self.featurize(audio)?)?;
        Ok(PreparedClip {
            tokens: self.quantizer.tokenize_frames(mf.frames())?,
            frames: mf.into_frames(),
        })
    }
}

fn crop_rows<T: Scalar>(t: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let d = t.shape()[1];
    Tensor::new(vec![len, d], t.data()[start * d..(start + len) * d].to_vec()).expect("row range in bounds")
}

/// The training example for slot `b` of step `step`: a seeded clip choice,
/// a seeded crop to `max_frames`, then masking.
fn draw_example<T: Scalar>(
    cfg: &RunConfig,
    clips: &[PreparedClip<T>],
    stream: u64,
    step: u64,
    b: usize,
) -> Result<(usize, TrainExample<T>)> {
    let max_frames = cfg.encoder_config().max_frames();
    let seed = derive_seed(cfg.seed, &[stream, step, b as u64]);
    let mut r = rng(seed);
    let ci = r.random_range(0..clips.len());
    let clip = &clips[ci];
    let t = clip.tokens.len();
    let len = t.min(max_frames);
    let start = if t > len { r.random_range(0..=t - len) } else { 0 };
    let m = &cfg.masking;
    let plan = plan_masks(len, cfg.token_rate as f64, m.span_ms, m.prob, derive_seed(seed, &[1]));
    let frames = apply_mask(&crop_rows(&clip.frames, start, len), &plan, derive_seed(seed, &[2]), m.noise_std)?;
    Ok((
        ci,
        TrainExample {
            frames,
            tokens: clip.tokens[start..start + len].to_vec(),
            plan,
        },
    ))
}

/// Featurize, fit the normalizer, normalize and tokenize a corpus.
pub fn prepare_corpus<T: Scalar>(
    cfg: &RunConfig,
    corpus: &[AudioBuffer],
    fixed: Option<(&Normalizer, &Quantizer)>,
    observer: &mut dyn FnMut(&PretrainEvent),
) -> Result<(Normalizer, Quantizer, Vec<PreparedClip<T>>)> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let fe = Frontend::new(cfg.frontend_config())?;
    let mels = corpus.iter().map(|a| fe.featurize::<T>(a)).collect::<Result<Vec<_>>>()?;
    let (normalizer, quantizer) = match fixed {
        Some((n, q)) => (n.clone(), q.clone()),
        None => (fit_normalizer(&mels)?, run_quantizer::<T>(cfg)?),
    };
    let mut clips = Vec::with_capacity(mels.len());
    for (i, mf) in mels.iter().enumerate() {
        let mf = normalizer.apply(mf)?;
        let tokens = quantizer.tokenize_frames(mf.frames())?;
        observer(&PretrainEvent::Tokenized { clip: i });
        clips.push(PreparedClip {
            frames: mf.into_frames(),
            tokens,
        });
    }
    Ok((normalizer, quantizer, clips))
}

/// Fresh checkpoint at step 0: seeded encoder, zero head.
pub fn initial_checkpoint<T: Scalar>(cfg: &RunConfig, normalizer: Normalizer, quantizer: Quantizer) -> Result<Checkpoint<T>> {
    let enc = cfg.encoder_config();
    let mut params = init_weights::<T>(&enc, derive_seed(cfg.seed, &[STREAM_INIT]))?;
    for (k, v) in init_head::<T>(enc.d_model, quantizer.vocab_size()).iter() {
        params.insert(k.clone(), v.clone());
    }
    let mut config = cfg.clone();
    config.paths = Default::default();
    Ok(Checkpoint {
        config,
        params,
        quantizer,
        normalizer,
        optimizer: AdamState::new(),
        step: 0,
    })
}

#[derive(Default)]
pub struct PretrainOptions<'a, T: Scalar> {
    /// Directory for `checkpoint.rqnt`, periodic `checkpoints/step_*.rqnt` and `train_log.jsonl`.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<Checkpoint<T>>,
    /// Stop once this many total steps are done (before `optimizer.steps`).
    pub stop_after: Option<u64>,
    pub observer: Option<&'a mut dyn FnMut(&PretrainEvent)>,
}

pub struct PretrainOutcome<T: Scalar> {
    pub checkpoint: Checkpoint<T>,
    pub log: Vec<StepLog>,
    pub skipped: Vec<u64>,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.rqnt";
pub const LOG_FILE: &str = "train_log.jsonl";

/// Run (or resume) pretraining on in-memory audio.
pub fn pretrain<T: Scalar>(cfg: &RunConfig, corpus: &[AudioBuffer], opts: PretrainOptions<'_, T>) -> Result<PretrainOutcome<T>> {
    cfg.validate()?;
    let mut noop = |_: &PretrainEvent| {};
    let observer: &mut dyn FnMut(&PretrainEvent) = match opts.observer {
        Some(o) => o,
        None => &mut noop,
    };
    let (mut ck, clips) = match opts.resume {
        Some(ck) => {
            ck.ensure_matches(cfg)?;
            let (_, _, clips) = prepare_corpus::<T>(cfg, corpus, Some((&ck.normalizer, &ck.quantizer)), observer)?;
            (ck, clips)
        }
        None => {
            let (n, q, clips) = prepare_corpus::<T>(cfg, corpus, None, observer)?;
            (initial_checkpoint(cfg, n, q)?, clips)
        }
    };

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(LOG_FILE);
            let f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(ck.step > 0)
                .truncate(ck.step == 0)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, std::io::BufWriter::new(f)))
        }
        None => None,
    };

    let enc = cfg.encoder_config();
    let o = &cfg.optimizer;
    let n = ck.quantizer.vocab_size();
    let end = opts.stop_after.map_or(o.steps, |s| s.min(o.steps));
    let mut log = Vec::new();
    let mut skipped = Vec::new();
    while ck.step < end {
        let step = ck.step + 1;
        let mut batch = Vec::with_capacity(o.batch_size);
        for b in 0..o.batch_size {
            let (clip, ex) = draw_example(cfg, &clips, STREAM_BATCH, step, b)?;
            observer(&PretrainEvent::Masked { step, clip });
            batch.push(ex);
        }
        let lr = warmup_lr(o.lr, step, o.warmup_steps);
        match train_step(&enc, &mut ck.params, &mut ck.optimizer, &batch, lr)? {
            Some(s) => {
                let targets: Vec<u32> = batch
                    .iter()
                    .flat_map(|e| e.plan.masked_indices().into_iter().map(|i| e.tokens[i]))
                    .collect();
                let rec = StepLog {
                    step,
                    loss: s.loss,
                    lr,
                    masked_frac: s.masked_frames as f64 / s.total_frames as f64,
                    top1: s.top1,
                    utilization: utilization(&targets, n).0,
                };
                if let Some((path, w)) = &mut log_file {
                    writeln!(w, "{}", serde_json::to_string(&rec).expect("log record serializes"))
                        .map_err(|e| Error::io(path.as_path(), e))?;
                }
                log::debug!("step {} loss {:.4} top1 {:.4} lr {:.2e}", step, rec.loss, rec.top1, lr);
                observer(&PretrainEvent::Step(rec.clone()));
                log.push(rec);
            }
            None => {
                log::warn!("step {}: batch has no masked frame, skipped", step);
                observer(&PretrainEvent::Skipped { step });
                skipped.push(step);
            }
        }
        ck.step = step;
        if let Some(dir) = &opts.out_dir {
            if o.checkpoint_every > 0 && step % o.checkpoint_every == 0 && step < o.steps {
                let path = dir.join("checkpoints").join(format!("step_{:06}.rqnt", step));
                ck.save(&path)?;
                observer(&PretrainEvent::Checkpoint { step, path });
            }
        }
    }
    if let Some((path, mut w)) = log_file {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    if let Some(dir) = &opts.out_dir {
        let path = dir.join(CHECKPOINT_FILE);
        ck.save(&path)?;
        observer(&PretrainEvent::Checkpoint { step: ck.step, path });
    }
    Ok(PretrainOutcome {
        checkpoint: ck,
        log,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedEval {
    pub loss: f64,
    pub top1: f64,
    pub masked_frames: usize,
}

/// Masked loss and top-1 on held-out clips, with masks seeded by `seed`;
/// no parameter changes.
pub fn evaluate_masked<T: Scalar>(ck: &Checkpoint<T>, clips: &[PreparedClip<T>], seed: u64) -> Result<MaskedEval> {
    let enc = ck.encoder_config();
    let mut cfg = ck.config.clone();
    cfg.seed = seed;
    let (mut loss_sum, mut hits, mut count) = (0.0, 0.0, 0usize);
    for i in 0..clips.len() {
        let (_, ex) = draw_example(&cfg, &clips[i..=i], STREAM_EVAL, 0, i)?;
        let tape = Tape::new();
        let bound = ck.params.bind(&tape, false);
        if let Some(ml) = masked_loss(&tape, &enc, &bound, std::slice::from_ref(&ex))? {
            let k = ml.targets.len();
            loss_sum += ml.loss.value().item().as_f64() * k as f64;
            hits += ml.top1() * k as f64;
            count += k;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no masked frame in the evaluation clips".into()));
    }
    Ok(MaskedEval {
        loss: loss_sum / count as f64,
        top1: hits / count as f64,
        masked_frames: count,
    })
}
