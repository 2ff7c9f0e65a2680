use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rqmir::audio::synth::{synth_corpus_clip, CorpusKind, TaskAnnotation};
use rqmir::audio::{write_wav, AudioBuffer, TARGET_SAMPLE_RATE};
use rqmir::config::RunConfig;
use rqmir::dsp::{fit_normalizer, write_mel_file, Frontend};
use rqmir::metrics::{EvalReport, MetricConfig};
use rqmir::pretrain::{pretrain as run_pretrain, run_quantizer, Checkpoint, PretrainEvent, PretrainOptions, CHECKPOINT_FILE, LOG_FILE};
use rqmir::probing::{
    annotation_path, evaluate_annotations, evaluate_probe, list_wavs, load_audio, load_task_dir, read_task_annotation,
    synth_probe_splits, train_probe, write_task_annotation, Probe, ProbeOptions, TaskName, TaskSpec,
};
use rqmir::quantizer::{utilization, write_tokens, TokenDump};
use rqmir::{Error, Result};

use crate::manifest::write_manifest;
use crate::{EvaluateArgs, FeaturizeArgs, InspectArgs, PretrainArgs, ProbeArgs, SynthArgs, TokenizeArgs};

pub const PROBE_FILE: &str = "probe.rqnt";

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => {
            let mut cfg = RunConfig::default();
            cfg.apply_env(|k| std::env::var_os(k));
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn required(arg: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    arg.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {} given (flag or config `paths`)", what)))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// A file, or a directory holding `file`.
fn resolve(path: &Path, file: &str) -> PathBuf {
    if path.is_dir() {
        path.join(file)
    } else {
        path.to_path_buf()
    }
}

fn load_checkpoint(cfg: &RunConfig, arg: Option<PathBuf>) -> Result<Checkpoint<f32>> {
    let p = required(arg, &cfg.paths.checkpoint, "checkpoint")?;
    Checkpoint::load(&resolve(&p, CHECKPOINT_FILE))
}

fn wav_inputs(path: &Path) -> Result<Vec<PathBuf>> {
    let files = if path.is_dir() { list_wavs(path)? } else { vec![path.to_path_buf()] };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no .wav files in {}", path.display())));
    }
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Pretraining audio: the `paths.corpus` directory, else the configured synthetic corpus.
pub fn corpus_audio(cfg: &RunConfig) -> Result<Vec<AudioBuffer>> {
    match &cfg.paths.corpus {
        Some(dir) => wav_inputs(dir)?.iter().map(|p| load_audio(p)).collect(),
        None => (0..cfg.corpus.clips)
            .map(|i| Ok(synth_corpus_clip(cfg.corpus.kind, cfg.corpus.clip_seconds, TARGET_SAMPLE_RATE, cfg.corpus.seed, i as u64)?.audio))
            .collect(),
    }
}

pub fn synth(cfg: &RunConfig, a: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let out = required(a.out, &cfg.paths.corpus, "output directory")?;
    let kind: CorpusKind = match a.kind {
        Some(k) => k.parse()?,
        None => cfg.corpus.kind,
    };
    let clips = a.clips.unwrap_or(cfg.corpus.clips);
    let seconds = a.seconds.unwrap_or(cfg.corpus.clip_seconds);
    let seed = a.seed.unwrap_or(cfg.corpus.seed);
    create_dir(&out)?;
    let mut written = Vec::new();
    for i in 0..clips {
        let ex = synth_corpus_clip(kind, seconds, TARGET_SAMPLE_RATE, seed, i as u64)?;
        let wav = out.join(format!("clip_{:05}.wav", i));
        write_wav(&wav, &ex.audio)?;
        written.push(wav.clone());
        let anns = [
            ex.beats.map(|b| (TaskName::Beat, TaskAnnotation::Beat(b))),
            ex.chords.map(|c| (TaskName::Chord, TaskAnnotation::Chord(c))),
            ex.sections.map(|s| (TaskName::Structure, TaskAnnotation::Structure(s))),
            ex.key.map(|k| (TaskName::Key, TaskAnnotation::Key(k))),
            ex.tags.map(|t| (TaskName::Tagging, TaskAnnotation::Tagging(t))),
        ];
        for (task, ann) in anns.into_iter().flatten() {
            let p = annotation_path(&wav, task);
            write_task_annotation(&p, &ann)?;
            written.push(p);
        }
    }
    write_manifest(&out, "synth", Some(cfg), start, &written)?;
    info!("wrote {} clips to {}", clips, out.display());
    Ok(())
}

pub fn featurize(cfg: &RunConfig, a: FeaturizeArgs) -> Result<()> {
    let start = Instant::now();
    let input = required(a.input, &cfg.paths.corpus, "input")?;
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let ck = match a.checkpoint {
        Some(p) => Some(Checkpoint::<f32>::load(&resolve(&p, CHECKPOINT_FILE))?),
        None => None,
    };
    let fe = Frontend::new(ck.as_ref().map_or_else(|| cfg.frontend_config(), |c| c.config.frontend_config()))?;
    create_dir(&out)?;
    let mut written = Vec::new();
    for wav in wav_inputs(&input)? {
        let mut mf = fe.featurize::<f32>(&load_audio(&wav)?)?;
        if let Some(c) = &ck {
            mf = c.normalizer.apply(&mf)?;
        }
        let p = out.join(format!("{}.mel", stem(&wav)));
        write_mel_file(&p, &mf)?;
        written.push(p);
    }
    write_manifest(&out, "featurize", Some(cfg), start, &written)
}

pub fn tokenize(cfg: &RunConfig, a: TokenizeArgs) -> Result<()> {
    let start = Instant::now();
    let input = required(a.input, &cfg.paths.corpus, "input")?;
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let wavs = wav_inputs(&input)?;
    let ck = match a.checkpoint {
        Some(p) => Some(Checkpoint::<f32>::load(&resolve(&p, CHECKPOINT_FILE))?),
        None => None,
    };
    let run_cfg = ck.as_ref().map_or(cfg, |c| &c.config);
    let fe = Frontend::new(run_cfg.frontend_config())?;
    let mels = wavs.iter().map(|w| fe.featurize::<f32>(&load_audio(w)?)).collect::<Result<Vec<_>>>()?;
    let (normalizer, quantizer) = match &ck {
        Some(c) => (c.normalizer.clone(), c.quantizer.clone()),
        None => (fit_normalizer(&mels)?, run_quantizer::<f32>(cfg)?),
    };
    create_dir(&out)?;
    let mut written = Vec::new();
    for (wav, mf) in wavs.iter().zip(&mels) {
        let tokens = quantizer.tokenize(&normalizer.apply(mf)?)?;
        let p = out.join(format!("{}.tok", stem(wav)));
        write_tokens(
            &p,
            &TokenDump {
                tokens,
                vocab_size: quantizer.vocab_size() as u32,
                seed: quantizer.seed(),
                mode: quantizer.mode(),
            },
        )?;
        written.push(p);
    }
    write_manifest(&out, "tokenize", Some(run_cfg), start, &written)
}

/// Files under `dir` (recursively), sorted.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != crate::manifest::MANIFEST_FILE) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn pretrain(cfg: &RunConfig, a: PretrainArgs) -> Result<()> {
    let start = Instant::now();
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let resume = match (a.resume, a.resume_from) {
        (true, _) => Some(Checkpoint::load_for(&out.join(CHECKPOINT_FILE), cfg)?),
        (false, Some(p)) => Some(Checkpoint::load_for(&resolve(&p, CHECKPOINT_FILE), cfg)?),
        (false, None) => None,
    };
    let audio = corpus_audio(cfg)?;
    info!("pretraining on {} clips, fingerprint {}", audio.len(), cfg.fingerprint());
    let mut observer = |e: &PretrainEvent| match e {
        PretrainEvent::Step(s) if s.step % 100 == 0 || s.step == 1 => {
            info!("step {} loss {:.4} top1 {:.4} lr {:.2e}", s.step, s.loss, s.top1, s.lr)
        }
        PretrainEvent::Skipped { step } => info!("step {} skipped (no masked frame)", step),
        _ => {}
    };
    let outcome = run_pretrain::<f32>(
        cfg,
        &audio,
        PretrainOptions {
            out_dir: Some(out.clone()),
            resume,
            stop_after: a.stop_after,
            observer: Some(&mut observer),
        },
    )?;
    if let Some(last) = outcome.log.last() {
        println!("step {} loss {:.4} top1 {:.4}", last.step, last.loss, last.top1);
    }
    debug_assert!(out.join(LOG_FILE).exists());
    write_manifest(&out, "pretrain", Some(cfg), start, &files_under(&out)?)
}

fn probe_options(cfg: &RunConfig, layer: Option<String>, finetune: bool) -> Result<ProbeOptions> {
    let mut opts = ProbeOptions::from(&cfg.probe);
    if let Some(l) = layer {
        opts.layer = l.parse()?;
    }
    opts.finetune |= finetune;
    Ok(opts)
}

pub fn probe(cfg: &RunConfig, a: ProbeArgs) -> Result<()> {
    let start = Instant::now();
    let out = required(a.out, &cfg.paths.out, "output directory")?;
    let ck = load_checkpoint(cfg, a.checkpoint)?;
    let train = match &a.data {
        Some(d) => load_task_dir(d, a.task)?,
        None => synth_probe_splits(&cfg.probe, a.task)?.0,
    };
    let opts = probe_options(cfg, a.layer, a.finetune)?;
    let (probe, report) = train_probe(&ck, &train, &TaskSpec::new(a.task), &opts)?;
    create_dir(&out)?;
    let p = out.join(PROBE_FILE);
    probe.save(&p)?;
    let r = out.join("train_report.json");
    rqmir::audio::annotation::write_json(&r, &report)?;
    println!("{} probe: {} epochs, train loss {:.4}", a.task, report.epochs_run, report.train_loss);
    write_manifest(&out, "probe", Some(cfg), start, &[p, r])
}

/// `(estimate, reference)` pairs from two files or two directories of `<stem>.<task>.json`.
fn annotation_pairs(task: TaskName, pred: &Path, reference: &Path) -> Result<Vec<(TaskAnnotation, TaskAnnotation)>> {
    if !pred.is_dir() {
        return Ok(vec![(read_task_annotation(pred, task)?, read_task_annotation(reference, task)?)]);
    }
    let suffix = format!(".{}.json", task);
    let mut pairs = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(reference)
        .map_err(|e| Error::io(reference, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(&suffix))
        .collect();
    names.sort();
    for r in names {
        let e = pred.join(r.file_name().expect("file"));
        pairs.push((read_task_annotation(&e, task)?, read_task_annotation(&r, task)?));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!("no {} references in {}", suffix, reference.display())));
    }
    Ok(pairs)
}

pub fn print_report(r: &EvalReport) {
    for (k, v) in &r.metrics {
        println!("{} {:.4}", k, v);
    }
}

pub fn evaluate(cfg: &RunConfig, a: EvaluateArgs) -> Result<()> {
    let start = Instant::now();
    let mcfg = MetricConfig::default();
    let report = match (a.pred, a.reference, a.probe) {
        (Some(pred), Some(reference), _) => evaluate_annotations(a.task, &annotation_pairs(a.task, &pred, &reference)?, &mcfg)?,
        (None, _, Some(probe_path)) => {
            let probe = Probe::<f32>::load(&resolve(&probe_path, PROBE_FILE))?;
            if probe.spec.name != a.task {
                return Err(Error::Config(format!("probe was trained for {}, not {}", probe.spec.name, a.task)));
            }
            let ck = load_checkpoint(cfg, a.checkpoint)?;
            let test = match &a.data {
                Some(d) => load_task_dir(d, a.task)?,
                None => synth_probe_splits(&cfg.probe, a.task)?.1,
            };
            evaluate_probe(&ck, &probe, &test, &mcfg)?
        }
        _ => return Err(Error::Config("evaluate needs --pred and --ref, or --probe".into())),
    };
    print_report(&report);
    if let Some(out) = a.out {
        create_dir(&out)?;
        let p = out.join("eval.json");
        rqmir::audio::annotation::write_json(&p, &report)?;
        write_manifest(&out, "evaluate", Some(cfg), start, &[p])?;
    }
    Ok(())
}

pub fn inspect(cfg: &RunConfig, a: InspectArgs) -> Result<()> {
    let ck = load_checkpoint(cfg, a.checkpoint)?;
    let q = &ck.quantizer;
    let norms: Vec<f64> = q.codebook().data().chunks(q.code_dim()).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    let mut stats = serde_json::json!({
        "step": ck.step,
        "fingerprint": ck.fingerprint(),
        "encoder": ck.config.encoder.kind,
        "token_rate": ck.config.token_rate,
        "input_seconds": ck.config.input_seconds,
        "parameters": ck.encoder_weights().count(),
        "quantizer": {
            "codebook_size": q.vocab_size(),
            "code_dim": q.code_dim(),
            "input_dim": q.input_dim(),
            "mode": ck.config.quantizer.mode,
            "seed": q.seed(),
            "code_norm_mean": mean,
            "code_norm_min": norms.iter().cloned().fold(f64::INFINITY, f64::min),
            "code_norm_max": norms.iter().cloned().fold(0.0, f64::max),
        },
    });
    if let Some(input) = a.input {
        let mut tokens = Vec::new();
        for wav in wav_inputs(&input)? {
            tokens.extend(ck.prepare(&load_audio(&wav)?)?.tokens);
        }
        let (used, entropy) = utilization(&tokens, q.vocab_size());
        stats["utilization"] = serde_json::json!({ "frames": tokens.len(), "used_fraction": used, "entropy_bits": entropy });
    }
    println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
    Ok(())
}
