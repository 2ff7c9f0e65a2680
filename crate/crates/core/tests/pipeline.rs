use rqmir::audio::synth::{synth_corpus_clip, CorpusKind};
use rqmir::audio::TARGET_SAMPLE_RATE;
use rqmir::config::RunConfig;
use rqmir::encoder::EncoderKind;
use rqmir::metrics::{MetricConfig, CHORD_ACC};
use rqmir::pretrain::{pretrain, Checkpoint, PretrainOptions};
use rqmir::probing::{evaluate_probe, synth_probe_splits, train_probe, Probe, ProbeOptions, TaskName, TaskSpec};
use rqmir::{Checkpoint32, Checkpoint64, Scalar};

fn small(kind: EncoderKind) -> RunConfig {
    let mut c = RunConfig::default();
    c.input_seconds = 2;
    c.encoder.kind = kind;
    c.encoder.d_model = 16;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.encoder.conv_kernel = 3;
    c.encoder.max_rel_pos = 8;
    c.frontend.n_fft = 1024;
    c.frontend.n_mels = 16;
    c.quantizer.codebook_size = 64;
    c.quantizer.code_dim = 4;
    c.optimizer.lr = 1e-3;
    c.optimizer.warmup_steps = 2;
    c.optimizer.steps = 4;
    c.optimizer.batch_size = 2;
    c.optimizer.checkpoint_every = 2;
    c.probe.hidden = 16;
    c.probe.epochs = 3;
    c.probe.train_clips = 3;
    c.probe.test_clips = 2;
    c.probe.clip_seconds = 3.0;
    c
}

fn run<T: Scalar>(cfg: &RunConfig) -> (Checkpoint<T>, f64) {
    let audio: Vec<_> = (0..3)
        .map(|i| synth_corpus_clip(CorpusKind::Mixed, 3.0, TARGET_SAMPLE_RATE, 2, i).unwrap().audio)
        .collect();
    let out = pretrain::<T>(cfg, &audio, PretrainOptions::default()).unwrap();
    assert_eq!(out.log.len(), 4);
    assert!(out.log.iter().all(|s| s.loss.is_finite()));
    let ck = out.checkpoint;
    let (train, test) = synth_probe_splits(&cfg.probe, TaskName::Chord).unwrap();
    let opts = ProbeOptions::from(&cfg.probe);
    let (probe, _): (Probe<T>, _) = train_probe(&ck, &train, &TaskSpec::new(TaskName::Chord), &opts).unwrap();
    let acc = evaluate_probe(&ck, &probe, &test, &MetricConfig::default()).unwrap().metrics[CHORD_ACC];
    (ck, acc)
}

#[test]
fn pretrain_probe_evaluate_in_both_precisions() {
    for kind in [EncoderKind::Bert, EncoderKind::Conformer] {
        let cfg = small(kind);
        let (ck32, acc32): (Checkpoint32, f64) = run(&cfg);
        let (ck64, acc64): (Checkpoint64, f64) = run(&cfg);
        assert!((0.0..=1.0).contains(&acc32) && (0.0..=1.0).contains(&acc64));
        assert_eq!(ck32.fingerprint(), ck64.fingerprint());

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.rqnt");
        ck32.save(&p).unwrap();
        assert_eq!(Checkpoint32::load(&p).unwrap(), ck32);
        // loading widens to the requested precision
        let wide = Checkpoint64::load(&p).unwrap();
        assert_eq!(wide.step, ck32.step);
        assert_eq!(wide.fingerprint(), ck32.fingerprint());
    }
}

#[test]
fn checkpoint_refuses_a_different_config() {
    let cfg = small(EncoderKind::Bert);
    let (ck, _): (Checkpoint32, f64) = run(&cfg);
    let mut other = cfg.clone();
    other.masking.prob = 0.5;
    assert!(ck.ensure_matches(&cfg).is_ok());
    assert!(ck.ensure_matches(&other).is_err());
}
