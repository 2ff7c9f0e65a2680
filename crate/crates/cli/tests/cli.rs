use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rqmir::config::RunConfig;

const TINY: &str = include_str!("../../../configs/tiny.toml");
const DESK: &str = include_str!("../../../configs/desk.toml");

fn rqmir(args: &[&str], envs: &[(&str, &Path)]) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rqmir"));
    c.args(args).env("RUST_LOG", "warn");
    for k in ["RQMIR_CORPUS", "RQMIR_OUT", "RQMIR_CHECKPOINT"] {
        c.env_remove(k);
    }
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rqmir(args, &[]);
    assert!(out.status.success(), "{:?} failed: {}", args, String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn shipped_configs_parse() {
    let desk = RunConfig::from_toml_str(DESK).unwrap();
    let mut d = RunConfig::default();
    d.paths = desk.paths.clone();
    assert_eq!(desk, d);
    let tiny = RunConfig::from_toml_str(TINY).unwrap();
    assert_eq!(RunConfig::from_toml_str(&tiny.to_toml_string()).unwrap(), tiny);
}

#[test]
fn evaluate_beat_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let (p, r) = (dir.path().join("p.json"), dir.path().join("r.json"));
    std::fs::write(&p, r#"{"beats": [1.05, 2.5], "downbeats": []}"#).unwrap();
    std::fs::write(&r, r#"{"beats": [1.0, 2.0, 3.0], "downbeats": []}"#).unwrap();
    let out = ok(&["evaluate", "beat", "--pred", s(&p), "--ref", s(&r)]);
    assert!(out.lines().any(|l| l == "beat_f1 0.4000"), "{}", out);
}

#[test]
fn exit_codes_follow_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "token_rate = 30\n").unwrap();
    assert_eq!(rqmir(&["--config", s(&bad), "inspect"], &[]).status.code(), Some(2));
    std::fs::write(&bad, "[encoder]\nwidth = 3\n").unwrap();
    assert_eq!(rqmir(&["--config", s(&bad), "inspect"], &[]).status.code(), Some(2));
    let missing = dir.path().join("nope.json");
    let out = rqmir(&["evaluate", "beat", "--pred", s(&missing), "--ref", s(&missing)], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    let t = dir.path().join("t.json");
    std::fs::write(&t, r#"{"tags": ["loud"]}"#).unwrap();
    assert_eq!(rqmir(&["evaluate", "tagging", "--pred", s(&t), "--ref", s(&t)], &[]).status.code(), Some(4));
    assert_eq!(rqmir(&["inspect"], &[]).status.code(), Some(2));
}

#[test]
fn synth_featurize_tokenize_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let corpus = dir.path().join("corpus");
    ok(&["--config", s(&cfg), "synth", "--kind", "mixed", "--clips", "2", "--seconds", "1.5", "--out", s(&corpus)]);
    assert!(corpus.join("clip_00001.wav").exists());
    assert!(corpus.join("clip_00001.beat.json").exists());
    assert!(corpus.join("clip_00001.chord.json").exists());
    let m = manifest(&corpus);
    assert_eq!(m["command"], "synth");
    assert_eq!(m["artifacts"].as_array().unwrap().len(), 6);
    assert_eq!(m["fingerprint"].as_str().unwrap().len(), 64);

    let mel = dir.path().join("mel");
    ok(&["--config", s(&cfg), "featurize", "--input", s(&corpus), "--out", s(&mel)]);
    assert!(mel.join("clip_00000.mel").exists());
    assert_eq!(manifest(&mel)["artifacts"].as_array().unwrap().len(), 2);

    let (t1, t2) = (dir.path().join("tok1"), dir.path().join("tok2"));
    ok(&["--config", s(&cfg), "tokenize", "--input", s(&corpus), "--out", s(&t1)]);
    ok(&["--config", s(&cfg), "tokenize", "--input", s(&corpus), "--out", s(&t2)]);
    for f in ["clip_00000.tok", "clip_00001.tok"] {
        let a = std::fs::read(t1.join(f)).unwrap();
        assert_eq!(a, std::fs::read(t2.join(f)).unwrap());
        let dump = rqmir::quantizer::read_tokens(&t1.join(f)).unwrap();
        assert_eq!(dump.vocab_size, 64);
        assert!(!dump.tokens.tokens.is_empty());
    }
}

#[test]
fn pretrain_is_deterministic_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["--config", s(&cfg), "pretrain", "--out", s(&a)]);
    let out = rqmir(&["--config", s(&cfg), "pretrain"], &[("RQMIR_OUT", &b)]);
    assert!(out.status.success());
    let ck = |d: &Path| std::fs::read(d.join("checkpoint.rqnt")).unwrap();
    assert_eq!(ck(&a), ck(&b));
    ok(&["--config", s(&cfg), "pretrain", "--out", s(&c), "--stop-after", "2"]);
    ok(&["--config", s(&cfg), "pretrain", "--out", s(&c), "--resume"]);
    assert_eq!(ck(&a), ck(&c));
    let m = manifest(&a);
    let names: Vec<&str> = m["artifacts"].as_array().unwrap().iter().map(|x| x["path"].as_str().unwrap()).collect();
    assert!(names.contains(&"checkpoint.rqnt") && names.contains(&"train_log.jsonl"));
    assert!(names.contains(&"checkpoints/step_000002.rqnt"));

    let info = ok(&["inspect", "--checkpoint", s(&a)]);
    let v: serde_json::Value = serde_json::from_str(&info).unwrap();
    assert_eq!(v["step"], 4);
    assert_eq!(v["quantizer"]["codebook_size"], 64);

    let other = format!("{}\n[masking]\nprob = 0.5\n", TINY);
    let other_cfg = dir.path().join("other.toml");
    std::fs::write(&other_cfg, other).unwrap();
    let out = rqmir(&["--config", s(&other_cfg), "pretrain", "--out", s(&a), "--resume"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn probe_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = dir.path().join("run");
    ok(&["--config", s(&cfg), "pretrain", "--out", s(&run)]);
    let data = dir.path().join("data");
    ok(&["--config", s(&cfg), "synth", "--kind", "triads", "--clips", "3", "--seconds", "2", "--out", s(&data)]);
    let probe_dir = dir.path().join("probe");
    let before = std::fs::read(run.join("checkpoint.rqnt")).unwrap();
    let out = rqmir(
        &["--config", s(&cfg), "probe", "chord", "--data", s(&data), "--out", s(&probe_dir)],
        &[("RQMIR_CHECKPOINT", &run)],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(run.join("checkpoint.rqnt")).unwrap(), before);
    assert!(probe_dir.join("probe.rqnt").exists());
    assert_eq!(manifest(&probe_dir)["command"], "probe");

    let ev = dir.path().join("eval");
    let text = ok(&[
        "--config", s(&cfg), "evaluate", "chord", "--probe", s(&probe_dir), "--checkpoint", s(&run), "--data", s(&data), "--out", s(&ev),
    ]);
    let acc: f64 = text.lines().find_map(|l| l.strip_prefix("chord_acc ")).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(ev.join("eval.json").exists());
    let wrong = rqmir(&["--config", s(&cfg), "evaluate", "key", "--probe", s(&probe_dir), "--checkpoint", s(&run)], &[]);
    assert_eq!(wrong.status.code(), Some(2));
}

#[test]
fn ablate_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (seq, par) = (dir.path().join("seq"), dir.path().join("par"));
    let args = ["--encoders", "bert,conformer", "--seconds", "2", "--rates", "25,50"];
    let mut a = vec!["--config", s(&cfg), "ablate", "--out", s(&seq)];
    a.extend(args);
    let text = ok(&a);
    assert_eq!(text.lines().count(), 5);
    let mut b = vec!["--config", s(&cfg), "ablate", "--parallel", "2", "--out", s(&par)];
    b.extend(args);
    ok(&b);
    let csv = std::fs::read_to_string(seq.join("table.csv")).unwrap();
    assert_eq!(csv, std::fs::read_to_string(par.join("table.csv")).unwrap());
    assert!(csv.lines().nth(1).unwrap().starts_with("bert-2s-25hz,"));
    assert!(!csv.contains(",-"));
    assert!(seq.join("conformer-2s-50hz/manifest.json").exists());
    assert_eq!(manifest(&seq)["command"], "ablate");
}
