//! Configuration matrix over encoder, input length and token rate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};
use std::time::Instant;

use log::info;
use rqmir::audio::annotation::{read_json, write_json};
use rqmir::config::RunConfig;
use rqmir::encoder::EncoderKind;
use rqmir::metrics::{MetricConfig, ResultsTable};
use rqmir::pretrain::{pretrain, PretrainOptions};
use rqmir::probing::{evaluate_probe, synth_probe_splits, train_probe, ProbeOptions, TaskName, TaskSpec};
use rqmir::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::commands::corpus_audio;
use crate::manifest::write_manifest;
use crate::AblateArgs;

pub const ROW_FILE: &str = "row.json";
pub const TABLE_TEXT: &str = "table.txt";
pub const TABLE_CSV: &str = "table.csv";

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    name: String,
    metrics: BTreeMap<String, f64>,
}

struct Cell {
    name: String,
    config: RunConfig,
}

fn cells(base: &RunConfig, a: &AblateArgs) -> Result<Vec<Cell>> {
    let mut out = Vec::new();
    for enc in &a.encoders {
        let kind: EncoderKind = enc.parse()?;
        for &seconds in &a.seconds {
            for &rate in &a.rates {
                let mut c = base.clone();
                c.encoder.kind = kind;
                c.input_seconds = seconds;
                c.token_rate = rate;
                c.corpus.clip_seconds = seconds as f64;
                c.probe.clip_seconds = seconds as f64;
                c.validate()?;
                out.push(Cell {
                    name: format!("{}-{}s-{}hz", enc, seconds, rate),
                    config: c,
                });
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("ablation matrix is empty".into()));
    }
    Ok(out)
}

/// Pretrain one configuration, then probe and score all five tasks.
pub fn run_cell(cfg: &RunConfig, name: &str, out: &Path) -> Result<()> {
    let start = Instant::now();
    let audio = corpus_audio(cfg)?;
    let pre_dir = out.join("pretrain");
    let ck = pretrain::<f32>(
        cfg,
        &audio,
        PretrainOptions {
            out_dir: Some(pre_dir),
            ..Default::default()
        },
    )?
    .checkpoint;
    let opts = ProbeOptions::from(&cfg.probe);
    let mut table = ResultsTable::default();
    let mut reports = Vec::new();
    for task in TaskName::ALL {
        let (train, test) = synth_probe_splits(&cfg.probe, task)?;
        let (probe, _) = train_probe(&ck, &train, &TaskSpec::new(task), &opts)?;
        reports.push(evaluate_probe(&ck, &probe, &test, &MetricConfig::default())?);
        info!("{}: {} done", name, task);
    }
    table.push(name, &reports);
    let (_, metrics) = table.rows.remove(0);
    let row = out.join(ROW_FILE);
    write_json(
        &row,
        &Row {
            name: name.to_string(),
            metrics,
        },
    )?;
    let mut artifacts = vec![row];
    for f in [rqmir::pretrain::CHECKPOINT_FILE, rqmir::pretrain::LOG_FILE] {
        artifacts.push(out.join("pretrain").join(f));
    }
    write_manifest(out, "ablate-run", Some(cfg), start, &artifacts)
}

fn child_error(name: &str, code: Option<i32>) -> Error {
    let msg = format!("ablation cell {} failed (exit {:?})", name, code);
    match code {
        Some(2) => Error::Config(msg),
        Some(3) => Error::format(name, msg),
        _ => Error::InvalidArgument(msg),
    }
}

fn spawn(cell: &Cell, dir: &Path, cfg_path: &Path) -> Result<Child> {
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    Command::new(exe)
        .arg("--config")
        .arg(cfg_path)
        .arg("ablate-run")
        .arg("--name")
        .arg(&cell.name)
        .arg("--out")
        .arg(dir)
        .spawn()
        .map_err(|e| Error::io(cfg_path, e))
}

pub fn ablate(base: &RunConfig, a: AblateArgs) -> Result<()> {
    let start = Instant::now();
    let out = a
        .out
        .clone()
        .or_else(|| base.paths.out.clone())
        .ok_or_else(|| Error::Config("no output directory given (flag or config `paths`)".into()))?;
    let cells = cells(base, &a)?;
    let mut dirs: Vec<PathBuf> = Vec::new();
    for c in &cells {
        let dir = out.join(&c.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("config.toml");
        std::fs::write(&p, c.config.to_toml_string()).map_err(|e| Error::io(&p, e))?;
        dirs.push(dir);
    }
    if a.parallel <= 1 {
        for (c, dir) in cells.iter().zip(&dirs) {
            info!("running {}", c.name);
            run_cell(&c.config, &c.name, dir)?;
        }
    } else {
        let mut queue = cells.iter().zip(&dirs);
        let mut running: Vec<(&str, Child)> = Vec::new();
        loop {
            while running.len() < a.parallel {
                let Some((c, dir)) = queue.next() else { break };
                info!("spawning {}", c.name);
                running.push((&c.name, spawn(c, dir, &dir.join("config.toml"))?));
            }
            if running.is_empty() {
                break;
            }
            let (name, mut child) = running.remove(0);
            let status = child.wait().map_err(|e| Error::io(name, e))?;
            if !status.success() {
                for (_, mut other) in running {
                    let _ = other.kill();
                }
                return Err(child_error(name, status.code()));
            }
        }
    }
    let mut table = ResultsTable::default();
    for dir in &dirs {
        let row: Row = read_json(&dir.join(ROW_FILE))?;
        table.rows.push((row.name, row.metrics));
    }
    let text = table.to_text();
    let (t, c) = (out.join(TABLE_TEXT), out.join(TABLE_CSV));
    std::fs::write(&t, &text).map_err(|e| Error::io(&t, e))?;
    std::fs::write(&c, table.to_csv()).map_err(|e| Error::io(&c, e))?;
    print!("{}", text);
    let mut artifacts = vec![t, c];
    artifacts.extend(dirs.iter().map(|d| d.join("config.toml")));
    artifacts.extend(dirs.iter().map(|d| d.join(ROW_FILE)));
    write_manifest(&out, "ablate", Some(base), start, &artifacts)
}
