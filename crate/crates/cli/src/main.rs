//! `rqmir` command-line driver.

mod ablate;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rqmir::error::ErrorClass;
use rqmir::probing::TaskName;

#[derive(Debug, Parser)]
#[command(name = "rqmir", version, about = "Random-projection tokenizer, masked-token pretraining and MIR probes")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth(SynthArgs),
    /// Write log-mel features of audio files.
    Featurize(FeaturizeArgs),
    /// Write token sequences of audio files.
    Tokenize(TokenizeArgs),
    /// Masked-token pretraining.
    Pretrain(PretrainArgs),
    /// Train a probe on encoder features.
    Probe(ProbeArgs),
    /// Score predictions against references.
    Evaluate(EvaluateArgs),
    /// Run a configuration matrix and emit a comparison table.
    Ablate(AblateArgs),
    /// Checkpoint and codebook statistics.
    Inspect(InspectArgs),
    /// One ablation cell (used by `ablate --parallel`).
    #[command(hide = true)]
    AblateRun(AblateRunArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// mixed, triads, beat, chord, structure, key or tagging.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub seconds: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default: `paths.corpus`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// A `.wav` file or a directory of them (default: `paths.corpus`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Normalize with this checkpoint's statistics.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Use this checkpoint's normalizer and quantizer; otherwise fit the
    /// normalizer on the input and build the quantizer from the config.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `<out>/checkpoint.rqnt`.
    #[arg(long, conflicts_with = "resume_from")]
    pub resume: bool,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume_from: Option<PathBuf>,
    /// Stop after this many total steps.
    #[arg(long)]
    pub stop_after: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    pub task: TaskName,
    /// Checkpoint file or pretraining output directory (default: `paths.checkpoint`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<stem>.wav` + `<stem>.<task>.json`; synthetic data when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `last`, `weighted` or a layer index.
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub finetune: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    pub task: TaskName,
    /// Estimate annotation file or directory.
    #[arg(long, requires = "reference", conflicts_with = "probe")]
    pub pred: Option<PathBuf>,
    /// Reference annotation file or directory.
    #[arg(long = "ref", id = "reference")]
    pub reference: Option<PathBuf>,
    /// Probe file (or probe output directory) to predict with.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labeled test directory; synthetic test clips when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Also write `eval.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_delimiter = ',', default_value = "bert,conformer")]
    pub encoders: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "5,30")]
    pub seconds: Vec<u32>,
    #[arg(long, value_delimiter = ',', default_value = "25,50,75")]
    pub rates: Vec<u32>,
    /// Run up to this many cells at once, each in its own process.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateRunArgs {
    #[arg(long)]
    pub name: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Report codebook utilization on these clips.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = commands::load_config(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::Synth(a) => commands::synth(&cfg, a),
        Command::Featurize(a) => commands::featurize(&cfg, a),
        Command::Tokenize(a) => commands::tokenize(&cfg, a),
        Command::Pretrain(a) => commands::pretrain(&cfg, a),
        Command::Probe(a) => commands::probe(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Ablate(a) => ablate::ablate(&cfg, a),
        Command::AblateRun(a) => ablate::run_cell(&cfg, &a.name, &a.out),
        Command::Inspect(a) => commands::inspect(&cfg, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(e.class()))
        }
    }
}
