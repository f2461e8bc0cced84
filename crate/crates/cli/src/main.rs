use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use voxclone_core::nn::{Checkpoint, StubSpeakerEncoder};
use voxclone_core::training::TrainConfig;

mod preprocess;
mod synth;
mod train;

/// Few-shot multi-speaker voice cloning.
#[derive(Parser, Debug)]
#[command(name = "voxclone", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, resample, normalize and cache a raw corpus.
    Preprocess(PreprocessArgs),
    /// Train a base model from scratch (or resume a run).
    Pretrain(PretrainArgs),
    /// Adapt a pre-trained model to new speakers.
    Finetune(FinetuneArgs),
    /// Run a file of synthesis requests.
    Synthesize(SynthesizeArgs),
    /// Print a checkpoint's header and training state.
    InspectCheckpoint(InspectArgs),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Root seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for file processing and synthesis.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Enhance {
    None,
    Identity,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw manifest (JSON lines).
    manifest: PathBuf,
    /// Output directory for audio, manifest and vocabulary.
    #[arg(long)]
    out: PathBuf,
    /// Spectrogram cache directory (default: `<out>/cache`).
    #[arg(long, env = "VOXCLONE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    min_seconds: f64,
    #[arg(long, default_value_t = 15.0)]
    max_seconds: f64,
    /// Succeed even when clips fall outside the duration band.
    #[arg(long)]
    allow_drops: bool,
    #[arg(long, value_enum, default_value_t = Enhance::None)]
    enhance: Enhance,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    /// Training config (JSON); defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory: checkpoints/ and train_log.jsonl go here.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: u64,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    /// Pre-trained checkpoint.
    #[arg(long)]
    pretrained: PathBuf,
    /// Manifest the base model was trained on.
    #[arg(long)]
    pretrain_manifest: PathBuf,
    /// Manifest of the new speakers.
    #[arg(long)]
    fewshot_manifest: PathBuf,
    /// Prefix added to few-shot speaker ids.
    #[arg(long)]
    speaker_prefix: Option<String>,
    /// Replacement training config; its model section must match the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One JSON request per line.
    #[arg(long)]
    requests: PathBuf,
    /// Manifest to draw reference recordings from.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Config the checkpoint is expected to match.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct InspectArgs {
    checkpoint: PathBuf,
}

/// Failure with its exit status: 2 for usage and configuration problems,
/// 3 for anything that went wrong while running.
#[derive(Debug)]
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<voxclone_core::Error> for Failure {
    fn from(e: voxclone_core::Error) -> Self {
        use voxclone_core::Error as E;
        match e {
            E::Config(_)
            | E::InvalidArgument(_)
            | E::ManifestParse { .. }
            | E::UnknownLanguage(_)
            | E::UnknownSpeaker { .. }
            | E::SpeakerCollision(_)
            | E::EmptyCorpus => Failure::Usage(e.into()),
            _ => Failure::Runtime(e.into()),
        }
    }
}

pub type CmdResult = Result<Outcome, Failure>;

/// What a command prints on success.
pub struct Outcome {
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
    /// Runtime errors that did not stop the command but make it fail.
    pub failed: bool,
}

pub fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

pub fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Parses a training config, reporting the offending field path.
pub fn load_config(path: &Path) -> Result<TrainConfig, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let cfg: TrainConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| usage(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(|e| runtime(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn speaker_encoder(dim: usize) -> StubSpeakerEncoder {
    StubSpeakerEncoder::new(dim, StubSpeakerEncoder::DEFAULT_SEED)
}

fn inspect(args: &InspectArgs) -> CmdResult {
    let ck = load_checkpoint(&args.checkpoint)?;
    let n_params: usize = ck
        .arrays
        .iter()
        .filter(|(n, _)| !n.starts_with("opt."))
        .map(|(_, a)| a.len())
        .sum();
    let summary = serde_json::json!({
        "version": ck.header.version,
        "config_hash": ck.header.config_hash,
        "parameters": n_params,
        "arrays": ck.arrays.len(),
        "config": ck.header.config,
        "metadata": ck.header.metadata,
    });
    Ok(Outcome {
        summary: serde_json::to_string_pretty(&summary).map_err(runtime)?,
        artifacts: vec![],
        failed: false,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Preprocess(a) => preprocess::run(a),
        Command::Pretrain(a) => train::pretrain(a),
        Command::Finetune(a) => train::finetune(a),
        Command::Synthesize(a) => synth::run(a),
        Command::InspectCheckpoint(a) => inspect(a),
    };
    match result {
        Ok(out) => {
            println!("{}", out.summary);
            for a in &out.artifacts {
                println!("  {}", a.display());
            }
            if out.failed {
                ExitCode::from(3)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(f) => {
            let (Failure::Usage(e) | Failure::Runtime(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}
