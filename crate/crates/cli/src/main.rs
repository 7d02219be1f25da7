//! `drivefix`: synthesize, corrupt, train, restore and evaluate multi-camera
//! driving sequences.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use drivefix_core::presets::Preset;
use drivefix_core::restorer::ColdStart;
use drivefix_core::synthworld::RigPreset;
use drivefix_core::Error;

#[derive(Debug, Parser)]
#[command(
    name = "drivefix",
    version,
    about = "Multi-camera driving scene restoration",
    after_help = "Exit codes: 0 ok, 2 usage, 3 config, 4 dim_mismatch, 5 non_finite, 6 missing_input, 7 schema, 8 io.\n\
                  DRIVEFIX_THREADS caps the worker thread count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic multi-camera corpus.
    Synth(SynthArgs),
    /// Write degraded renders next to the ground truth of every scene.
    Corrupt(CorruptArgs),
    /// Build the training triplet index of a corrupted corpus.
    Build(BuildArgs),
    /// Stage-1 training of the denoiser.
    Train(TrainArgs),
    /// Stage-2 fine-tuning with the alignment losses, optionally sweeping.
    Finetune(FinetuneArgs),
    /// Restore degraded scenes autoregressively and emit pseudo ground truth.
    Restore(RestoreArgs),
    /// Score restored scenes against ground truth.
    Eval(EvalArgs),
    /// Train and score the ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Merge result bundles into one report directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PresetArg {
    Tiny,
    Desk,
    Full,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Tiny => Preset::Tiny,
            PresetArg::Desk => Preset::Desk,
            PresetArg::Full => Preset::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RigArg {
    Frontal3,
    Surround6,
}

impl From<RigArg> for RigPreset {
    fn from(r: RigArg) -> Self {
        match r {
            RigArg::Frontal3 => RigPreset::Frontal3,
            RigArg::Surround6 => RigPreset::Surround6,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColdStartArg {
    Degraded,
    Replicate,
}

impl From<ColdStartArg> for ColdStart {
    fn from(c: ColdStartArg) -> Self {
        match c {
            ColdStartArg::Degraded => ColdStart::DegradedAsHistory,
            ColdStartArg::Replicate => ColdStart::ReplicateFirst,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus seed; scene i uses a stream derived from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults for every setting not given elsewhere.
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    /// JSON corpus config layered over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Index of the first scene.
    #[arg(long)]
    pub first_scene: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub timesteps: Option<usize>,
    #[arg(long, value_enum)]
    pub rig: Option<RigArg>,
}

#[derive(Debug, Args)]
pub struct CorruptArgs {
    /// Corpus directory with ground-truth scenes.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output corpus; defaults to the input directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON corruption spec layered over the default spec.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Corrupted corpus directory.
    #[arg(long)]
    pub data: PathBuf,
    /// History length h.
    #[arg(long, default_value_t = 2)]
    pub history: usize,
    /// Index path; defaults to `<data>/triplets.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corrupted corpus with a triplet index.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON object with optional `model` and `train` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: PresetArg,
    /// Stage-1 steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from a stage-1 checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Stage-1 checkpoint directory.
    #[arg(long)]
    pub from: PathBuf,
    /// Corrupted corpus with a triplet index.
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `finetune/` next to `--from`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated stage-2 step marks to checkpoint (and evaluate).
    #[arg(long, value_delimiter = ',')]
    pub sweep: Vec<u64>,
    /// JSON object layered over the checkpoint's training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stage-2 steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Weight of the angular alignment term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the scale alignment term.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Corrupted corpus scored at every sweep mark.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Euler steps used when scoring sweep marks.
    #[arg(long, default_value_t = 8)]
    pub eval_steps: usize,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// A degraded scene, a scene with a `degraded/` subdirectory, or a
    /// corpus of such scenes.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Euler steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// History length; must match the model.
    #[arg(long)]
    pub history: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Timesteps restored per forward pass.
    #[arg(long)]
    pub chunk: Option<usize>,
    #[arg(long, value_enum)]
    pub cold_start: Option<ColdStartArg>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Restored scene or corpus.
    #[arg(long)]
    pub restored: PathBuf,
    /// Ground-truth scene or corpus.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Label of the restored rows.
    #[arg(long, default_value = "restored")]
    pub label: String,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// JSON object layered over the small ablation preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directories holding a `results.json` bundle.
    #[arg(long, required = true, num_args = 1..)]
    pub from: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        "config" => 3,
        "dim_mismatch" => 4,
        "non_finite" => 5,
        "missing_input" => 6,
        "schema" => 7,
        _ => 8,
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("DRIVEFIX_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("DRIVEFIX_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let run = || -> Result<(), Error> {
        init_threads()?;
        match cli.command {
            Command::Synth(a) => commands::synth(a),
            Command::Corrupt(a) => commands::corrupt(a),
            Command::Build(a) => commands::build(a),
            Command::Train(a) => commands::train(a),
            Command::Finetune(a) => commands::finetune(a),
            Command::Restore(a) => commands::restore(a),
            Command::Eval(a) => commands::eval(a),
            Command::Ablate(a) => commands::ablate(a),
            Command::Report(a) => commands::report(a),
        }
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
