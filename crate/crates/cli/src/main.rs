use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod corpus;
mod error;

use config::RunConfig;
use error::Failure;

#[derive(Debug, Parser)]
#[command(name = "zvq", version, about = "Speech auto-encoders with IN and sliced-VQ bottlenecks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// INI file with [run], [features], [model], [train], [eval] and [synth] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides [run] seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory of the command
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for per-utterance stages
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MFCC + deltas for every manifest entry, normalized with corpus CMVN
    ExtractFeatures {
        /// Tab-separated `utterance_id  wav_path  speaker [role]` lines
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Trains a model on a feature directory
    Train {
        /// Directory written by extract-features
        #[arg(long)]
        features: PathBuf,
        /// Continue from this checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Writes content codes (SVQ-WAE) or latent features (IN-WAE) per utterance
    Encode {
        /// Model checkpoint (.zvqm)
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Auto)]
        format: Format,
    },
    /// Re-synthesizes one utterance's features as another speaker
    Convert {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        utterance: String,
        #[arg(long)]
        target_speaker: String,
        /// Speaker map; defaults to the one next to the checkpoint
        #[arg(long)]
        speakers: Option<PathBuf>,
    },
    /// ABX error or bit-rate of a representation directory
    Eval {
        #[arg(value_enum)]
        kind: EvalKind,
        /// Directory of .zvqf files or of .codes files with encode.json
        #[arg(long)]
        inputs: PathBuf,
        /// Item file, required for abx
        #[arg(long)]
        items: Option<PathBuf>,
    },
    /// Writes a synthetic two-speaker corpus with manifest and item file
    MakeSynthCorpus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Auto,
    Codes,
    Features,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Abx,
    Bitrate,
}

/// Settings every command receives.
pub struct Context {
    pub config: RunConfig,
    pub jobs: usize,
    out: Option<PathBuf>,
}

impl Context {
    pub fn out(&self) -> Result<&Path, Failure> {
        self.out.as_deref().ok_or_else(|| Failure::Usage("--out is required for this command".into()))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = RunConfig::resolve(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    config.validate()?;
    log::info!("resolved configuration:\n{}", config.to_ini());
    let ctx = Context {
        config,
        jobs: cli.global.jobs.max(1),
        out: cli.global.out,
    };
    match cli.command {
        Command::ExtractFeatures { manifest } => commands::extract::run(&ctx, &manifest),
        Command::Train { features, resume } => commands::train::run(&ctx, &features, resume.as_deref()),
        Command::Encode {
            checkpoint,
            features,
            format,
        } => commands::encode::run(&ctx, &checkpoint, &features, format),
        Command::Convert {
            checkpoint,
            features,
            utterance,
            target_speaker,
            speakers,
        } => commands::convert::run(&ctx, &checkpoint, &features, &utterance, &target_speaker, speakers.as_deref()),
        Command::Eval { kind, inputs, items } => commands::eval::run(&ctx, kind, &inputs, items.as_deref()),
        Command::MakeSynthCorpus => commands::synth::run(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.global.log_level)
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
