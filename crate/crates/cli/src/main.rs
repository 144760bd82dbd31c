//! `xattn`: synthetic data, feature extraction, training, evaluation, and
//! attention analysis for speaker height/age regression.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Failure;
use config::RunConfig;

#[derive(Parser)]
#[command(name = "xattn", version, about = "Speaker height and age regression with cross-attention LSTMs")]
struct Cli {
    /// Worker threads for extraction, training batches, and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set train.seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, Failure> {
        Ok(RunConfig::load(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus described by the [synth] section.
    SynthData(ConfigArgs),
    /// Compute and cache raw features for every manifest row.
    ExtractFeatures {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also cache 0.9x and 1.1x speed copies of training utterances.
        #[arg(long)]
        augment: bool,
    },
    /// Train and write a checkpoint, history, and run metadata.
    Train(ConfigArgs),
    /// Score a checkpoint on the test split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Defaults to model.xamp in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score a perfect oracle instead of a checkpoint.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// Rank phones by the frame attention a checkpoint puts on them.
    AnalyzeAttention {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run every step in order on a freshly generated synthetic corpus.
    Pipeline(ConfigArgs),
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("--workers {n}: {e}")))?;
    }
    match cli.command {
        Command::SynthData(c) => commands::synth_data(&c.load()?),
        Command::ExtractFeatures { cfg, augment } => commands::extract_features(&cfg.load()?, augment),
        Command::Train(c) => commands::train(&c.load()?),
        Command::Evaluate { cfg, checkpoint, oracle } => {
            commands::evaluate(&cfg.load()?, checkpoint.as_deref(), oracle).map(|_| ())
        }
        Command::AnalyzeAttention { cfg, checkpoint } => {
            commands::analyze_attention(&cfg.load()?, checkpoint.as_deref()).map(|_| ())
        }
        Command::Pipeline(c) => commands::pipeline(&c.load()?),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
