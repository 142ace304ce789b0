mod commands;
mod manifest;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Fall prediction and damage-mitigation pipeline for a planar humanoid.
#[derive(Debug, Parser)]
#[command(name = "fallguard", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Pipeline config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ArchArg {
    Gru,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    #[value(name = "balance-A")]
    BalanceA,
    #[value(name = "gait-B")]
    GaitB,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the nominal controller under injected failures and store labelled falls.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories; overrides `datagen.n_trajectories`.
        #[arg(long)]
        n: Option<usize>,
        /// Nominal controller; overrides `datagen.variant`.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the fall predictor, or run the full ablation grid with `--ablation`.
    TrainPredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Weights output.
        #[arg(long, required_unless_present = "ablation")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "gru")]
        arch: ArchArg,
        /// Per-epoch loss CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Train every ablation row and write the comparison CSV here.
        #[arg(long)]
        ablation: Option<PathBuf>,
    },
    /// FAR, lead time and miss rate of trained weights on the validation split.
    EvalPredictor {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Train one curriculum stage of the damage-mitigation policy.
    TrainPolicy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Policy to continue from (required for stage 2).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Fall dataset supplying stage-2 starts.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Predictor weights flagging stage-2 starts.
        #[arg(long)]
        predictor: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Training-curve CSV; defaults to `<out>.curve.csv`.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Paired evaluation of policies and baselines on held-out predicted falls.
    Evaluate(EvalArgs),
    /// Policy against the damping baseline over a grid of fall directions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Evaluation on falls of a nominal controller never seen in training.
    Generalize(EvalArgs),
    /// Per-frame reward terms of stored trajectories.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Only the first N trajectories.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Collect the CSVs of a run directory into summary tables.
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dir: PathBuf,
        /// Defaults to `<dir>/report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Policy checkpoint, optionally `NAME=PATH`; repeatable.
    #[arg(long, required = true)]
    pub policy: Vec<String>,
    /// Fall dataset; `evaluate` uses its validation split, `generalize` all of it.
    #[arg(long)]
    pub data: PathBuf,
    /// Predictor weights choosing the start frame of each fall.
    #[arg(long)]
    pub predictor: PathBuf,
    /// Number of paired trials.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub csv: PathBuf,
}

/// Exit status for a pipeline error.
fn exit_code(e: &fallguard::Error) -> u8 {
    use fallguard::Error::*;
    match e {
        Config(_) => 3,
        Shape { .. } | Data(_) | Precondition(_) | Io(_) => 4,
        Diverged { .. } | GradientBlewUp(_) | Numerical(_) => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
