//! The `lexcon` command line: a resumable pipeline over the toy task.
//!
//! Stages are `prepare` (toy corpus, constraints, vocabulary), `train` (base
//! and augmented checkpoints), `decode`, `postprocess` and `evaluate` (one
//! output per grid setting); `run` chains them and writes the results table.
//! `sweep-beam` and `gradcheck` are diagnostics. Exit codes: 0 success,
//! 2 configuration error, 3 data error, 4 constrained-decoding failure rate
//! above the threshold, 1 anything else.

pub mod commands;
pub mod config;
pub mod error;
pub mod store;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lexcon_core::experiment::{Setting, SystemKind};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "lexcon",
    version,
    about = "Lexically constrained decoding experiments on a synthetic translation task"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; omitted keys keep their defaults.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding all artifacts.
    #[arg(long, short, global = true, default_value = "lexcon-work")]
    pub workdir: PathBuf,
    /// Run seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override a configuration key, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Base,
    BaseLcd,
    Leca,
    LecaLcd,
    LecaLcdEnsemble,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Base => Setting::Base,
            SettingArg::BaseLcd => Setting::BaseLcd,
            SettingArg::Leca => Setting::Leca,
            SettingArg::LecaLcd => Setting::LecaLcd,
            SettingArg::LecaLcdEnsemble => Setting::LecaLcdEnsemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SystemArg {
    Base,
    Leca,
}

impl From<SystemArg> for SystemKind {
    fn from(s: SystemArg) -> Self {
        match s {
            SystemArg::Base => SystemKind::Base,
            SystemArg::Leca => SystemKind::Leca,
        }
    }
}

#[derive(Debug, Args)]
pub struct SettingsArgs {
    /// Grid settings to process; all five when omitted.
    #[arg(long = "setting", value_enum)]
    pub settings: Vec<SettingArg>,
}

impl SettingsArgs {
    pub fn resolve(&self) -> Vec<Setting> {
        if self.settings.is_empty() {
            Setting::ALL.to_vec()
        } else {
            self.settings.iter().map(|&s| s.into()).collect()
        }
    }
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Highest tolerated share (percent) of constrained outputs that end
    /// unfinished or miss constraint tokens; above it the exit code is 4.
    #[arg(long, default_value_t = 1.0)]
    pub max_failure_pct: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the toy corpus, sample constraints and build the vocabulary.
    Prepare,
    /// Train the base model and the augmented ensemble members.
    Train {
        /// Train only this system.
        #[arg(long, value_enum)]
        system: Option<SystemArg>,
        /// Train only this member index.
        #[arg(long, requires = "system")]
        member: Option<usize>,
    },
    /// Decode the test split for grid settings.
    Decode {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        threshold: ThresholdArgs,
    },
    /// Repair spacing and unknown-word sentinels in decoded outputs.
    Postprocess {
        #[command(flatten)]
        settings: SettingsArgs,
        /// Decoded JSONL file to repair instead of the pipeline outputs.
        #[arg(long, requires_all = ["pairs", "output"])]
        input: Option<PathBuf>,
        /// Sentence pairs (JSONL) matching `--input`.
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Where to write the repaired JSONL.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score post-processed outputs.
    Evaluate {
        #[command(flatten)]
        settings: SettingsArgs,
        /// Decoded JSONL file to score instead of the pipeline outputs.
        #[arg(long, requires = "pairs")]
        input: Option<PathBuf>,
        /// Sentence pairs (JSONL) matching `--input`.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Every stage, then the results table.
    Run {
        #[command(flatten)]
        threshold: ThresholdArgs,
    },
    /// Constrained decoding of the base and augmented models over beam sizes.
    SweepBeam {
        /// Comma-separated beam sizes; defaults to `decode.sweep_beams`.
        #[arg(long, value_delimiter = ',')]
        beams: Vec<usize>,
    },
    /// Compare analytic and finite-difference gradients on a small model.
    Gradcheck {
        /// Model width of the checked models.
        #[arg(long, default_value_t = 8)]
        d_model: usize,
        /// Training examples in the checked batch.
        #[arg(long, default_value_t = 2)]
        examples: usize,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Execute a parsed command line.
pub fn run(cli: &Cli) -> CliResult<()> {
    let mut overrides = cli.global.overrides.clone();
    if let Some(seed) = cli.global.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = config::load(cli.global.config.as_deref(), &overrides)?;
    let ctx = commands::Ctx::new(cfg, &cli.global.workdir)?;
    match &cli.command {
        Command::Prepare => ctx.prepare().map(|_| ()),
        Command::Train { system, member } => ctx.train(system.map(Into::into), *member),
        Command::Decode { settings, threshold } => ctx.decode(&settings.resolve(), threshold.max_failure_pct),
        Command::Postprocess { settings, input, pairs, output } => match (input, pairs, output) {
            (Some(i), Some(p), Some(o)) => commands::postprocess_file(i, p, o),
            _ => ctx.postprocess(&settings.resolve()),
        },
        Command::Evaluate { settings, input, pairs } => match (input, pairs) {
            (Some(i), Some(p)) => commands::evaluate_file(i, p),
            _ => ctx.evaluate(&settings.resolve()),
        },
        Command::Run { threshold } => ctx.run(threshold.max_failure_pct),
        Command::SweepBeam { beams } => ctx.sweep(beams),
        Command::Gradcheck { d_model, examples, tolerance } => ctx.gradcheck(*d_model, *examples, *tolerance),
    }
}
