//! Command-line front end: `generate`, `train`, `evaluate`/`backtest` and
//! `explain`, all driven by one [`RunConfig`] file.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};

pub use commands::{
    check_compatible, cmd_evaluate, cmd_explain, cmd_generate, cmd_train, create_run_dir, parse_date, predict_test,
    prepare, split_spec, EvalRun, ExplainRun, Generated, Prepared, TrainRun, CHECKPOINT_FILE, CONFIG_FILE, DAILY_FILE,
    HISTORY_FILE, METRICS_FILE,
};
pub use config::{
    Ablation, BacktestSettings, DataSettings, ExplainSettings, ModelSettings, OutputSettings, Overrides, RunConfig,
    SplitSettings, SyntheticSettings, TrainSettings, WindowSettings,
};

use crate::data::DataError;
use crate::evaluation::EvalError;
use crate::explain::{dominant_band, ExplainError};
use crate::model::ModelError;
use crate::training::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    MissingInput(String),
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("data: {0}")]
    Data(#[from] DataError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("training: {0}")]
    Train(#[from] TrainError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("explain: {0}")]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Parser)]
#[command(name = "master", version, about = "Market-guided stock transformer")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`; for `generate`, the data directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Switches off one model stage.
    #[arg(long, global = true, value_enum)]
    pub ablate: Option<Ablation>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic lead-lag market.
    Generate,
    /// Train and save the best checkpoint.
    Train,
    /// Test-split ranking metrics and top-k backtest.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Same report as `evaluate`.
    Backtest {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Export attention maps for target `u` and source `v`.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// A test prediction date; all test dates are averaged when absent.
        #[arg(long, value_parser = parse_date)]
        date: Option<NaiveDate>,
        #[arg(long)]
        u: String,
        #[arg(long)]
        v: String,
    },
}

/// Effective config: the file (or defaults) with flag overrides applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    // `generate` reads --out as its data directory, not the run root.
    let out = match cli.command {
        Command::Generate => None,
        _ => cli.out.clone(),
    };
    cfg.apply(&Overrides {
        seed: cli.seed,
        out,
        ablate: cli.ablate,
    });
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command and returns a summary line per output.
pub fn run(cli: &Cli) -> Result<Vec<String>, CliError> {
    let cfg = effective_config(cli)?;
    let mut lines = Vec::new();
    match &cli.command {
        Command::Generate => {
            let g = cmd_generate(&cfg, cli.out.as_deref())?;
            for p in [&g.stocks, &g.index, &g.truth, &g.config] {
                lines.push(format!("wrote {}", p.display()));
            }
        }
        Command::Train => {
            let r = cmd_train(&cfg)?;
            let best = &r.outcome.history[r.outcome.best_epoch - 1];
            lines.push(format!(
                "best epoch {} of {} (valid IC {:.4}){}",
                r.outcome.best_epoch,
                r.outcome.history.len(),
                best.valid_ic,
                if r.outcome.stopped_early { ", stopped early" } else { "" }
            ));
            lines.push(format!("run directory {}", r.dir.display()));
        }
        Command::Evaluate { checkpoint } | Command::Backtest { checkpoint } => {
            let r = cmd_evaluate(&cfg, checkpoint)?;
            for (name, value, degenerate) in r.report.aggregates() {
                lines.push(format!("{name:<9} {value:.6}{}", if degenerate { " (degenerate)" } else { "" }));
            }
            lines.push(format!("run directory {}", r.dir.display()));
        }
        Command::Explain { checkpoint, date, u, v } => {
            let r = cmd_explain(&cfg, checkpoint, *date, u, v)?;
            lines.push(format!("explained {} date(s)", r.maps.len()));
            let maps: Vec<_> = r.maps.iter().map(|(_, m)| m.clone()).collect();
            if let Some(c) = dominant_band(&maps) {
                lines.push(format!("dominant band centred at j - i = {c}"));
            }
            lines.push(format!("run directory {}", r.dir.display()));
        }
    }
    Ok(lines)
}

/// Parses `args`, runs the command and maps failures to exit status 1.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            // Each layer's message already embeds its cause.
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
