//! `rdnn`: ingest market data, train a policy, backtest it and emit
//! plot-ready reports. Every command reads one run configuration file (see
//! [`config`]) and writes into its output directory.

pub mod commands;
pub mod config;
pub mod synthetic;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{execute, CliError};
pub use config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "rdnn", version, about = "Recurrent direct-RL portfolio allocation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Ingest,
    Train,
    Backtest,
    Report,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate raw OHLCV data and write aligned prices and features.
    Ingest(RunArgs),
    /// Train a policy on the training range and write a checkpoint.
    Train(RunArgs),
    /// Roll the frozen policy over the test range.
    Backtest(RunArgs),
    /// Turn one or more backtest reports into CSV series.
    Report(RunArgs),
}

impl Command {
    pub fn split(self) -> (CommandKind, RunArgs) {
        match self {
            Command::Ingest(a) => (CommandKind::Ingest, a),
            Command::Train(a) => (CommandKind::Train, a),
            Command::Backtest(a) => (CommandKind::Backtest, a),
            Command::Report(a) => (CommandKind::Report, a),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct Overrides {
    /// Root seed for every random stream.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Truncation depth of backpropagation through time.
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Keep only the first N tickers of the data file.
    #[arg(long)]
    pub pool: Option<usize>,
    /// Trade a basket of this many stocks picked by the mask network.
    #[arg(long)]
    pub basket_size: Option<usize>,
    /// Replace at most this many basket names per day.
    #[arg(long)]
    pub turnover_cap: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), ConfigError> {
        if let Some(s) = self.seed {
            cfg.reseed(s);
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(t) = self.tau {
            cfg.train.truncation_depth = t;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(p) = self.pool {
            cfg.pool = Some(p);
        }
        if self.basket_size.is_some() || self.turnover_cap.is_some() {
            let sel = cfg.selection.get_or_insert_with(|| rdnn_core::selection::SelectionConfig {
                seed: config::derive_seed(cfg.seed, 3),
                ..Default::default()
            });
            if let Some(k) = self.basket_size {
                sel.basket_size = k;
            }
            if let Some(c) = self.turnover_cap {
                sel.mode = rdnn_core::selection::BasketMode::Turnover;
                sel.turnover_cap = Some(c);
            }
        }
        cfg.validate()
    }
}
