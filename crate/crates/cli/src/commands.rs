use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use thiserror::Error;

use rdnn_core::backtest::{overlay_csv, run_backtest, test_window, BacktestError, BacktestReport, Strategy};
use rdnn_core::env::EnvConfig;
use rdnn_core::market_data::{build_features, load_ohlcv, read_ohlcv, ColumnSchema, DataError, FeatureMatrix, PriceHistory};
use rdnn_core::policy::Checkpoint;
use rdnn_core::selection::{train_joint, write_basket_trace, MaskParameters};
use rdnn_core::training::{train, MarketSeries, TrainError, TrainReport};

use crate::config::{ConfigError, RunConfig};
use crate::{CommandKind, RunArgs};

pub const PRICES_FILE: &str = "prices.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const CHECKPOINT_FILE: &str = "policy.json";
pub const MASK_FILE: &str = "mask.json";
pub const TRAIN_REPORT_FILE: &str = "train_report.json";
pub const BACKTEST_FILE: &str = "backtest.json";
pub const BASKETS_FILE: &str = "baskets.csv";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(#[from] DataError),
    #[error("{0}")]
    Train(String),
    #[error("{0}")]
    Backtest(String),
    #[error("{0}")]
    Report(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 1 config or I/O, 2 data, 3 training, 4 backtest, 5 report.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Train(_) => 3,
            CliError::Backtest(_) => 4,
            CliError::Report(_) => 5,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Train(e.to_string())
    }
}

impl From<BacktestError> for CliError {
    fn from(e: BacktestError) -> Self {
        CliError::Backtest(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(contents).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Loads the config, applies overrides and runs one command. Returns the
/// line printed on success.
pub fn execute(kind: CommandKind, args: &RunArgs) -> Result<String, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg)?;
    match kind {
        CommandKind::Ingest => ingest(&cfg),
        CommandKind::Train => train_cmd(&cfg),
        CommandKind::Backtest => backtest_cmd(&cfg),
        CommandKind::Report => report_cmd(&cfg),
    }
}

pub fn ingest(cfg: &RunConfig) -> Result<String, CliError> {
    let mut history = load_ohlcv(&cfg.prices, &cfg.schema)?;
    if let Some(n) = cfg.pool {
        let keep: Vec<usize> = (0..n.min(history.num_assets())).collect();
        history = history.select_assets(&keep);
    }
    let features = build_features(&history, &cfg.indicators, &[])?;
    let mut prices_csv = Vec::new();
    history.write_csv(&mut prices_csv)?;
    let mut features_csv = Vec::new();
    features.write_csv(&mut features_csv)?;
    write_atomic(&cfg.output_dir.join(PRICES_FILE), &prices_csv)?;
    write_atomic(&cfg.output_dir.join(FEATURES_FILE), &features_csv)?;
    Ok(format!(
        "ingested {} assets over {} days ({} feature days)",
        history.num_assets(),
        history.num_days(),
        features.num_days()
    ))
}

fn load_artifacts(cfg: &RunConfig) -> Result<(PriceHistory, FeatureMatrix), CliError> {
    let prices = cfg.output_dir.join(PRICES_FILE);
    let file = fs::File::open(&prices).map_err(io_err(&prices))?;
    let history = read_ohlcv(file, &ColumnSchema::default())?;
    let features_path = cfg.output_dir.join(FEATURES_FILE);
    let file = fs::File::open(&features_path).map_err(io_err(&features_path))?;
    let features = FeatureMatrix::read_csv(file)?;
    Ok((history, features))
}

fn env_config(cfg: &RunConfig, num_stocks: usize) -> EnvConfig {
    EnvConfig {
        num_stocks,
        ..cfg.env.clone()
    }
}

pub fn train_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let (history, features) = load_artifacts(cfg)?;
    let series = MarketSeries::align(&features, &history, cfg.env.risk_free_rate)?.restrict_dates(
        cfg.train_from.unwrap_or(NaiveDate::MIN),
        cfg.train_to.unwrap_or(NaiveDate::MAX),
    );
    let env = env_config(cfg, series.num_stocks());
    let (checkpoint, report) = match &cfg.selection {
        None => {
            let (params, report) = train(&series, None, &cfg.policy, &cfg.train, &env, None)?;
            (Checkpoint::new(cfg.policy.clone(), params, series.num_stocks()), report)
        }
        Some(sel) => {
            let (mask, params, joint) = train_joint(&series, sel, &cfg.policy, &cfg.train, &env, &cfg.mask_search)
                .map_err(|e| CliError::Train(e.to_string()))?;
            write_atomic(&cfg.output_dir.join(MASK_FILE), mask.to_json().as_bytes())?;
            let mut report = joint.actor[0].clone();
            for r in &joint.actor[1..] {
                let offset = report.epoch.len();
                report.epoch.extend(r.epoch.iter().map(|e| e + offset));
                report.utility.extend(&r.utility);
                report.grad_norm.extend(&r.grad_norm);
                report.wall_time.extend(&r.wall_time);
            }
            (Checkpoint::new(cfg.policy.clone(), params, sel.basket_size), report)
        }
    };
    write_atomic(&cfg.output_dir.join(CHECKPOINT_FILE), checkpoint.to_json().as_bytes())?;
    write_atomic(&cfg.output_dir.join(TRAIN_REPORT_FILE), report.to_json().as_bytes())?;
    let summary = match (report.utility.first(), report.utility.last()) {
        (Some(a), Some(b)) => format!("utility {a:.6} -> {b:.6}"),
        _ => "no epochs run".to_string(),
    };
    Ok(format!(
        "trained on {} days over {} epochs, {summary}",
        series.len(),
        report.epoch.len()
    ))
}

pub fn backtest_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let (history, features) = load_artifacts(cfg)?;
    let series = MarketSeries::align(&features, &history, cfg.env.risk_free_rate)
        .map_err(|e| CliError::Backtest(e.to_string()))?;
    let from = cfg.test_from.unwrap_or(NaiveDate::MIN);
    let to = cfg.test_to.unwrap_or(NaiveDate::MAX);
    let window = test_window(&series, &history, from, to)?;
    let checkpoint = Checkpoint::from_json(&read_text(&cfg.output_dir.join(CHECKPOINT_FILE))?)
        .map_err(|e| CliError::Backtest(e.to_string()))?;
    let traded = cfg.selection.as_ref().map_or(window.num_stocks(), |s| s.basket_size);
    if checkpoint.feature_dim != traded * window.features_per_asset || checkpoint.num_stocks != traded {
        return Err(CliError::Backtest(format!(
            "checkpoint trades {} stocks from {} features, data offers {} stocks with {} features each",
            checkpoint.num_stocks, checkpoint.feature_dim, traded, window.features_per_asset
        )));
    }
    let baseline = cfg.baseline.clone().unwrap_or_else(|| history.assets[0].clone());
    let env = env_config(cfg, window.num_stocks());
    let mask;
    let strategy = match &cfg.selection {
        None => Strategy::Policy {
            params: &checkpoint.params,
            cfg: &checkpoint.config,
        },
        Some(sel) => {
            mask = MaskParameters::from_json(&read_text(&cfg.output_dir.join(MASK_FILE))?)
                .map_err(|e| CliError::Backtest(e.to_string()))?;
            Strategy::Selection {
                mask: &mask,
                params: &checkpoint.params,
                cfg: &checkpoint.config,
                selection: sel,
            }
        }
    };
    let (report, baskets) = run_backtest(&window, &history, strategy, &env, &baseline)?;
    write_atomic(&cfg.output_dir.join(BACKTEST_FILE), report.to_json().as_bytes())?;
    if let Some((baskets, scores)) = baskets {
        let mut buf = Vec::new();
        write_basket_trace(&mut buf, &window.dates, &window.assets, &baskets, &scores)
            .map_err(|e| CliError::Backtest(e.to_string()))?;
        write_atomic(&cfg.output_dir.join(BASKETS_FILE), &buf)?;
    }
    let s = &report.summary;
    Ok(format!(
        "final wealth {:.2} vs baseline {:.2} ({:+.2}), Sharpe {:.4}, max drawdown {:.2}%",
        s.final_wealth,
        s.baseline_final_wealth,
        s.outperformance,
        s.sharpe,
        100.0 * s.max_drawdown
    ))
}

fn report_labels(paths: &[PathBuf]) -> Vec<String> {
    let stems: Vec<String> = paths
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            match p.parent().and_then(|d| d.file_name()) {
                Some(dir) if stem == "backtest" => dir.to_string_lossy().into_owned(),
                _ => stem,
            }
        })
        .collect();
    let unique = stems.iter().collect::<std::collections::BTreeSet<_>>().len() == stems.len();
    if unique {
        stems
    } else {
        (1..=paths.len()).map(|i| format!("run{i}")).collect()
    }
}

pub fn report_cmd(cfg: &RunConfig) -> Result<String, CliError> {
    let inputs = if cfg.report_inputs.is_empty() {
        vec![cfg.output_dir.join(BACKTEST_FILE)]
    } else {
        cfg.report_inputs.clone()
    };
    let mut reports = Vec::new();
    for (path, label) in inputs.iter().zip(report_labels(&inputs)) {
        let r = BacktestReport::from_json(&read_text(path)?)
            .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
        reports.push((label, r));
    }
    let dir = cfg.output_dir.join(REPORT_DIR);
    if let [(_, r)] = reports.as_slice() {
        write_atomic(&dir.join("equity.csv"), r.equity_csv().as_bytes())?;
        write_atomic(&dir.join("baseline.csv"), r.baseline_csv().as_bytes())?;
        write_atomic(&dir.join("leverage.csv"), r.leverage_csv().as_bytes())?;
        write_atomic(&dir.join("turnover.csv"), r.turnover_csv().as_bytes())?;
        return Ok(format!("wrote 4 series to {}", dir.display()));
    }
    let overlay = overlay_csv(&reports).map_err(|e| CliError::Report(e.to_string()))?;
    write_atomic(&dir.join("overlay.csv"), overlay.as_bytes())?;
    Ok(format!("overlaid {} reports in {}", reports.len(), dir.join("overlay.csv").display()))
}

/// Convenience for tests and scripts: the training report of a finished run.
pub fn read_train_report(cfg: &RunConfig) -> Result<TrainReport, CliError> {
    TrainReport::from_json(&read_text(&cfg.output_dir.join(TRAIN_REPORT_FILE))?)
        .map_err(|e| CliError::Train(e.to_string()))
}
