//! Frozen-policy evaluation over a test range, with a buy-and-hold baseline
//! and plot-ready series.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{self, EnvConfig, EnvError, EpisodeOutcome, PortfolioWeights, UtilityKind};
use crate::market_data::PriceHistory;
use crate::policy::{PolicyConfig, PolicyParameters};
use crate::selection::{joint_forward, Basket, MaskParameters, SelectionConfig, SelectionError};
use crate::training::{rollout, MarketSeries, TrainError};

pub const BACKTEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BacktestError {
    #[error("calendar mismatch: {0}")]
    CalendarMismatch(String),
    #[error("empty test range")]
    EmptyRange,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
}

/// What trades during the test range. Parameters are never updated.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    Policy {
        params: &'a PolicyParameters,
        cfg: &'a PolicyConfig,
    },
    Selection {
        mask: &'a MaskParameters,
        params: &'a PolicyParameters,
        cfg: &'a PolicyConfig,
        selection: &'a SelectionConfig,
    },
    /// The same weights every day.
    Constant(&'a PortfolioWeights),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_wealth: f64,
    pub total_return: f64,
    pub sharpe: f64,
    /// Largest peak-to-trough fall of the equity curve, as a fraction of the peak.
    pub max_drawdown: f64,
    pub baseline_final_wealth: f64,
    /// Agent final wealth minus baseline final wealth.
    pub outperformance: f64,
}

/// `calendar` has one more entry than the per-period series: it starts at
/// the first decision day and ends at the last settlement day. Per-period
/// series are labelled by their decision day, `calendar[..n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub schema_version: u32,
    pub baseline_ticker: String,
    pub calendar: Vec<NaiveDate>,
    pub equity: Vec<f64>,
    pub baseline: Vec<f64>,
    pub leverage: Vec<f64>,
    pub turnover: Vec<f64>,
    pub commission: Vec<f64>,
    pub returns: Vec<f64>,
    pub summary: Summary,
}

/// Decision days in `[from, to]` whose holding period also ends by `to`, so
/// nothing after `to` is ever read.
pub fn test_window(
    series: &MarketSeries,
    history: &PriceHistory,
    from: NaiveDate,
    to: NaiveDate,
) -> Result<MarketSeries, BacktestError> {
    let mut keep = Vec::new();
    for (i, d) in series.dates.iter().enumerate() {
        if *d < from {
            continue;
        }
        let settle = settlement_date(history, *d)?;
        if settle <= to {
            keep.push(i);
        }
    }
    let (Some(&start), Some(&end)) = (keep.first(), keep.last()) else {
        return Err(BacktestError::EmptyRange);
    };
    Ok(series.slice(start, end + 1))
}

fn settlement_date(history: &PriceHistory, decision: NaiveDate) -> Result<NaiveDate, BacktestError> {
    let day = history
        .day_index(decision)
        .ok_or_else(|| BacktestError::CalendarMismatch(format!("{decision} is missing from the price history")))?;
    history
        .calendar
        .get(day + 1)
        .copied()
        .ok_or_else(|| BacktestError::CalendarMismatch(format!("no trading day after {decision}")))
}

pub fn max_drawdown(equity: &[f64]) -> f64 {
    let mut peak = f64::NEG_INFINITY;
    let mut worst: f64 = 0.0;
    for &w in equity {
        peak = peak.max(w);
        worst = worst.max((peak - w) / peak);
    }
    worst
}

/// Plays `strategy` over every day of `series` against a buy-and-hold of
/// `baseline_ticker`. Also returns the daily baskets when selection is used.
pub fn run_backtest(
    series: &MarketSeries,
    history: &PriceHistory,
    strategy: Strategy<'_>,
    env_cfg: &EnvConfig,
    baseline_ticker: &str,
) -> Result<(BacktestReport, Option<(Vec<Basket>, Vec<Vec<f64>>)>), BacktestError> {
    if series.is_empty() {
        return Err(BacktestError::EmptyRange);
    }
    if series.assets != history.assets {
        return Err(BacktestError::CalendarMismatch("series and history list different assets".into()));
    }
    let env = EnvConfig {
        num_stocks: series.num_stocks(),
        ..env_cfg.clone()
    };
    let (weights, outcome, baskets): (Vec<PortfolioWeights>, EpisodeOutcome, _) = match strategy {
        Strategy::Policy { params, cfg } => {
            let eval = PolicyConfig {
                dropout_rate: 0.0,
                ..cfg.clone()
            };
            let r = rollout(&series.episode(0, series.len(), None), params, &eval, &env, None)?;
            (r.weights, r.outcome, None)
        }
        Strategy::Selection {
            mask,
            params,
            cfg,
            selection,
        } => {
            let eval = PolicyConfig {
                dropout_rate: 0.0,
                ..cfg.clone()
            };
            let j = joint_forward(series, mask, params, &eval, &env, selection)?;
            (j.weights, j.outcome, Some((j.baskets, j.scores)))
        }
        Strategy::Constant(w) => {
            let weights = vec![w.clone(); series.len()];
            let outcome = env::run_episode(&env, &weights, &series.gross)?;
            (weights, outcome, None)
        }
    };

    let first = history
        .day_index(series.dates[0])
        .ok_or_else(|| BacktestError::CalendarMismatch(format!("{} is missing from the price history", series.dates[0])))?;
    let settle = settlement_date(history, *series.dates.last().expect("non-empty"))?;
    let last = history.day_index(settle).expect("settlement day is in the calendar");
    if last - first != series.len() {
        return Err(BacktestError::CalendarMismatch(
            "series days are not consecutive trading days".into(),
        ));
    }
    let window = history.slice_days(first, last + 1);
    let baseline = env::buy_and_hold(&env, &window, baseline_ticker)?;

    let equity = outcome.wealth.clone();
    let final_wealth = outcome.final_wealth;
    let baseline_final = *baseline.last().expect("window is non-empty");
    let summary = Summary {
        final_wealth,
        total_return: final_wealth / env.initial_wealth - 1.0,
        sharpe: env::utility(&outcome.returns, UtilityKind::SharpeRatio)?,
        max_drawdown: max_drawdown(&equity),
        baseline_final_wealth: baseline_final,
        outperformance: final_wealth - baseline_final,
    };
    let report = BacktestReport {
        schema_version: BACKTEST_SCHEMA_VERSION,
        baseline_ticker: baseline_ticker.to_string(),
        calendar: window.calendar.clone(),
        equity,
        baseline,
        leverage: weights.iter().map(env::gross_leverage).collect(),
        turnover: outcome.turnover,
        commission: outcome.commission_paid,
        returns: outcome.returns,
        summary,
    };
    Ok((report, baskets))
}

impl BacktestReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    fn periods(&self) -> &[NaiveDate] {
        &self.calendar[..self.returns.len()]
    }

    pub fn equity_csv(&self) -> String {
        series_csv(&self.calendar, &[("equity", &self.equity)])
    }

    pub fn baseline_csv(&self) -> String {
        series_csv(&self.calendar, &[("baseline", &self.baseline)])
    }

    pub fn leverage_csv(&self) -> String {
        series_csv(self.periods(), &[("leverage", &self.leverage)])
    }

    pub fn turnover_csv(&self) -> String {
        series_csv(
            self.periods(),
            &[("turnover", &self.turnover), ("commission", &self.commission)],
        )
    }
}

fn series_csv(dates: &[NaiveDate], columns: &[(&str, &[f64])]) -> String {
    let mut out = String::from("date");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, d) in dates.iter().enumerate() {
        write!(out, "{}", d.format("%Y-%m-%d")).expect("string write");
        for (_, values) in columns {
            write!(out, ",{}", values[i]).expect("string write");
        }
        out.push('\n');
    }
    out
}

/// One CSV with every report's equity, baseline and leverage side by side,
/// columns suffixed with the report's label.
pub fn overlay_csv(reports: &[(String, BacktestReport)]) -> Result<String, BacktestError> {
    let Some((_, first)) = reports.first() else {
        return Err(BacktestError::EmptyRange);
    };
    for (label, r) in reports {
        if r.calendar != first.calendar {
            return Err(BacktestError::CalendarMismatch(format!(
                "report {label} covers a different calendar"
            )));
        }
    }
    let n = first.returns.len();
    let mut names = Vec::new();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (label, r) in reports {
        names.push(format!("equity_{label}"));
        cols.push(r.equity.clone());
        names.push(format!("baseline_{label}"));
        cols.push(r.baseline.clone());
        names.push(format!("leverage_{label}"));
        // leverage has no value on the final settlement day
        cols.push(r.leverage.iter().copied().chain(std::iter::once(f64::NAN)).take(n + 1).collect());
    }
    let mut out = String::from("date");
    for name in &names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, d) in first.calendar.iter().enumerate() {
        write!(out, "{}", d.format("%Y-%m-%d")).expect("string write");
        for c in &cols {
            if c[i].is_nan() {
                out.push(',');
            } else {
                write!(out, ",{}", c[i]).expect("string write");
            }
        }
        out.push('\n');
    }
    Ok(out)
}
