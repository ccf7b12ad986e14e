//! Market data ingestion, technical indicators and normalized features.

mod features;
mod history;
pub mod indicators;

use chrono::NaiveDate;
use thiserror::Error;

pub use features::{build_features, ExtraColumn, FeatureMatrix, IndicatorConfig, MacdPeriods};
pub use history::{load_ohlcv, read_ohlcv, ColumnSchema, PriceHistory, MAX_MISSING_FRACTION};
pub use indicators::{ema, macd, rsi, Macd};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("MissingColumn: {0}")]
    MissingColumn(String),
    #[error("{}NonPositivePrice: {ticker} {field} = {value} on {date}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    NonPositivePrice {
        line: Option<u64>,
        ticker: String,
        field: String,
        value: f64,
        date: NaiveDate,
    },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("EmptyIntersectionCalendar: tickers share no common trading days")]
    EmptyIntersectionCalendar,
    #[error("HistoryTooShort: need {needed} days, have {available}")]
    HistoryTooShort { needed: usize, available: usize },
    #[error("EmptySeries")]
    EmptySeries,
    #[error("SeriesTooShort: need {needed} values, have {len}")]
    SeriesTooShort { needed: usize, len: usize },
    #[error("InvalidPeriods: {0}")]
    InvalidPeriods(String),
    #[error("invalid price history: {0}")]
    InvalidHistory(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}
