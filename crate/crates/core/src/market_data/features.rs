//! Feature assembly: raw OHLCV plus indicators, z-scored over a trailing window.

use std::io::{Read, Write};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::indicators::{ema, macd, rsi};
use super::{DataError, PriceHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacdPeriods {
    pub fast: usize,
    pub slow: usize,
    pub signal: usize,
}

/// Which indicators to compute and how to normalize them.
///
/// RSI and MACD are optional so that small feature sets can be built; EMAs are
/// computed on closing prices, one channel per period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    pub ema_periods: Vec<usize>,
    pub rsi_period: Option<usize>,
    pub macd: Option<MacdPeriods>,
    pub normalization_window: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        Self {
            ema_periods: vec![10, 20],
            rsi_period: Some(14),
            macd: Some(MacdPeriods {
                fast: 12,
                slow: 26,
                signal: 9,
            }),
            normalization_window: 20,
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.ema_periods.iter().any(|&p| p == 0) {
            return Err(DataError::InvalidPeriods("EMA periods must be >= 1".into()));
        }
        if self.rsi_period == Some(0) {
            return Err(DataError::InvalidPeriods("RSI period must be >= 1".into()));
        }
        if let Some(m) = self.macd {
            if m.fast == 0 || m.slow == 0 || m.signal == 0 {
                return Err(DataError::InvalidPeriods("MACD periods must be >= 1".into()));
            }
            if m.fast >= m.slow {
                return Err(DataError::InvalidPeriods(format!(
                    "MACD fast period {} must be below slow period {}",
                    m.fast, m.slow
                )));
            }
        }
        if self.normalization_window == 0 {
            return Err(DataError::InvalidPeriods(
                "normalization window must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// Leading days whose indicator values are undefined.
    pub fn warmup(&self) -> usize {
        self.rsi_period.unwrap_or(0)
    }

    /// Index of the first day that survives into the feature matrix.
    pub fn first_output_day(&self) -> usize {
        self.warmup() + self.normalization_window - 1
    }

    /// Channel labels for one asset, in output order (without extra columns).
    pub fn channel_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["open", "high", "low", "close", "volume"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend(self.ema_periods.iter().map(|p| format!("ema{p}")));
        if let Some(p) = self.rsi_period {
            names.push(format!("rsi{p}"));
        }
        if self.macd.is_some() {
            names.extend(["macd", "macd_signal", "macd_hist"].map(String::from));
        }
        names
    }
}

/// A pre-computed per-asset channel aligned with the history calendar,
/// indexed `[asset][day]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtraColumn {
    pub name: String,
    pub values: Vec<Vec<f64>>,
}

/// Normalized per-day feature vectors. Each row holds one block per asset,
/// blocks ordered like `assets`, channels ordered like the block's names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub calendar: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub feature_names: Vec<String>,
    pub features_per_asset: usize,
    pub rows: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn num_days(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn asset_block(&self, day: usize, asset: usize) -> &[f64] {
        let k = self.features_per_asset;
        &self.rows[day][asset * k..(asset + 1) * k]
    }

    /// Concatenated blocks of the given assets on `day`.
    pub fn gather_assets(&self, day: usize, assets: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(assets.len() * self.features_per_asset);
        for &a in assets {
            out.extend_from_slice(self.asset_block(day, a));
        }
        out
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// Rows whose dates fall in `[from, to]`.
    pub fn slice_dates(&self, from: NaiveDate, to: NaiveDate) -> FeatureMatrix {
        let start = self.calendar.partition_point(|d| *d < from);
        let end = self.calendar.partition_point(|d| *d <= to);
        FeatureMatrix {
            calendar: self.calendar[start..end].to_vec(),
            assets: self.assets.clone(),
            feature_names: self.feature_names.clone(),
            features_per_asset: self.features_per_asset,
            rows: self.rows[start..end].to_vec(),
        }
    }

    /// CSV with a `date` column followed by `ticker:feature` columns.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.feature_names.iter().cloned());
        w.write_record(&header)?;
        for (date, row) in self.calendar.iter().zip(&self.rows) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(date.format("%Y-%m-%d").to_string());
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<FeatureMatrix, DataError> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("date") {
            return Err(DataError::MissingColumn("date".into()));
        }
        let feature_names: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut assets: Vec<String> = Vec::new();
        for name in &feature_names {
            let (ticker, _) = name.split_once(':').ok_or_else(|| DataError::Parse {
                line: 1,
                message: format!("feature column {name:?} is not ticker:feature"),
            })?;
            if assets.last().map(String::as_str) != Some(ticker) {
                if assets.iter().any(|a| a == ticker) {
                    return Err(DataError::Parse {
                        line: 1,
                        message: format!("columns of {ticker} are not contiguous"),
                    });
                }
                assets.push(ticker.to_string());
            }
        }
        if assets.is_empty() || feature_names.len() % assets.len() != 0 {
            return Err(DataError::Parse {
                line: 1,
                message: "feature columns are not evenly split across tickers".into(),
            });
        }
        let features_per_asset = feature_names.len() / assets.len();
        let mut calendar = Vec::new();
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d").map_err(|e| {
                DataError::Parse {
                    line,
                    message: format!("bad date {:?}: {e}", &record[0]),
                }
            })?;
            let row = record
                .iter()
                .skip(1)
                .map(|s| {
                    s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        DataError::Parse {
                            line,
                            message: format!("bad feature value {s:?}"),
                        }
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            calendar.push(date);
            rows.push(row);
        }
        Ok(FeatureMatrix {
            calendar,
            assets,
            feature_names,
            features_per_asset,
            rows,
        })
    }
}

/// Builds the normalized feature matrix for every asset in `history`.
///
/// Each channel is z-scored against the trailing window `t-w+1..=t` using the
/// population standard deviation; a flat window yields 0. Days before
/// [`IndicatorConfig::first_output_day`] are dropped.
pub fn build_features(
    history: &PriceHistory,
    cfg: &IndicatorConfig,
    extra: &[ExtraColumn],
) -> Result<FeatureMatrix, DataError> {
    cfg.validate()?;
    let n = history.num_days();
    let first = cfg.first_output_day();
    if n < first + 1 {
        return Err(DataError::HistoryTooShort {
            needed: first + 1,
            available: n,
        });
    }
    for col in extra {
        if col.values.len() != history.num_assets()
            || col.values.iter().any(|s| s.len() != n)
        {
            return Err(DataError::InvalidHistory(format!(
                "extra column {} does not match history shape",
                col.name
            )));
        }
        if col.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DataError::InvalidHistory(format!(
                "extra column {} has non-finite values",
                col.name
            )));
        }
    }

    let window = cfg.normalization_window;
    let per_asset: Vec<Vec<Vec<f64>>> = (0..history.num_assets())
        .into_par_iter()
        .map(|a| {
            let raw = raw_channels(history, a, cfg, extra)?;
            Ok(raw
                .iter()
                .map(|ch| normalize_trailing(ch, window, first))
                .collect())
        })
        .collect::<Result<_, DataError>>()?;

    let mut names = Vec::new();
    let mut channel_names = cfg.channel_names();
    channel_names.extend(extra.iter().map(|c| c.name.clone()));
    for ticker in &history.assets {
        names.extend(channel_names.iter().map(|c| format!("{ticker}:{c}")));
    }

    let rows = (0..n - first)
        .map(|d| {
            per_asset
                .iter()
                .flat_map(|channels| channels.iter().map(move |ch| ch[d]))
                .collect()
        })
        .collect();

    Ok(FeatureMatrix {
        calendar: history.calendar[first..].to_vec(),
        assets: history.assets.clone(),
        feature_names: names,
        features_per_asset: channel_names.len(),
        rows,
    })
}

fn raw_channels(
    history: &PriceHistory,
    asset: usize,
    cfg: &IndicatorConfig,
    extra: &[ExtraColumn],
) -> Result<Vec<Vec<f64>>, DataError> {
    let close = &history.close[asset];
    let mut channels = vec![
        history.open[asset].clone(),
        history.high[asset].clone(),
        history.low[asset].clone(),
        close.clone(),
        history.volume[asset].clone(),
    ];
    for &p in &cfg.ema_periods {
        channels.push(ema(close, p)?);
    }
    if let Some(p) = cfg.rsi_period {
        channels.push(rsi(close, p)?);
    }
    if let Some(m) = cfg.macd {
        let out = macd(close, m.fast, m.slow, m.signal)?;
        channels.push(out.line);
        channels.push(out.signal);
        channels.push(out.histogram);
    }
    channels.extend(extra.iter().map(|c| c.values[asset].clone()));
    Ok(channels)
}

/// Trailing z-scores for days `first..len`, each over `t-window+1..=t`.
fn normalize_trailing(series: &[f64], window: usize, first: usize) -> Vec<f64> {
    (first..series.len())
        .map(|t| zscore(&series[t + 1 - window..=t], series[t]))
        .collect()
}

pub(crate) fn zscore(window: &[f64], value: f64) -> f64 {
    let (lo, hi) = window
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return 0.0;
    }
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std > 16.0 * f64::EPSILON * mean.abs()) {
        return 0.0;
    }
    (value - mean) / std
}
