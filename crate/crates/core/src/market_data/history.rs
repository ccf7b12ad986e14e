//! Daily OHLCV histories and CSV ingestion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DataError;

/// Fraction of calendar days an asset may be missing before it is dropped.
pub const MAX_MISSING_FRACTION: f64 = 0.05;

/// Aligned per-asset daily bars. Series are indexed `[asset][day]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceHistory {
    pub calendar: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub open: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
    pub low: Vec<Vec<f64>>,
    pub close: Vec<Vec<f64>>,
    pub volume: Vec<Vec<f64>>,
}

impl PriceHistory {
    /// Builds a history and checks every structural invariant.
    pub fn new(
        calendar: Vec<NaiveDate>,
        assets: Vec<String>,
        open: Vec<Vec<f64>>,
        high: Vec<Vec<f64>>,
        low: Vec<Vec<f64>>,
        close: Vec<Vec<f64>>,
        volume: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let h = Self {
            calendar,
            assets,
            open,
            high,
            low,
            close,
            volume,
        };
        h.validate()?;
        Ok(h)
    }

    /// History whose open/high/low all equal the close. Handy for synthetic markets.
    pub fn from_closes(
        calendar: Vec<NaiveDate>,
        assets: Vec<String>,
        close: Vec<Vec<f64>>,
        volume: Vec<Vec<f64>>,
    ) -> Result<Self, DataError> {
        Self::new(
            calendar,
            assets,
            close.clone(),
            close.clone(),
            close.clone(),
            close,
            volume,
        )
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let n = self.calendar.len();
        let m = self.assets.len();
        if m == 0 {
            return Err(DataError::InvalidHistory("no assets".into()));
        }
        for (name, series) in [
            ("open", &self.open),
            ("high", &self.high),
            ("low", &self.low),
            ("close", &self.close),
            ("volume", &self.volume),
        ] {
            if series.len() != m {
                return Err(DataError::InvalidHistory(format!(
                    "{name} has {} assets, expected {m}",
                    series.len()
                )));
            }
            for (a, s) in series.iter().enumerate() {
                if s.len() != n {
                    return Err(DataError::InvalidHistory(format!(
                        "{name} series of {} has {} days, calendar has {n}",
                        self.assets[a],
                        s.len()
                    )));
                }
                for (d, &v) in s.iter().enumerate() {
                    let bad = if name == "volume" {
                        !(v >= 0.0) || !v.is_finite()
                    } else {
                        !(v > 0.0) || !v.is_finite()
                    };
                    if bad {
                        return Err(DataError::NonPositivePrice {
                            line: None,
                            ticker: self.assets[a].clone(),
                            field: name.to_string(),
                            value: v,
                            date: self.calendar[d],
                        });
                    }
                }
            }
        }
        if self.calendar.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DataError::InvalidHistory(
                "calendar must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn num_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn num_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn asset_index(&self, ticker: &str) -> Option<usize> {
        self.assets.iter().position(|a| a == ticker)
    }

    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.calendar.binary_search(&date).ok()
    }

    /// Sub-history over the day range `[start, end)`.
    pub fn slice_days(&self, start: usize, end: usize) -> PriceHistory {
        let cut = |s: &Vec<Vec<f64>>| s.iter().map(|v| v[start..end].to_vec()).collect();
        PriceHistory {
            calendar: self.calendar[start..end].to_vec(),
            assets: self.assets.clone(),
            open: cut(&self.open),
            high: cut(&self.high),
            low: cut(&self.low),
            close: cut(&self.close),
            volume: cut(&self.volume),
        }
    }

    /// Sub-history restricted to the given asset indices, in that order.
    pub fn select_assets(&self, idx: &[usize]) -> PriceHistory {
        let pick = |s: &Vec<Vec<f64>>| idx.iter().map(|&i| s[i].clone()).collect();
        PriceHistory {
            calendar: self.calendar.clone(),
            assets: idx.iter().map(|&i| self.assets[i].clone()).collect(),
            open: pick(&self.open),
            high: pick(&self.high),
            low: pick(&self.low),
            close: pick(&self.close),
            volume: pick(&self.volume),
        }
    }

    /// Gross return rows `[1 + r_f, P_1,d+1/P_1,d, ..., P_m,d+1/P_m,d]` for the
    /// holding period that starts at the close of day `d`.
    pub fn gross_returns_after(&self, day: usize, risk_free_rate: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.num_assets() + 1);
        g.push(1.0 + risk_free_rate);
        for c in &self.close {
            g.push(c[day + 1] / c[day]);
        }
        g
    }

    /// Closing prices of every asset on `day`.
    pub fn closes_on(&self, day: usize) -> Vec<f64> {
        self.close.iter().map(|c| c[day]).collect()
    }

    /// Writes the canonical `date,ticker,open,high,low,close,volume` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["date", "ticker", "open", "high", "low", "close", "volume"])?;
        for (d, date) in self.calendar.iter().enumerate() {
            for (a, ticker) in self.assets.iter().enumerate() {
                w.write_record([
                    date.format("%Y-%m-%d").to_string(),
                    ticker.clone(),
                    self.open[a][d].to_string(),
                    self.high[a][d].to_string(),
                    self.low[a][d].to_string(),
                    self.close[a][d].to_string(),
                    self.volume[a][d].to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| DataError::Io {
            path: "<writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Column names used to locate each field in the input CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub date: String,
    pub ticker: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            ticker: "ticker".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Bar {
    open: f64,
    high: f64,
    low: f64,
    close: f64,
    volume: f64,
}

/// Reads a long-format OHLCV file and aligns every ticker onto a shared calendar.
///
/// The calendar is the span where all tickers have data (latest first day to
/// earliest last day), containing every date any ticker reports inside it.
/// Tickers missing more than 5% of those days are dropped and the calendar is
/// recomputed; remaining gaps repeat the previous close with zero volume.
/// Tickers are returned in lexicographic order.
pub fn load_ohlcv(path: &Path, schema: &ColumnSchema) -> Result<PriceHistory, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_ohlcv(file, schema)
}

/// Reader-based variant of [`load_ohlcv`].
pub fn read_ohlcv<R: std::io::Read>(
    reader: R,
    schema: &ColumnSchema,
) -> Result<PriceHistory, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let i_date = col(&schema.date)?;
    let i_ticker = col(&schema.ticker)?;
    let i_open = col(&schema.open)?;
    let i_high = col(&schema.high)?;
    let i_low = col(&schema.low)?;
    let i_close = col(&schema.close)?;
    let i_volume = col(&schema.volume)?;

    let mut per_ticker: BTreeMap<String, BTreeMap<NaiveDate, Bar>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("");
        let date = NaiveDate::parse_from_str(field(i_date), "%Y-%m-%d").map_err(|e| {
            DataError::Parse {
                line,
                message: format!("bad date {:?}: {e}", field(i_date)),
            }
        })?;
        let ticker = field(i_ticker).to_string();
        if ticker.is_empty() {
            return Err(DataError::Parse {
                line,
                message: "empty ticker".into(),
            });
        }
        let num = |i: usize, name: &str| -> Result<f64, DataError> {
            field(i).parse::<f64>().map_err(|_| DataError::Parse {
                line,
                message: format!("bad {name} value {:?}", field(i)),
            })
        };
        let bar = Bar {
            open: num(i_open, "open")?,
            high: num(i_high, "high")?,
            low: num(i_low, "low")?,
            close: num(i_close, "close")?,
            volume: num(i_volume, "volume")?,
        };
        for (name, v) in [
            ("open", bar.open),
            ("high", bar.high),
            ("low", bar.low),
            ("close", bar.close),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DataError::NonPositivePrice {
                    line: Some(line),
                    ticker,
                    field: name.into(),
                    value: v,
                    date,
                });
            }
        }
        if !(bar.volume >= 0.0) || !bar.volume.is_finite() {
            return Err(DataError::Parse {
                line,
                message: format!("negative or non-finite volume {}", bar.volume),
            });
        }
        if per_ticker
            .entry(ticker.clone())
            .or_default()
            .insert(date, bar)
            .is_some()
        {
            return Err(DataError::Parse {
                line,
                message: format!("duplicate row for {ticker} on {date}"),
            });
        }
    }

    align(per_ticker)
}

fn align(mut per_ticker: BTreeMap<String, BTreeMap<NaiveDate, Bar>>) -> Result<PriceHistory, DataError> {
    let calendar = loop {
        if per_ticker.is_empty() {
            return Err(DataError::EmptyIntersectionCalendar);
        }
        let start = per_ticker
            .values()
            .map(|s| *s.keys().next().expect("non-empty"))
            .max()
            .expect("non-empty");
        let end = per_ticker
            .values()
            .map(|s| *s.keys().next_back().expect("non-empty"))
            .min()
            .expect("non-empty");
        if start > end {
            return Err(DataError::EmptyIntersectionCalendar);
        }
        let calendar: Vec<NaiveDate> = per_ticker
            .values()
            .flat_map(|s| s.range(start..=end).map(|(d, _)| *d))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let allowed = MAX_MISSING_FRACTION * calendar.len() as f64;
        let before = per_ticker.len();
        per_ticker.retain(|_, s| {
            let present = s.range(start..=end).count();
            ((calendar.len() - present) as f64) <= allowed
        });
        if per_ticker.len() == before {
            break calendar;
        }
    };

    let n = calendar.len();
    let m = per_ticker.len();
    let mut assets = Vec::with_capacity(m);
    let (mut open, mut high, mut low, mut close, mut volume) = (
        Vec::with_capacity(m),
        Vec::with_capacity(m),
        Vec::with_capacity(m),
        Vec::with_capacity(m),
        Vec::with_capacity(m),
    );
    for (ticker, series) in &per_ticker {
        let (mut o, mut h, mut l, mut c, mut v) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for date in &calendar {
            match series.get(date) {
                Some(bar) => {
                    o.push(bar.open);
                    h.push(bar.high);
                    l.push(bar.low);
                    c.push(bar.close);
                    v.push(bar.volume);
                }
                None => {
                    // The ticker's first day precedes the calendar start, so a
                    // prior bar always exists.
                    let (_, prev) = series
                        .range(..*date)
                        .next_back()
                        .expect("forward-fill source exists");
                    o.push(prev.close);
                    h.push(prev.close);
                    l.push(prev.close);
                    c.push(prev.close);
                    v.push(0.0);
                }
            }
        }
        assets.push(ticker.clone());
        open.push(o);
        high.push(h);
        low.push(l);
        close.push(c);
        volume.push(v);
    }
    PriceHistory::new(calendar, assets, open, high, low, close, volume)
}
