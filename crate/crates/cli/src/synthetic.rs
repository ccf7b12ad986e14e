//! Seeded synthetic OHLCV data in the long CSV format `ingest` reads.

use std::fmt::Write as _;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One simulated ticker: log-normal daily moves, drift switching at `switch_day`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTicker {
    pub name: String,
    pub start_price: f64,
    pub drift: f64,
    /// Daily drift from `switch_day` on; `None` keeps `drift`.
    pub drift_after: Option<f64>,
    pub volatility: f64,
}

/// Weekdays from `start`, `n` of them.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// CSV with columns `date,ticker,open,high,low,close,volume`.
pub fn synthetic_csv(
    tickers: &[SyntheticTicker],
    start: NaiveDate,
    days: usize,
    switch_day: usize,
    seed: u64,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calendar = business_days(start, days);
    let mut out = String::from("date,ticker,open,high,low,close,volume\n");
    let mut prices: Vec<f64> = tickers.iter().map(|t| t.start_price).collect();
    for (d, date) in calendar.iter().enumerate() {
        for (t, p) in tickers.iter().zip(prices.iter_mut()) {
            let mu = if d >= switch_day { t.drift_after.unwrap_or(t.drift) } else { t.drift };
            let open = *p;
            let close = open * (mu + t.volatility * normal(&mut rng)).exp();
            let spread = 0.002 * open * rng.gen::<f64>();
            let high = open.max(close) + spread;
            let low = (open.min(close) - spread).max(0.01);
            let volume = 1.0e5 * (1.0 + rng.gen::<f64>());
            writeln!(
                out,
                "{},{},{open},{high},{low},{close},{}",
                date.format("%Y-%m-%d"),
                t.name,
                volume.round()
            )
            .expect("string write");
            *p = close;
        }
    }
    out
}
