//! Writes a seeded synthetic OHLCV file: one index-like ETF plus a pool of
//! stocks, with a bull market turning into a decline two thirds of the way in.
//!
//! cargo run -p rdnn-cli --example synthetic_market -- data/prices.csv [stocks] [days] [seed]

use chrono::NaiveDate;
use rdnn_cli::synthetic::{synthetic_csv, SyntheticTicker};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let out = args.get(1).map(String::as_str).unwrap_or("data/prices.csv");
    let stocks: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(30);
    let days: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(750);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(7);

    let mut tickers = vec![SyntheticTicker {
        name: "ETF".into(),
        start_price: 100.0,
        drift: 0.0004,
        drift_after: Some(-0.001),
        volatility: 0.01,
    }];
    for i in 0..stocks {
        let tilt = (i as f64 / stocks.max(1) as f64 - 0.5) * 0.001;
        tickers.push(SyntheticTicker {
            name: format!("S{i:03}"),
            start_price: 20.0 + 5.0 * i as f64,
            drift: 0.0004 + tilt,
            drift_after: Some(-0.001 + tilt),
            volatility: 0.015,
        });
    }
    let start = NaiveDate::from_ymd_opt(2015, 1, 5).expect("valid date");
    let csv = synthetic_csv(&tickers, start, days, days * 2 / 3, seed);
    if let Some(dir) = std::path::Path::new(out).parent() {
        std::fs::create_dir_all(dir).expect("create output directory");
    }
    std::fs::write(out, csv).expect("write csv");
    println!("wrote {} tickers x {days} days to {out}", tickers.len());
}
