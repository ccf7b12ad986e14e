//! Technical indicators over daily series.

use super::DataError;

/// Exponential moving average with `α = 2/(period+1)`, seeded with the first value.
pub fn ema(series: &[f64], period: usize) -> Result<Vec<f64>, DataError> {
    if period == 0 {
        return Err(DataError::InvalidPeriods("EMA period must be >= 1".into()));
    }
    let first = *series.first().ok_or(DataError::EmptySeries)?;
    let alpha = 2.0 / (period as f64 + 1.0);
    let mut out = Vec::with_capacity(series.len());
    let mut acc = first;
    out.push(acc);
    for &x in &series[1..] {
        acc = alpha * x + (1.0 - alpha) * acc;
        out.push(acc);
    }
    Ok(out)
}

/// Wilder's relative strength index.
///
/// The output has the same length as the input. The first `period` entries are
/// warm-up and hold `NaN`; every later entry lies in `[0, 100]`. A window with
/// neither gains nor losses reads 50.
pub fn rsi(series: &[f64], period: usize) -> Result<Vec<f64>, DataError> {
    if period == 0 {
        return Err(DataError::InvalidPeriods("RSI period must be >= 1".into()));
    }
    if series.len() < period + 1 {
        return Err(DataError::SeriesTooShort {
            needed: period + 1,
            len: series.len(),
        });
    }
    let p = period as f64;
    let mut out = vec![f64::NAN; series.len()];
    let (mut gain, mut loss) = (0.0, 0.0);
    for w in series[..=period].windows(2) {
        let change = w[1] - w[0];
        if change > 0.0 {
            gain += change;
        } else {
            loss -= change;
        }
    }
    gain /= p;
    loss /= p;
    out[period] = rsi_value(gain, loss);
    for t in period + 1..series.len() {
        let change = series[t] - series[t - 1];
        let (g, l) = if change > 0.0 { (change, 0.0) } else { (0.0, -change) };
        gain = (gain * (p - 1.0) + g) / p;
        loss = (loss * (p - 1.0) + l) / p;
        out[t] = rsi_value(gain, loss);
    }
    Ok(out)
}

fn rsi_value(avg_gain: f64, avg_loss: f64) -> f64 {
    if avg_loss == 0.0 {
        if avg_gain == 0.0 {
            50.0
        } else {
            100.0
        }
    } else {
        let value = 100.0 - 100.0 / (1.0 + avg_gain / avg_loss);
        value.clamp(0.0, 100.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Macd {
    pub line: Vec<f64>,
    pub signal: Vec<f64>,
    pub histogram: Vec<f64>,
}

pub fn macd(series: &[f64], fast: usize, slow: usize, signal: usize) -> Result<Macd, DataError> {
    if fast >= slow {
        return Err(DataError::InvalidPeriods(format!(
            "MACD fast period {fast} must be below slow period {slow}"
        )));
    }
    let fast_ema = ema(series, fast)?;
    let slow_ema = ema(series, slow)?;
    let line: Vec<f64> = fast_ema.iter().zip(&slow_ema).map(|(f, s)| f - s).collect();
    let signal = ema(&line, signal)?;
    let histogram = line.iter().zip(&signal).map(|(l, s)| l - s).collect();
    Ok(Macd {
        line,
        signal,
        histogram,
    })
}
