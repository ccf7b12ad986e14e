//! Portfolio accounting: long-only weights, price drift, proportional
//! commissions, utilities and the buy-and-hold baseline.
//!
//! Timing convention: the weights passed to [`step`] are chosen at the close
//! of one day and held over the next period. The rebalance into them is
//! charged against the drifted weights carried in [`PortfolioState`], and the
//! period's gross returns then act on the new weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::PriceHistory;

/// Absolute tolerance for the sum-to-one constraint.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Denominator floor for the Sharpe ratio.
pub const SHARPE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("InvalidWeights: {0}")]
    InvalidWeights(String),
    #[error("NonPositiveGrossReturn: asset {index} has gross return {value}")]
    NonPositiveGrossReturn { index: usize, value: f64 },
    #[error("BankruptWealth: wealth fell to {0}")]
    BankruptWealth(f64),
    #[error("LengthMismatch: {weights} weight vectors for {steps} return periods")]
    LengthMismatch { weights: usize, steps: usize },
    #[error("dimension mismatch: expected {expected} entries, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("NonPositivePrice: {0}")]
    NonPositivePrice(f64),
    #[error("EmptyReturns")]
    EmptyReturns,
    #[error("LogOfNonPositive: 1 + R at step {index} is {value}")]
    LogOfNonPositive { index: usize, value: f64 },
    #[error("UnknownAsset: {0}")]
    UnknownAsset(String),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

/// Long-only allocation over `[bond, stock_1, ..., stock_m]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PortfolioWeights(Vec<f64>);

impl PortfolioWeights {
    pub fn new(values: Vec<f64>) -> Result<Self, EnvError> {
        if values.is_empty() {
            return Err(EnvError::InvalidWeights("empty weight vector".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(EnvError::InvalidWeights(format!("entry {i} is {v}")));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(EnvError::InvalidWeights(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    /// Everything in the bond.
    pub fn all_bond(num_stocks: usize) -> Self {
        let mut v = vec![0.0; num_stocks + 1];
        v[0] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn bond(&self) -> f64 {
        self.0[0]
    }

    pub fn stocks(&self) -> &[f64] {
        &self.0[1..]
    }

    pub fn num_stocks(&self) -> usize {
        self.0.len() - 1
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for PortfolioWeights {
    type Error = EnvError;
    fn try_from(v: Vec<f64>) -> Result<Self, EnvError> {
        Self::new(v)
    }
}

impl From<PortfolioWeights> for Vec<f64> {
    fn from(w: PortfolioWeights) -> Vec<f64> {
        w.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub initial_wealth: f64,
    /// Proportional commission δ on traded notional.
    pub commission_rate: f64,
    /// Per-day bond return r_f.
    pub risk_free_rate: f64,
    pub num_stocks: usize,
}

impl EnvConfig {
    pub fn new(num_stocks: usize) -> Self {
        Self {
            initial_wealth: 100_000.0,
            commission_rate: 0.0001,
            risk_free_rate: 0.0,
            num_stocks,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.initial_wealth > 0.0) || !self.initial_wealth.is_finite() {
            return Err(EnvError::InvalidConfig(format!(
                "initial wealth must be positive, got {}",
                self.initial_wealth
            )));
        }
        if !(0.0..1.0).contains(&self.commission_rate) {
            return Err(EnvError::InvalidConfig(format!(
                "commission rate must lie in [0, 1), got {}",
                self.commission_rate
            )));
        }
        if !(self.risk_free_rate > -1.0) || !self.risk_free_rate.is_finite() {
            return Err(EnvError::InvalidConfig(format!(
                "risk-free rate must exceed -1, got {}",
                self.risk_free_rate
            )));
        }
        if self.num_stocks == 0 {
            return Err(EnvError::InvalidConfig("need at least one stock".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub day_index: usize,
    pub wealth: f64,
    /// Post-rebalance weights currently held.
    pub weights: PortfolioWeights,
    /// Weights after the last period's drift, before the next rebalance.
    pub effective_weights: PortfolioWeights,
    pub last_return: f64,
}

impl PortfolioState {
    /// Starting position: all wealth in the bond.
    pub fn initial(cfg: &EnvConfig) -> Self {
        Self {
            day_index: 0,
            wealth: cfg.initial_wealth,
            weights: PortfolioWeights::all_bond(cfg.num_stocks),
            effective_weights: PortfolioWeights::all_bond(cfg.num_stocks),
            last_return: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UtilityKind {
    CumulativeLogReturn,
    SharpeRatio,
}

fn check_gross(gross: &[f64], expected: usize) -> Result<(), EnvError> {
    if gross.len() != expected {
        return Err(EnvError::DimensionMismatch {
            expected,
            got: gross.len(),
        });
    }
    if let Some((index, &value)) = gross.iter().enumerate().find(|(_, g)| !(**g > 0.0) || !g.is_finite()) {
        return Err(EnvError::NonPositiveGrossReturn { index, value });
    }
    Ok(())
}

/// Weights after one period of price drift: `ω_i g_i / Σ_j ω_j g_j`.
pub fn effective_weights(prev: &PortfolioWeights, gross: &[f64]) -> Result<PortfolioWeights, EnvError> {
    check_gross(gross, prev.0.len())?;
    let grown: Vec<f64> = prev.0.iter().zip(gross).map(|(w, g)| w * g).collect();
    let total: f64 = grown.iter().sum();
    Ok(PortfolioWeights(grown.into_iter().map(|v| v / total).collect()))
}

/// Fraction of wealth lost to commission when moving from `from` to `to`.
/// Only the stock legs are charged.
pub fn cost_fraction(to: &PortfolioWeights, from: &PortfolioWeights, commission_rate: f64) -> f64 {
    commission_rate * turnover(to, from)
}

/// `Σ_{i≥1} |to_i − from_i|`.
pub fn turnover(to: &PortfolioWeights, from: &PortfolioWeights) -> f64 {
    to.stocks()
        .iter()
        .zip(from.stocks())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: PortfolioState,
    pub period_return: f64,
    pub cost_fraction: f64,
}

/// Rebalances into `target`, pays commission, then applies one period of returns.
pub fn step(
    cfg: &EnvConfig,
    state: &PortfolioState,
    target: &PortfolioWeights,
    gross: &[f64],
) -> Result<StepOutcome, EnvError> {
    let m1 = state.weights.0.len();
    if target.0.len() != m1 {
        return Err(EnvError::InvalidWeights(format!(
            "target has {} entries, portfolio has {m1}",
            target.0.len()
        )));
    }
    check_gross(gross, m1)?;
    let cost = cost_fraction(target, &state.effective_weights, cfg.commission_rate);
    // G(1-c) - 1 written as e - cG with e = Σ ω_i (g_i - 1), which avoids
    // cancelling against 1 when G is close to 1
    let excess: f64 = target.0.iter().zip(gross).map(|(w, g)| w * (g - 1.0)).sum();
    let period_return = excess - cost * (1.0 + excess);
    let wealth = state.wealth * (1.0 + period_return);
    if !(wealth > 0.0) || !wealth.is_finite() {
        return Err(EnvError::BankruptWealth(wealth));
    }
    let drifted = effective_weights(target, gross)?;
    Ok(StepOutcome {
        state: PortfolioState {
            day_index: state.day_index + 1,
            wealth,
            weights: target.clone(),
            effective_weights: drifted,
            last_return: period_return,
        },
        period_return,
        cost_fraction: cost,
    })
}

/// Per-step series of one simulated episode. `wealth` includes the starting
/// value, so it is one longer than the other series.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub returns: Vec<f64>,
    pub final_wealth: f64,
    pub wealth: Vec<f64>,
    pub cost_fraction: Vec<f64>,
    pub commission_paid: Vec<f64>,
    pub turnover: Vec<f64>,
    pub leverage: Vec<f64>,
}

/// Runs a whole weight sequence from an all-bond start. `gross[t]` holds the
/// returns of the period over which `weights[t]` is held.
pub fn run_episode(
    cfg: &EnvConfig,
    weights: &[PortfolioWeights],
    gross: &[Vec<f64>],
) -> Result<EpisodeOutcome, EnvError> {
    cfg.validate()?;
    if weights.len() != gross.len() {
        return Err(EnvError::LengthMismatch {
            weights: weights.len(),
            steps: gross.len(),
        });
    }
    let mut state = PortfolioState::initial(cfg);
    let mut out = EpisodeOutcome {
        wealth: vec![state.wealth],
        ..Default::default()
    };
    for (target, g) in weights.iter().zip(gross) {
        let before = state.wealth;
        let turn = turnover(target, &state.effective_weights);
        let s = step(cfg, &state, target, g)?;
        out.returns.push(s.period_return);
        out.cost_fraction.push(s.cost_fraction);
        out.commission_paid.push(before * s.cost_fraction);
        out.turnover.push(turn);
        out.leverage.push(gross_leverage(target));
        out.wealth.push(s.state.wealth);
        state = s.state;
    }
    out.final_wealth = state.wealth;
    Ok(out)
}

/// Weights of a portfolio worth `wealth` that holds `shares` of each stock
/// at `prices`, the remainder in the bond. If the shares would cost more than
/// the wealth they are scaled down pro rata, leaving nothing in the bond.
pub fn shares_to_weights(shares: &[f64], prices: &[f64], wealth: f64) -> Result<PortfolioWeights, EnvError> {
    if shares.len() != prices.len() {
        return Err(EnvError::DimensionMismatch {
            expected: prices.len(),
            got: shares.len(),
        });
    }
    if let Some(&p) = prices.iter().find(|p| !(**p > 0.0)) {
        return Err(EnvError::NonPositivePrice(p));
    }
    if !(wealth > 0.0) {
        return Err(EnvError::BankruptWealth(wealth));
    }
    if let Some(&n) = shares.iter().find(|n| !(**n >= 0.0) || !n.is_finite()) {
        return Err(EnvError::InvalidWeights(format!("share count {n}")));
    }
    let notional: Vec<f64> = shares.iter().zip(prices).map(|(n, p)| n * p).collect();
    let invested: f64 = notional.iter().sum();
    let mut w = Vec::with_capacity(shares.len() + 1);
    if invested <= wealth {
        w.push(1.0 - invested / wealth);
        w.extend(notional.iter().map(|v| v / wealth));
    } else {
        w.push(0.0);
        w.extend(notional.iter().map(|v| v / invested));
    }
    PortfolioWeights::new(w)
}

/// Shares to trade to move asset `i` from `w_prev` to `w_now` at `price`.
pub fn shares_delta(wealth: f64, w_now: f64, w_prev: f64, price: f64) -> Result<f64, EnvError> {
    if !(price > 0.0) {
        return Err(EnvError::NonPositivePrice(price));
    }
    Ok((wealth * w_now - wealth * w_prev) / price)
}

/// Sample standard deviation; zero for fewer than two observations.
pub fn sample_std(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
}

pub fn utility(returns: &[f64], kind: UtilityKind) -> Result<f64, EnvError> {
    if returns.is_empty() {
        return Err(EnvError::EmptyReturns);
    }
    match kind {
        UtilityKind::CumulativeLogReturn => {
            let mut total = 0.0;
            for (index, r) in returns.iter().enumerate() {
                if !(1.0 + r > 0.0) {
                    return Err(EnvError::LogOfNonPositive {
                        index,
                        value: 1.0 + r,
                    });
                }
                total += r.ln_1p();
            }
            Ok(total)
        }
        UtilityKind::SharpeRatio => {
            let mean = returns.iter().sum::<f64>() / returns.len() as f64;
            Ok(mean / (sample_std(returns) + SHARPE_EPSILON))
        }
    }
}

/// `∂U/∂R_t` for each period. At zero dispersion the derivative of the
/// standard deviation is taken as 0.
pub fn utility_gradient(returns: &[f64], kind: UtilityKind) -> Result<Vec<f64>, EnvError> {
    if returns.is_empty() {
        return Err(EnvError::EmptyReturns);
    }
    match kind {
        UtilityKind::CumulativeLogReturn => returns
            .iter()
            .enumerate()
            .map(|(index, r)| {
                if 1.0 + r > 0.0 {
                    Ok(1.0 / (1.0 + r))
                } else {
                    Err(EnvError::LogOfNonPositive {
                        index,
                        value: 1.0 + r,
                    })
                }
            })
            .collect(),
        UtilityKind::SharpeRatio => {
            let n = returns.len() as f64;
            let mean = returns.iter().sum::<f64>() / n;
            let std = sample_std(returns);
            let denom = std + SHARPE_EPSILON;
            Ok(returns
                .iter()
                .map(|r| {
                    let dstd = if std > 0.0 {
                        (r - mean) / ((n - 1.0) * std)
                    } else {
                        0.0
                    };
                    1.0 / (n * denom) - mean / (denom * denom) * dstd
                })
                .collect())
        }
    }
}

/// Buy `asset` with all capital on the first day (paying one commission on the
/// full notional) and hold: `W_0 (1−δ) P_t / P_0`.
pub fn buy_and_hold(cfg: &EnvConfig, history: &PriceHistory, asset: &str) -> Result<Vec<f64>, EnvError> {
    let idx = history
        .asset_index(asset)
        .ok_or_else(|| EnvError::UnknownAsset(asset.to_string()))?;
    let close = &history.close[idx];
    let Some(&p0) = close.first() else {
        return Ok(Vec::new());
    };
    let invested = cfg.initial_wealth * (1.0 - cfg.commission_rate);
    Ok(close.iter().map(|p| invested * p / p0).collect())
}

/// Share of wealth in stocks, `1 − ω_0`.
pub fn gross_leverage(weights: &PortfolioWeights) -> f64 {
    (1.0 - weights.bond()).clamp(0.0, 1.0)
}
