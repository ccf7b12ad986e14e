//! Task-aware backpropagation through time and the training loop.
//!
//! The utility is differentiated through the portfolio accounting exactly
//! (drift, commissions and, for the share head, wealth), giving a direct
//! utility-to-action adjoint for every day. Only the network's own
//! action-feedback recurrence is unrolled to a finite depth τ.

mod bptt;
mod finite_diff;
mod rollout;
mod trainer;

#[cfg(test)]
pub(crate) mod fixtures;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, UtilityKind};
use crate::market_data::{FeatureMatrix, PriceHistory};
use crate::policy::{HeadMode, PolicyConfig, PolicyError, PolicyParameters};

pub use bptt::{bptt_gradient, BpttOutput};
pub use finite_diff::{episode_utility, finite_diff_gradient};
pub use rollout::{rollout, Rollout};
pub use trainer::{train, OptimizerState, TrainReport, TRAIN_REPORT_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("NonFiniteGradient")]
    NonFiniteGradient,
    #[error("InsufficientData: {0}")]
    InsufficientData(String),
    #[error("calendar mismatch: {0}")]
    CalendarMismatch(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Plain gradient ascent.
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Episodes per parameter update.
    pub batch_size: usize,
    pub epochs: usize,
    /// τ: how many feedback steps each day's gradient is unrolled through.
    pub truncation_depth: usize,
    pub utility: UtilityKind,
    /// T: trading days per episode.
    pub episode_length: usize,
    pub seed: u64,
    pub gradient_clip: Option<f64>,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 100,
            truncation_depth: 5,
            utility: UtilityKind::CumulativeLogReturn,
            episode_length: 60,
            seed: 0,
            gradient_clip: None,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.truncation_depth == 0 {
            return Err(TrainError::InvalidConfig("truncation depth must be >= 1".into()));
        }
        if self.episode_length == 0 {
            return Err(TrainError::InvalidConfig("episode length must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch size must be >= 1".into()));
        }
        if let Some(c) = self.gradient_clip {
            if !(c > 0.0) {
                return Err(TrainError::InvalidConfig(format!("gradient clip must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// `∂U/∂θ`, laid out like the parameters it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradient(pub PolicyParameters);

impl Gradient {
    pub fn zeros_like(params: &PolicyParameters) -> Self {
        Gradient(params.zeros_like())
    }

    pub fn norm(&self) -> f64 {
        self.0.l2_norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }

    pub fn add(&mut self, other: &Gradient) {
        self.0.add_scaled(&other.0, 1.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.scale(factor);
    }
}

/// Rescales `grad` to at most `max_norm`.
pub fn clip_gradient(grad: &mut Gradient, max_norm: f64) {
    let n = grad.norm();
    if n > max_norm {
        grad.scale(max_norm / n);
    }
}

/// One ascent step `θ ← θ + lr·∇U`, after optional max-norm clipping.
pub fn sgd_step(
    params: &PolicyParameters,
    grad: &Gradient,
    lr: f64,
    clip: Option<f64>,
) -> Result<PolicyParameters, TrainError> {
    if !params.same_shape(&grad.0) {
        return Err(TrainError::ShapeMismatch("gradient and parameters differ in shape".into()));
    }
    let mut g = grad.clone();
    if let Some(c) = clip {
        clip_gradient(&mut g, c);
    }
    let mut out = params.clone();
    out.add_scaled(&g.0, lr);
    Ok(out)
}

/// One trading episode as seen by the learner.
///
/// `gross[t]` and `prices[t]` are over the whole stock universe
/// (`[bond, stocks...]` and `[stocks...]`). When `slots` is set, the policy
/// only trades the listed stock indices on each day and `features[t]` holds
/// the features of those stocks; otherwise it trades every stock.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub features: Vec<Vec<f64>>,
    pub gross: Vec<Vec<f64>>,
    pub prices: Vec<Vec<f64>>,
    pub slots: Option<Vec<Vec<usize>>>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_stocks(&self) -> usize {
        self.gross.first().map_or(0, |g| g.len().saturating_sub(1))
    }

    pub(crate) fn validate(&self, params: &PolicyParameters, cfg: &PolicyConfig) -> Result<(), TrainError> {
        let t = self.features.len();
        if t == 0 {
            return Err(TrainError::InsufficientData("episode has no days".into()));
        }
        if self.gross.len() != t || self.prices.len() != t {
            return Err(TrainError::ShapeMismatch(format!(
                "episode has {t} feature rows, {} return rows, {} price rows",
                self.gross.len(),
                self.prices.len()
            )));
        }
        let m = self.num_stocks();
        if m == 0 || self.gross.iter().any(|g| g.len() != m + 1) || self.prices.iter().any(|p| p.len() != m) {
            return Err(TrainError::ShapeMismatch("ragged return or price rows".into()));
        }
        if self.features.iter().any(|f| f.len() != params.feature_dim()) {
            return Err(TrainError::ShapeMismatch(format!(
                "features must have {} entries",
                params.feature_dim()
            )));
        }
        let traded = match &self.slots {
            Some(slots) => {
                if slots.len() != t {
                    return Err(TrainError::ShapeMismatch("one slot list per day required".into()));
                }
                let k = slots[0].len();
                if slots.iter().any(|s| s.len() != k || s.iter().any(|&i| i >= m)) {
                    return Err(TrainError::ShapeMismatch("invalid slot lists".into()));
                }
                k
            }
            None => m,
        };
        if cfg.action_dim(traded) != params.action_dim() {
            return Err(TrainError::ShapeMismatch(format!(
                "policy emits {} actions, episode trades {traded} stocks",
                params.action_dim()
            )));
        }
        Ok(())
    }
}

/// Pool-space action vector (weights over `[bond, stocks...]`, or share
/// counts over `[stocks...]`) to the policy's own slot order.
pub(crate) fn pool_to_slots(pool: &[f64], slots: Option<&[usize]>, mode: HeadMode) -> Vec<f64> {
    match (slots, mode) {
        (None, _) => pool.to_vec(),
        (Some(s), HeadMode::WeightHead) => std::iter::once(pool[0]).chain(s.iter().map(|&i| pool[i + 1])).collect(),
        (Some(s), HeadMode::ShareHead) => s.iter().map(|&i| pool[i]).collect(),
    }
}

/// Inverse placement of [`pool_to_slots`]; unlisted stocks get zero.
pub(crate) fn slots_to_pool(local: &[f64], slots: Option<&[usize]>, mode: HeadMode, num_stocks: usize) -> Vec<f64> {
    match (slots, mode) {
        (None, _) => local.to_vec(),
        (Some(s), HeadMode::WeightHead) => {
            let mut out = vec![0.0; num_stocks + 1];
            out[0] = local[0];
            for (j, &i) in s.iter().enumerate() {
                out[i + 1] = local[j + 1];
            }
            out
        }
        (Some(s), HeadMode::ShareHead) => {
            let mut out = vec![0.0; num_stocks];
            for (j, &i) in s.iter().enumerate() {
                out[i] = local[j];
            }
            out
        }
    }
}

/// Scale applied to a pool-space action when it is fed back to the network.
pub(crate) fn feedback_scale(cfg: &PolicyConfig) -> f64 {
    match cfg.mode {
        HeadMode::WeightHead => 1.0,
        HeadMode::ShareHead => 1.0 / cfg.max_shares,
    }
}

pub(crate) fn initial_pool_action(cfg: &PolicyConfig, num_stocks: usize) -> Vec<f64> {
    match cfg.mode {
        HeadMode::WeightHead => {
            let mut v = vec![0.0; num_stocks + 1];
            v[0] = 1.0;
            v
        }
        HeadMode::ShareHead => vec![0.0; num_stocks],
    }
}

/// Decision days with their features, the following period's gross returns
/// and the closing prices at decision time.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSeries {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub features: Vec<Vec<f64>>,
    pub features_per_asset: usize,
    pub gross: Vec<Vec<f64>>,
    pub prices: Vec<Vec<f64>>,
}

impl MarketSeries {
    /// Pairs each feature day with the returns of the next trading day. The
    /// last history day has no next-day return and is left out.
    pub fn align(features: &FeatureMatrix, history: &PriceHistory, risk_free_rate: f64) -> Result<Self, TrainError> {
        if features.assets != history.assets {
            return Err(TrainError::CalendarMismatch(
                "feature and price files list different assets".into(),
            ));
        }
        let mut out = MarketSeries {
            dates: Vec::new(),
            assets: history.assets.clone(),
            features: Vec::new(),
            features_per_asset: features.features_per_asset,
            gross: Vec::new(),
            prices: Vec::new(),
        };
        for (date, row) in features.calendar.iter().zip(&features.rows) {
            let day = history
                .day_index(*date)
                .ok_or_else(|| TrainError::CalendarMismatch(format!("{date} is missing from the price history")))?;
            if day + 1 >= history.num_days() {
                continue;
            }
            out.dates.push(*date);
            out.features.push(row.clone());
            out.gross.push(history.gross_returns_after(day, risk_free_rate));
            out.prices.push(history.closes_on(day));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn num_stocks(&self) -> usize {
        self.assets.len()
    }

    /// Days in `[from, to]`.
    pub fn restrict_dates(&self, from: NaiveDate, to: NaiveDate) -> MarketSeries {
        let start = self.dates.partition_point(|d| *d < from);
        let end = self.dates.partition_point(|d| *d <= to).max(start);
        self.slice(start, end)
    }

    pub fn slice(&self, start: usize, end: usize) -> MarketSeries {
        MarketSeries {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.clone(),
            features: self.features[start..end].to_vec(),
            features_per_asset: self.features_per_asset,
            gross: self.gross[start..end].to_vec(),
            prices: self.prices[start..end].to_vec(),
        }
    }

    /// Episode over `[start, start+len)` trading every stock, or only the
    /// given per-day slots (indexed from `start`).
    pub fn episode(&self, start: usize, len: usize, slots: Option<&[Vec<usize>]>) -> Episode {
        let range = start..start + len;
        let features = match slots {
            None => self.features[range.clone()].to_vec(),
            Some(s) => range
                .clone()
                .map(|d| {
                    let k = self.features_per_asset;
                    s[d].iter()
                        .flat_map(|&a| self.features[d][a * k..(a + 1) * k].iter().copied())
                        .collect()
                })
                .collect(),
        };
        Episode {
            features,
            gross: self.gross[range.clone()].to_vec(),
            prices: self.prices[range.clone()].to_vec(),
            slots: slots.map(|s| s[range].to_vec()),
        }
    }
}
