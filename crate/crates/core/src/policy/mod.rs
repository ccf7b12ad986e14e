//! The recurrent deep policy: an action-feedback recurrent layer, dense ReLU
//! layers, and an output head producing either portfolio weights or share
//! counts.

mod checkpoint;
mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::PortfolioWeights;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_SCHEMA_VERSION};
pub use network::{
    backward_step, forward, forward_raw, forward_sequence, init_params, sample_masks, DenseLayer, ForwardCache,
    PolicyParameters, RecurrentLayer, StepMasks,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("EmptySlice")]
    EmptySlice,
    #[error("invalid policy config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    /// Long-only weights over bond plus every stock.
    WeightHead,
    /// Target share counts per stock in `[0, max_shares]`.
    ShareHead,
}

/// How the weight head turns logits into a point on the simplex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightActivation {
    /// Element-wise sigmoid, then divided by the sum.
    SigmoidNormalized,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub mode: HeadMode,
    pub weight_activation: WeightActivation,
    pub dropout_rate: f64,
    /// Widths of the recurrent layer followed by each dense hidden layer.
    pub hidden_sizes: Vec<usize>,
    pub max_shares: f64,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            mode: HeadMode::WeightHead,
            weight_activation: WeightActivation::SigmoidNormalized,
            dropout_rate: 0.2,
            hidden_sizes: vec![128, 128, 64],
            max_shares: 100.0,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(PolicyError::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(PolicyError::InvalidConfig(
                "hidden sizes must be non-empty and positive".into(),
            ));
        }
        if !(self.max_shares > 0.0) || !self.max_shares.is_finite() {
            return Err(PolicyError::InvalidConfig(format!(
                "max_shares must be positive, got {}",
                self.max_shares
            )));
        }
        Ok(())
    }

    /// Width of the output head for `num_stocks` stocks.
    pub fn action_dim(&self, num_stocks: usize) -> usize {
        match self.mode {
            HeadMode::WeightHead => num_stocks + 1,
            HeadMode::ShareHead => num_stocks,
        }
    }

    /// The action fed back into the recurrent layer on the first day.
    pub fn initial_action(&self, num_stocks: usize) -> Action {
        match self.mode {
            HeadMode::WeightHead => Action::Weights(PortfolioWeights::all_bond(num_stocks)),
            HeadMode::ShareHead => Action::Shares(vec![0.0; num_stocks]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Weights(PortfolioWeights),
    Shares(Vec<f64>),
}

impl Action {
    /// Raw action vector as produced by the head.
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Action::Weights(w) => w.values(),
            Action::Shares(s) => s,
        }
    }

    /// Input presented to the recurrent layer on the following day. Share
    /// counts are scaled by `max_shares` so both heads feed back values in
    /// `[0, 1]`.
    pub fn feedback_input(&self, cfg: &PolicyConfig) -> Vec<f64> {
        match self {
            Action::Weights(w) => w.values().to_vec(),
            Action::Shares(s) => s.iter().map(|n| n / cfg.max_shares).collect(),
        }
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    x.tanh()
}

/// `ln σ(x)` without overflow or underflow to `-inf` for moderate `x`.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_examples() {
        assert_eq!(relu(-2.0), 0.0);
        assert_eq!(relu(3.0), 3.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh(0.0), 0.0);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert!(sigmoid(-700.0) > 0.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
        assert!(log_sigmoid(-1000.0).is_finite());
        assert!((log_sigmoid(0.3) - sigmoid(0.3).ln()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PolicyConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.dropout_rate = 1.0;
        assert!(cfg.validate().is_err());
        cfg.dropout_rate = 0.0;
        cfg.hidden_sizes = vec![];
        assert!(cfg.validate().is_err());
    }
}
