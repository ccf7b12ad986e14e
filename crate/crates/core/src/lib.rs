//! Recurrent direct reinforcement learning for long-only portfolio allocation
//! under proportional transaction costs.
//!
//! The crate is organised along the data flow of a training run:
//!
//! - [`market_data`]: OHLCV ingestion, technical indicators, normalized features.
//! - [`env`]: portfolio accounting with drift, commissions and utilities.
//! - [`policy`]: the recurrent policy network and its checkpoints.
//! - [`training`]: truncated backpropagation through time and the training loop.
//! - [`selection`]: mask-network scoring and top-k basket selection.
//! - [`backtest`]: frozen-policy evaluation against a buy-and-hold baseline.

pub mod backtest;
pub mod env;
pub mod linalg;
pub mod market_data;
pub mod policy;
pub mod selection;
pub mod training;
