use crate::env::{self, EnvConfig, EpisodeOutcome, PortfolioState, PortfolioWeights};
use crate::policy::{forward_raw, HeadMode, PolicyConfig, PolicyParameters, StepMasks};

use super::{feedback_scale, initial_pool_action, pool_to_slots, slots_to_pool, Episode, TrainError};

/// A policy played through the accounting environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Pool-space actions: weights over `[bond, stocks...]` or share counts.
    pub actions: Vec<Vec<f64>>,
    pub weights: Vec<PortfolioWeights>,
    pub outcome: EpisodeOutcome,
}

/// Plays `params` over `episode` one day at a time using the public
/// environment API. Share targets are converted to weights at the wealth
/// reached so far.
pub fn rollout(
    episode: &Episode,
    params: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    masks: Option<&[StepMasks]>,
) -> Result<Rollout, TrainError> {
    episode.validate(params, policy_cfg)?;
    let m = episode.num_stocks();
    let cfg = EnvConfig {
        num_stocks: m,
        ..env_cfg.clone()
    };
    cfg.validate()?;
    let scale = feedback_scale(policy_cfg);
    let mut state = PortfolioState::initial(&cfg);
    let mut prev = initial_pool_action(policy_cfg, m);
    let mut actions = Vec::with_capacity(episode.len());
    let mut weights = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let slots = episode.slots.as_ref().map(|s| s[t].as_slice());
        let feedback: Vec<f64> = pool_to_slots(&prev, slots, policy_cfg.mode)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let cache = forward_raw(
            &episode.features[t],
            &feedback,
            params,
            masks.map(|ms| &ms[t]),
            policy_cfg,
        )?;
        let action = slots_to_pool(&cache.output, slots, policy_cfg.mode, m);
        let target = match policy_cfg.mode {
            HeadMode::WeightHead => PortfolioWeights::new(action.clone())?,
            HeadMode::ShareHead => env::shares_to_weights(&action, &episode.prices[t], state.wealth)?,
        };
        state = env::step(&cfg, &state, &target, &episode.gross[t])?.state;
        weights.push(target);
        actions.push(action.clone());
        prev = action;
    }
    let outcome = env::run_episode(&cfg, &weights, &episode.gross)?;
    Ok(Rollout {
        actions,
        weights,
        outcome,
    })
}
