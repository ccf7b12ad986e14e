use std::io::Write;

use chrono::NaiveDate;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvConfig, EpisodeOutcome, PortfolioWeights};
use crate::policy::{PolicyConfig, PolicyParameters};
use crate::training::{episode_utility, rollout, train, MarketSeries, TrainConfig, TrainReport};

use super::{
    apply_mask, init_mask_params, score_stocks, top_k_mask, turnover_constrained_basket_with_cap, Basket, BasketMode,
    MaskParameters, SelectionConfig, SelectionError,
};

/// Scores every stock on every day of `series` and forms the daily baskets.
/// The first day is always a fresh top-k.
pub fn select_baskets(
    series: &MarketSeries,
    mask: &MaskParameters,
    cfg: &SelectionConfig,
) -> Result<(Vec<Basket>, Vec<Vec<f64>>), SelectionError> {
    cfg.validate()?;
    if mask.feature_dim() != series.features_per_asset {
        return Err(SelectionError::ShapeMismatch(format!(
            "mask network reads {} features per stock, data has {}",
            mask.feature_dim(),
            series.features_per_asset
        )));
    }
    let scores = series
        .features
        .par_iter()
        .map(|row| score_stocks(row, mask))
        .collect::<Result<Vec<_>, _>>()?;
    let k = cfg.basket_size;
    let baskets = match cfg.mode {
        BasketMode::Free => scores.par_iter().map(|s| top_k_mask(s, k)).collect::<Result<Vec<_>, _>>()?,
        BasketMode::Turnover => {
            let mut out: Vec<Basket> = Vec::with_capacity(scores.len());
            for s in &scores {
                let b = match out.last() {
                    None => top_k_mask(s, k)?,
                    Some(prev) => turnover_constrained_basket_with_cap(s, prev, k, cfg.cap())?,
                };
                out.push(b);
            }
            out
        }
    };
    Ok((baskets, scores))
}

/// The actor's slot lists, one per day.
pub fn slots_of(baskets: &[Basket]) -> Vec<Vec<usize>> {
    baskets.iter().map(|b| b.selected.clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointOutput {
    pub baskets: Vec<Basket>,
    pub scores: Vec<Vec<f64>>,
    /// Pool-wide weights, zero outside each day's basket.
    pub weights: Vec<PortfolioWeights>,
    pub outcome: EpisodeOutcome,
}

/// Selection followed by the actor over every day of `series`.
pub fn joint_forward(
    series: &MarketSeries,
    mask: &MaskParameters,
    policy: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    sel_cfg: &SelectionConfig,
) -> Result<JointOutput, SelectionError> {
    let (baskets, scores) = select_baskets(series, mask, sel_cfg)?;
    let slots = slots_of(&baskets);
    let episode = series.episode(0, series.len(), Some(&slots));
    let env = EnvConfig {
        num_stocks: series.num_stocks(),
        ..env_cfg.clone()
    };
    let played = rollout(&episode, policy, policy_cfg, &env, None)?;
    let weights = played
        .weights
        .iter()
        .zip(&baskets)
        .map(|(w, b)| apply_mask(w, b))
        .collect::<Result<Vec<_>, _>>()?;
    let outcome = env::run_episode(&env, &weights, &series.gross)?;
    Ok(JointOutput {
        baskets,
        scores,
        weights,
        outcome,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskTrainConfig {
    /// Alternations of actor training and mask search.
    pub rounds: usize,
    /// Candidate mask perturbations tried per round.
    pub perturbations: usize,
    /// Half-width of the uniform perturbation applied to every mask parameter.
    pub step: f64,
    pub seed: u64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            perturbations: 8,
            step: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub actor: Vec<TrainReport>,
    /// Mask objective after each round's search.
    pub mask_objective: Vec<f64>,
}

/// Mean utility over consecutive non-overlapping windows of the series.
fn mask_objective(
    series: &MarketSeries,
    mask: &MaskParameters,
    policy: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    sel_cfg: &SelectionConfig,
    train_cfg: &TrainConfig,
) -> Result<f64, SelectionError> {
    let (baskets, _) = select_baskets(series, mask, sel_cfg)?;
    let slots = slots_of(&baskets);
    let len = train_cfg.episode_length;
    let starts: Vec<usize> = (0..series.len() / len).map(|i| i * len).collect();
    let eval_cfg = PolicyConfig {
        dropout_rate: 0.0,
        ..policy_cfg.clone()
    };
    let utilities = starts
        .par_iter()
        .map(|&s| {
            let ep = series.episode(s, len, Some(&slots));
            episode_utility(&ep, policy, &eval_cfg, env_cfg, train_cfg.utility, None)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(utilities.iter().sum::<f64>() / utilities.len().max(1) as f64)
}

/// Alternates actor training on the current baskets with a seeded random
/// search over the mask network that only keeps improvements.
pub fn train_joint(
    series: &MarketSeries,
    sel_cfg: &SelectionConfig,
    policy_cfg: &PolicyConfig,
    train_cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    mask_cfg: &MaskTrainConfig,
) -> Result<(MaskParameters, PolicyParameters, JointReport), SelectionError> {
    if !(mask_cfg.step > 0.0) {
        return Err(SelectionError::InvalidConfig(format!(
            "mask perturbation step must be positive, got {}",
            mask_cfg.step
        )));
    }
    let env = EnvConfig {
        num_stocks: series.num_stocks(),
        ..env_cfg.clone()
    };
    let mut mask = init_mask_params(sel_cfg, series.features_per_asset)?;
    let mut actor: Option<PolicyParameters> = None;
    let mut report = JointReport {
        actor: Vec::new(),
        mask_objective: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mask_cfg.seed);
    let noise = Uniform::new_inclusive(-mask_cfg.step, mask_cfg.step);
    for round in 0..mask_cfg.rounds.max(1) {
        let (baskets, _) = select_baskets(series, &mask, sel_cfg)?;
        let slots = slots_of(&baskets);
        let cfg = TrainConfig {
            seed: train_cfg.seed.wrapping_add(round as u64),
            ..train_cfg.clone()
        };
        let (params, r) = train(series, Some(&slots), policy_cfg, &cfg, &env, actor.take())?;
        report.actor.push(r);
        if mask_cfg.rounds == 0 {
            actor = Some(params);
            break;
        }
        let mut best = mask_objective(series, &mask, &params, policy_cfg, &env, sel_cfg, train_cfg)?;
        for _ in 0..mask_cfg.perturbations {
            let mut candidate = mask.clone();
            candidate.values_mut().for_each(|v| *v += noise.sample(&mut rng));
            let value = mask_objective(series, &candidate, &params, policy_cfg, &env, sel_cfg, train_cfg)?;
            if value > best {
                best = value;
                mask = candidate;
            }
        }
        report.mask_objective.push(best);
        actor = Some(params);
    }
    Ok((mask, actor.expect("at least one round runs"), report))
}

/// CSV `date,ticker,selected,score`, one row per stock per day.
pub fn write_basket_trace<W: Write>(
    out: W,
    dates: &[NaiveDate],
    assets: &[String],
    baskets: &[Basket],
    scores: &[Vec<f64>],
) -> Result<(), SelectionError> {
    if dates.len() != baskets.len() || dates.len() != scores.len() {
        return Err(SelectionError::ShapeMismatch("trace series differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "ticker", "selected", "score"])?;
    for ((date, basket), day) in dates.iter().zip(baskets).zip(scores) {
        let d = date.format("%Y-%m-%d").to_string();
        for (i, ticker) in assets.iter().enumerate() {
            let sel = if basket.contains(i) { "1" } else { "0" };
            w.write_record([d.as_str(), ticker, sel, &day[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
