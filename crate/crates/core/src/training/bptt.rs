use crate::env::{self, EnvConfig, PortfolioState, PortfolioWeights, UtilityKind};
use crate::policy::{backward_step, forward_raw, ForwardCache, HeadMode, PolicyConfig, PolicyParameters, StepMasks};

use super::{feedback_scale, initial_pool_action, pool_to_slots, slots_to_pool, Episode, Gradient, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct BpttOutput {
    /// `∂U/∂θ` summed over the episode's days.
    pub gradient: Gradient,
    pub utility: f64,
    pub returns: Vec<f64>,
    pub final_wealth: f64,
}

/// Everything the reverse sweep needs from one simulated day.
struct DayRecord {
    cache: ForwardCache,
    /// Pool-space action as emitted.
    action: Vec<f64>,
    target: Vec<f64>,
    /// Drifted weights held just before rebalancing.
    held: Vec<f64>,
    wealth: f64,
    growth: f64,
    cost: f64,
    period_return: f64,
    /// Share head only: shares cost more than the wealth and were scaled down.
    over_invested: bool,
}

/// Gradient of the episode utility with respect to every parameter.
///
/// The accounting (drift, commissions, wealth) is differentiated exactly for
/// every day, so each action receives its full utility adjoint. That adjoint
/// is then carried back through the network's action-feedback input for at
/// most `truncation_depth` days. With `truncation_depth >= T - 1` the result is
/// the exact gradient of the simulated utility.
pub fn bptt_gradient(
    episode: &Episode,
    params: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    kind: UtilityKind,
    truncation_depth: usize,
    masks: Option<&[StepMasks]>,
) -> Result<BpttOutput, TrainError> {
    episode.validate(params, policy_cfg)?;
    if let Some(ms) = masks {
        if ms.len() != episode.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} mask sets for {} days",
                ms.len(),
                episode.len()
            )));
        }
    }
    let m = episode.num_stocks();
    let cfg = EnvConfig {
        num_stocks: m,
        ..env_cfg.clone()
    };
    cfg.validate()?;

    let days = simulate(episode, params, policy_cfg, &cfg, masks)?;
    let returns: Vec<f64> = days.iter().map(|d| d.period_return).collect();
    let utility = env::utility(&returns, kind)?;
    let d_returns = env::utility_gradient(&returns, kind)?;
    let adjoints = accounting_adjoints(&days, episode, &d_returns, &cfg, policy_cfg.mode);

    let mut grad = Gradient::zeros_like(params);
    if truncation_depth + 1 >= days.len() {
        backprop_full(&days, episode, params, policy_cfg, &adjoints, &mut grad.0);
    } else {
        backprop_windowed(&days, episode, params, policy_cfg, &adjoints, truncation_depth, &mut grad.0);
    }
    if !grad.is_finite() {
        return Err(TrainError::NonFiniteGradient);
    }
    let final_wealth = days.last().map_or(cfg.initial_wealth, |d| d.wealth * (1.0 + d.period_return));
    Ok(BpttOutput {
        gradient: grad,
        utility,
        returns,
        final_wealth,
    })
}

fn simulate(
    episode: &Episode,
    params: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    cfg: &EnvConfig,
    masks: Option<&[StepMasks]>,
) -> Result<Vec<DayRecord>, TrainError> {
    let m = cfg.num_stocks;
    let scale = feedback_scale(policy_cfg);
    let mut state = PortfolioState::initial(cfg);
    let mut prev = initial_pool_action(policy_cfg, m);
    let mut days = Vec::with_capacity(episode.len());
    for t in 0..episode.len() {
        let slots = episode.slots.as_ref().map(|s| s[t].as_slice());
        let feedback: Vec<f64> = pool_to_slots(&prev, slots, policy_cfg.mode)
            .into_iter()
            .map(|v| v * scale)
            .collect();
        let cache = forward_raw(&episode.features[t], &feedback, params, masks.map(|ms| &ms[t]), policy_cfg)?;
        let action = slots_to_pool(&cache.output, slots, policy_cfg.mode, m);
        let (target, over_invested) = match policy_cfg.mode {
            HeadMode::WeightHead => (PortfolioWeights::new(action.clone())?, false),
            HeadMode::ShareHead => {
                let invested: f64 = action.iter().zip(&episode.prices[t]).map(|(n, p)| n * p).sum();
                (
                    env::shares_to_weights(&action, &episode.prices[t], state.wealth)?,
                    invested > state.wealth,
                )
            }
        };
        let g = &episode.gross[t];
        let growth: f64 = target.values().iter().zip(g).map(|(w, g)| w * g).sum();
        let out = env::step(cfg, &state, &target, g)?;
        days.push(DayRecord {
            cache,
            action: action.clone(),
            target: target.values().to_vec(),
            held: state.effective_weights.values().to_vec(),
            wealth: state.wealth,
            growth,
            cost: out.cost_fraction,
            period_return: out.period_return,
            over_invested,
        });
        state = out.state;
        prev = action;
    }
    Ok(days)
}

/// Reverse sweep through the accounting. Returns `∂U/∂a_t` for every
/// pool-space action, holding the network's feedback path fixed.
fn accounting_adjoints(
    days: &[DayRecord],
    episode: &Episode,
    d_returns: &[f64],
    cfg: &EnvConfig,
    mode: HeadMode,
) -> Vec<Vec<f64>> {
    let n = days.len();
    let m1 = cfg.num_stocks + 1;
    let delta = cfg.commission_rate;
    let mut out = vec![Vec::new(); n];
    // adjoints flowing back from day t+1: wealth and drifted weights
    let mut d_wealth_next = 0.0;
    let mut d_held_next = vec![0.0; m1];
    for t in (0..n).rev() {
        let day = &days[t];
        let g = &episode.gross[t];
        let d_r = d_returns[t] + d_wealth_next * day.wealth;
        let mut d_wealth = d_wealth_next * (1.0 + day.period_return);
        let mut d_growth = d_r * (1.0 - day.cost);
        let d_cost = -d_r * day.growth;

        let mut d_target = vec![0.0; m1];
        // drift: held_{t+1,i} = target_i g_i / growth
        for i in 0..m1 {
            let drifted = day.target[i] * g[i] / day.growth;
            d_target[i] += d_held_next[i] * g[i] / day.growth;
            d_growth -= d_held_next[i] * drifted / day.growth;
        }
        for i in 0..m1 {
            d_target[i] += d_growth * g[i];
        }
        let mut d_held = vec![0.0; m1];
        for i in 1..m1 {
            let s = sign(day.target[i] - day.held[i]);
            d_target[i] += d_cost * delta * s;
            d_held[i] = -d_cost * delta * s;
        }

        out[t] = match mode {
            HeadMode::WeightHead => d_target,
            HeadMode::ShareHead => {
                let prices = &episode.prices[t];
                let shares = &day.action;
                if day.over_invested {
                    let invested: f64 = shares.iter().zip(prices).map(|(n, p)| n * p).sum();
                    let inner: f64 = (1..m1).map(|i| d_target[i] * day.target[i]).sum();
                    (0..m1 - 1).map(|j| prices[j] / invested * (d_target[j + 1] - inner)).collect()
                } else {
                    let w = day.wealth;
                    let mut d_shares = Vec::with_capacity(m1 - 1);
                    for j in 0..m1 - 1 {
                        let diff = d_target[j + 1] - d_target[0];
                        d_shares.push(diff * prices[j] / w);
                        d_wealth -= diff * shares[j] * prices[j] / (w * w);
                    }
                    d_shares
                }
            }
        };
        d_wealth_next = d_wealth;
        d_held_next = d_held;
    }
    out
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adjoint of the previous day's pool action given the adjoint of the
/// feedback input on day `t`.
fn feedback_to_pool(d_feedback: &[f64], episode: &Episode, t: usize, cfg: &PolicyConfig) -> Vec<f64> {
    let scale = feedback_scale(cfg);
    let scaled: Vec<f64> = d_feedback.iter().map(|v| v * scale).collect();
    let slots = episode.slots.as_ref().map(|s| s[t].as_slice());
    slots_to_pool(&scaled, slots, cfg.mode, episode.num_stocks())
}

fn pool_to_output(d_pool: &[f64], episode: &Episode, t: usize, cfg: &PolicyConfig) -> Vec<f64> {
    let slots = episode.slots.as_ref().map(|s| s[t].as_slice());
    pool_to_slots(d_pool, slots, cfg.mode)
}

/// Single reverse sweep over the whole feedback chain.
fn backprop_full(
    days: &[DayRecord],
    episode: &Episode,
    params: &PolicyParameters,
    cfg: &PolicyConfig,
    adjoints: &[Vec<f64>],
    grad: &mut PolicyParameters,
) {
    let mut carry: Option<Vec<f64>> = None;
    for t in (0..days.len()).rev() {
        let mut d_pool = adjoints[t].clone();
        if let Some(c) = &carry {
            for (d, c) in d_pool.iter_mut().zip(c) {
                *d += c;
            }
        }
        let d_out = pool_to_output(&d_pool, episode, t, cfg);
        let d_fb = backward_step(params, cfg, &days[t].cache, &d_out, grad);
        carry = Some(feedback_to_pool(&d_fb, episode, t, cfg));
    }
}

/// Each day's accounting adjoint is followed back through at most `depth`
/// feedback hops; older contributions are dropped.
fn backprop_windowed(
    days: &[DayRecord],
    episode: &Episode,
    params: &PolicyParameters,
    cfg: &PolicyConfig,
    adjoints: &[Vec<f64>],
    depth: usize,
    grad: &mut PolicyParameters,
) {
    for t in 0..days.len() {
        let mut d_pool = adjoints[t].clone();
        let oldest = t.saturating_sub(depth);
        let mut s = t;
        loop {
            let d_out = pool_to_output(&d_pool, episode, s, cfg);
            let d_fb = backward_step(params, cfg, &days[s].cache, &d_out, grad);
            if s == oldest {
                break;
            }
            d_pool = feedback_to_pool(&d_fb, episode, s, cfg);
            s -= 1;
        }
    }
}
