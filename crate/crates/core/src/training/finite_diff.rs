//! Central-difference gradient oracle. It evaluates the utility by plain
//! forward simulation through the public environment API and shares no code
//! with the analytic backward pass.

use rayon::prelude::*;

use crate::env::{self, EnvConfig, UtilityKind};
use crate::policy::{PolicyConfig, PolicyParameters, StepMasks};

use super::{rollout, Episode, Gradient, TrainError};

/// Utility of one episode under `params`, with the full (untruncated) recurrence.
pub fn episode_utility(
    episode: &Episode,
    params: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    kind: UtilityKind,
    masks: Option<&[StepMasks]>,
) -> Result<f64, TrainError> {
    let r = rollout(episode, params, policy_cfg, env_cfg, masks)?;
    Ok(env::utility(&r.outcome.returns, kind)?)
}

/// `(U(θ+εe_i) − U(θ−εe_i)) / 2ε` for every parameter, dropout disabled.
pub fn finite_diff_gradient(
    episode: &Episode,
    params: &PolicyParameters,
    policy_cfg: &PolicyConfig,
    env_cfg: &EnvConfig,
    kind: UtilityKind,
    eps: f64,
) -> Result<Gradient, TrainError> {
    if !(eps > 0.0) {
        return Err(TrainError::InvalidConfig(format!("finite-difference step must be positive, got {eps}")));
    }
    let index: Vec<(usize, usize)> = params
        .blocks()
        .iter()
        .enumerate()
        .flat_map(|(b, block)| (0..block.len()).map(move |i| (b, i)))
        .collect();
    let values = index
        .par_iter()
        .map_init(
            || params.clone(),
            |probe, &(b, i)| -> Result<f64, TrainError> {
                let orig = probe.blocks()[b][i];
                probe.blocks_mut()[b][i] = orig + eps;
                let up = episode_utility(episode, probe, policy_cfg, env_cfg, kind, None);
                probe.blocks_mut()[b][i] = orig - eps;
                let down = episode_utility(episode, probe, policy_cfg, env_cfg, kind, None);
                probe.blocks_mut()[b][i] = orig;
                Ok((up? - down?) / (2.0 * eps))
            },
        )
        .collect::<Result<Vec<f64>, _>>()?;
    let mut grad = Gradient::zeros_like(params);
    for (&(b, i), v) in index.iter().zip(values) {
        grad.0.blocks_mut()[b][i] = v;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::HeadMode;
    use crate::training::bptt_gradient;
    use crate::training::fixtures::{small_episode, small_policy};

    #[test]
    fn flat_market_has_zero_gradient() {
        let (policy, params) = small_policy(1, HeadMode::WeightHead, 2, 3);
        let mut ep = small_episode(2, 2, 5, 3, None);
        ep.gross.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 1.0));
        let env = EnvConfig {
            commission_rate: 0.0,
            ..EnvConfig::new(2)
        };
        let g = finite_diff_gradient(&ep, &params, &policy, &env, UtilityKind::CumulativeLogReturn, 1e-5).unwrap();
        assert!(g.0.blocks().iter().all(|b| b.iter().all(|v| v.abs() < 1e-7)));
    }

    #[test]
    fn error_shrinks_quadratically_with_step() {
        let (policy, params) = small_policy(3, HeadMode::WeightHead, 2, 3);
        let ep = small_episode(4, 2, 5, 3, None);
        let env = EnvConfig::new(2);
        let kind = UtilityKind::CumulativeLogReturn;
        let exact = bptt_gradient(&ep, &params, &policy, &env, kind, 5, None).unwrap().gradient;
        let err = |eps: f64| {
            let mut g = finite_diff_gradient(&ep, &params, &policy, &env, kind, eps).unwrap();
            g.0.add_scaled(&exact.0, -1.0);
            g.norm()
        };
        let coarse = err(1e-2);
        let fine = err(5e-3);
        let ratio = coarse / fine;
        assert!((3.0..5.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_non_positive_step() {
        let (policy, params) = small_policy(1, HeadMode::WeightHead, 2, 3);
        let ep = small_episode(2, 2, 3, 3, None);
        let r = finite_diff_gradient(&ep, &params, &policy, &EnvConfig::new(2), UtilityKind::SharpeRatio, 0.0);
        assert!(matches!(r, Err(TrainError::InvalidConfig(_))));
    }
}
