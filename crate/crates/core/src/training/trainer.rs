use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::EnvConfig;
use crate::policy::{init_params, sample_masks, PolicyConfig, PolicyParameters, StepMasks};

use super::{bptt_gradient, clip_gradient, Gradient, MarketSeries, Optimizer, TrainConfig, TrainError};

pub const TRAIN_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub schema_version: u32,
    pub epoch: Vec<usize>,
    /// Mean episode utility of each batch, before that epoch's update.
    pub utility: Vec<f64>,
    /// Norm of the averaged gradient, before clipping.
    pub grad_norm: Vec<f64>,
    /// Seconds per epoch. Not serialized, so reports stay reproducible.
    #[serde(skip)]
    pub wall_time: Vec<f64>,
}

impl TrainReport {
    fn new() -> Self {
        Self {
            schema_version: TRAIN_REPORT_SCHEMA_VERSION,
            epoch: Vec::new(),
            utility: Vec::new(),
            grad_norm: Vec::new(),
            wall_time: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Moment estimates for [`Optimizer::Adam`]; unused by plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    optimizer: Optimizer,
    first: PolicyParameters,
    second: PolicyParameters,
    steps: u64,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, params: &PolicyParameters) -> Self {
        Self {
            optimizer,
            first: params.zeros_like(),
            second: params.zeros_like(),
            steps: 0,
        }
    }

    /// Ascent update of `params` in place.
    pub fn apply(&mut self, params: &mut PolicyParameters, grad: &Gradient, lr: f64) -> Result<(), TrainError> {
        if !params.same_shape(&grad.0) {
            return Err(TrainError::ShapeMismatch("gradient and parameters differ in shape".into()));
        }
        match self.optimizer {
            Optimizer::Sgd => params.add_scaled(&grad.0, lr),
            Optimizer::Adam { beta1, beta2, epsilon } => {
                self.steps += 1;
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                let g = grad.0.blocks();
                let mut m = self.first.blocks_mut();
                let mut v = self.second.blocks_mut();
                for (b, p) in params.blocks_mut().into_iter().enumerate() {
                    for i in 0..p.len() {
                        let gi = g[b][i];
                        m[b][i] = beta1 * m[b][i] + (1.0 - beta1) * gi;
                        v[b][i] = beta2 * v[b][i] + (1.0 - beta2) * gi * gi;
                        p[i] += lr * (m[b][i] / c1) / ((v[b][i] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Trains a policy on random windows of `series`.
///
/// When `slots` is given (one stock list per day of `series`), the policy
/// trades only those stocks and sees only their features. Each episode's
/// gradient is divided by its length and the batch is averaged before the
/// update, so the step size does not scale with T or the batch size.
pub fn train(
    series: &MarketSeries,
    slots: Option<&[Vec<usize>]>,
    policy_cfg: &PolicyConfig,
    train_cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    init: Option<PolicyParameters>,
) -> Result<(PolicyParameters, TrainReport), TrainError> {
    train_cfg.validate()?;
    policy_cfg.validate()?;
    let len = train_cfg.episode_length;
    if series.len() < len {
        return Err(TrainError::InsufficientData(format!(
            "{} decision days, episodes need {len}",
            series.len()
        )));
    }
    if let Some(s) = slots {
        if s.len() != series.len() || s.is_empty() {
            return Err(TrainError::ShapeMismatch("one slot list per day required".into()));
        }
    }
    let traded = slots.map_or(series.num_stocks(), |s| s[0].len());
    let feature_dim = traded * series.features_per_asset;
    let mut params = match init {
        Some(p) => p,
        None => init_params(policy_cfg, feature_dim, traded)?,
    };
    let env = EnvConfig {
        num_stocks: series.num_stocks(),
        ..env_cfg.clone()
    };
    env.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let mut opt = OptimizerState::new(train_cfg.optimizer, &params);
    let mut report = TrainReport::new();
    let last_start = series.len() - len;
    for epoch in 0..train_cfg.epochs {
        let clock = Instant::now();
        let jobs: Vec<(usize, u64)> = (0..train_cfg.batch_size)
            .map(|_| (rng.gen_range(0..=last_start), rng.gen()))
            .collect();
        let results = jobs
            .par_iter()
            .map(|&(start, mask_seed)| {
                let episode = series.episode(start, len, slots);
                let masks: Option<Vec<StepMasks>> = (policy_cfg.dropout_rate > 0.0).then(|| {
                    let mut r = ChaCha8Rng::seed_from_u64(mask_seed);
                    (0..len).map(|_| sample_masks(policy_cfg, &mut r)).collect()
                });
                bptt_gradient(
                    &episode,
                    &params,
                    policy_cfg,
                    &env,
                    train_cfg.utility,
                    train_cfg.truncation_depth,
                    masks.as_deref(),
                )
            })
            .collect::<Vec<_>>();
        let mut grad = Gradient::zeros_like(&params);
        let mut utility = 0.0;
        for r in results {
            let out = r?;
            grad.add(&out.gradient);
            utility += out.utility;
        }
        let n = train_cfg.batch_size as f64;
        grad.scale(1.0 / (n * len as f64));
        utility /= n;
        if !grad.is_finite() {
            return Err(TrainError::NonFiniteGradient);
        }
        let norm = grad.norm();
        if let Some(c) = train_cfg.gradient_clip {
            clip_gradient(&mut grad, c);
        }
        opt.apply(&mut params, &grad, train_cfg.learning_rate)?;
        report.epoch.push(epoch);
        report.utility.push(utility);
        report.grad_norm.push(norm);
        report.wall_time.push(clock.elapsed().as_secs_f64());
    }
    Ok((params, report))
}
