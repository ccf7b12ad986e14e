//! Stock selection over a large pool: a scoring network ranks every stock,
//! the top k form the day's basket, and the actor trades only the basket.

mod joint;
mod mask;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvError, PortfolioWeights};
use crate::policy::PolicyError;
use crate::training::TrainError;

pub use joint::{
    joint_forward, select_baskets, slots_of, train_joint, write_basket_trace, JointOutput, JointReport,
    MaskTrainConfig,
};
pub use mask::{init_mask_params, score_stocks, MaskParameters, MASK_FORMAT, MASK_SCHEMA_VERSION};

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("ShapeMismatch: {0}")]
    ShapeMismatch(String),
    #[error("KTooLarge: basket of {k} from a pool of {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("PoolTooSmall: pool of {pool} cannot refresh a basket of {k}")]
    PoolTooSmall { pool: usize, k: usize },
    #[error("DegenerateMask: no weight left after masking")]
    DegenerateMask,
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasketMode {
    /// Fresh top-k every day.
    Free,
    /// At most `turnover_cap` names replaced per day.
    Turnover,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub basket_size: usize,
    pub mode: BasketMode,
    /// Names that may be replaced per day in turnover mode; `None` means half the basket.
    pub turnover_cap: Option<usize>,
    pub hidden_size: usize,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            basket_size: 20,
            mode: BasketMode::Free,
            turnover_cap: None,
            hidden_size: 64,
            seed: 0,
        }
    }
}

impl SelectionConfig {
    pub fn cap(&self) -> usize {
        self.turnover_cap.unwrap_or(self.basket_size / 2)
    }

    pub fn validate(&self) -> Result<(), SelectionError> {
        if self.basket_size == 0 {
            return Err(SelectionError::InvalidConfig("basket size must be >= 1".into()));
        }
        if self.hidden_size == 0 {
            return Err(SelectionError::InvalidConfig("mask hidden size must be >= 1".into()));
        }
        if self.cap() > self.basket_size {
            return Err(SelectionError::InvalidConfig(format!(
                "turnover cap {} exceeds basket size {}",
                self.cap(),
                self.basket_size
            )));
        }
        Ok(())
    }
}

/// One day's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Basket {
    /// Pool indices, best score first. This is also the actor's slot order.
    pub selected: Vec<usize>,
    /// 0/1 over the pool.
    pub mask: Vec<f64>,
    /// Names carried over from the previous basket (empty for a fresh basket).
    pub retained: Vec<usize>,
}

impl Basket {
    fn from_ranked(selected: Vec<usize>, retained: Vec<usize>, pool: usize) -> Self {
        let mut mask = vec![0.0; pool];
        for &i in &selected {
            mask[i] = 1.0;
        }
        Self {
            selected,
            mask,
            retained,
        }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask.get(i).is_some_and(|m| *m == 1.0)
    }

    pub fn pool_size(&self) -> usize {
        self.mask.len()
    }
}

/// `indices` ordered by descending score, lower index first on ties.
fn rank(scores: &[f64], indices: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let mut v: Vec<usize> = indices.into_iter().collect();
    v.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    v
}

/// The `k` best-scoring stocks.
pub fn top_k_mask(scores: &[f64], k: usize) -> Result<Basket, SelectionError> {
    if k > scores.len() {
        return Err(SelectionError::KTooLarge { k, pool: scores.len() });
    }
    let mut ranked = rank(scores, 0..scores.len());
    ranked.truncate(k);
    Ok(Basket::from_ranked(ranked, Vec::new(), scores.len()))
}

/// Zeroes the weight of every stock outside the basket and renormalizes,
/// bond included.
pub fn apply_mask(raw: &PortfolioWeights, basket: &Basket) -> Result<PortfolioWeights, SelectionError> {
    let stocks = raw.stocks();
    if stocks.len() != basket.pool_size() {
        return Err(SelectionError::ShapeMismatch(format!(
            "action covers {} stocks, mask covers {}",
            stocks.len(),
            basket.pool_size()
        )));
    }
    let mut w = Vec::with_capacity(stocks.len() + 1);
    w.push(raw.bond());
    w.extend(stocks.iter().zip(&basket.mask).map(|(s, m)| s * m));
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(SelectionError::DegenerateMask);
    }
    w.iter_mut().for_each(|v| *v /= total);
    Ok(PortfolioWeights::new(w)?)
}

/// Turnover-limited basket update with half the basket replaceable.
pub fn turnover_constrained_basket(scores: &[f64], prev: &Basket, k: usize) -> Result<Basket, SelectionError> {
    turnover_constrained_basket_with_cap(scores, prev, k, k / 2)
}

/// Keeps the `k − cap` members of `prev` that score best today, then fills
/// the remaining `cap` places with the best of every other stock (dropped
/// members of `prev` included). At most `cap` names change.
pub fn turnover_constrained_basket_with_cap(
    scores: &[f64],
    prev: &Basket,
    k: usize,
    cap: usize,
) -> Result<Basket, SelectionError> {
    let pool = scores.len();
    if pool < k {
        return Err(SelectionError::PoolTooSmall { pool, k });
    }
    if cap > k {
        return Err(SelectionError::InvalidConfig(format!("turnover cap {cap} exceeds basket size {k}")));
    }
    if prev.pool_size() != pool || prev.selected.len() != k || prev.selected.iter().any(|&i| i >= pool) {
        return Err(SelectionError::ShapeMismatch(
            "previous basket does not match the pool or basket size".into(),
        ));
    }
    let mut retained = rank(scores, prev.selected.iter().copied());
    retained.truncate(k - cap);
    let mut keep = vec![false; pool];
    for &i in &retained {
        keep[i] = true;
    }
    let mut entrants = rank(scores, (0..pool).filter(|&i| !keep[i]));
    entrants.truncate(cap);
    let selected = rank(scores, retained.iter().chain(&entrants).copied());
    Ok(Basket::from_ranked(selected, retained, pool))
}
