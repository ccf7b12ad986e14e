use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, Matrix};
use crate::policy::relu;

use super::{SelectionConfig, SelectionError};

pub const MASK_FORMAT: &str = "rdnn-mask";
pub const MASK_SCHEMA_VERSION: u32 = 1;

/// Per-stock scorer shared across the pool: `s = vᵀ relu(Wᵀ x + b) + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskParameters {
    /// features × hidden.
    pub hidden_weights: Matrix,
    pub hidden_bias: Vec<f64>,
    pub output_weights: Vec<f64>,
    pub output_bias: f64,
}

#[derive(Serialize, Deserialize)]
struct MaskFile {
    schema_version: u32,
    format: String,
    params: MaskParameters,
}

impl MaskParameters {
    pub fn feature_dim(&self) -> usize {
        self.hidden_weights.rows
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.hidden_weights.data.len() + self.hidden_bias.len() + self.output_weights.len() + 1
    }

    pub fn is_finite(&self) -> bool {
        self.hidden_weights
            .data
            .iter()
            .chain(&self.hidden_bias)
            .chain(&self.output_weights)
            .chain(std::iter::once(&self.output_bias))
            .all(|v| v.is_finite())
    }

    pub fn check(&self) -> Result<(), SelectionError> {
        let h = self.hidden_size();
        if self.hidden_weights.cols != h
            || self.hidden_weights.data.len() != self.hidden_weights.rows * h
            || self.output_weights.len() != h
        {
            return Err(SelectionError::ShapeMismatch("mask network layers do not chain".into()));
        }
        if !self.is_finite() {
            return Err(SelectionError::ShapeMismatch("mask network has non-finite entries".into()));
        }
        Ok(())
    }

    /// Flat view of every parameter, in a fixed order.
    pub(crate) fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.hidden_weights
            .data
            .iter_mut()
            .chain(self.hidden_bias.iter_mut())
            .chain(self.output_weights.iter_mut())
            .chain(std::iter::once(&mut self.output_bias))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&MaskFile {
            schema_version: MASK_SCHEMA_VERSION,
            format: MASK_FORMAT.into(),
            params: self.clone(),
        })
        .expect("mask parameters serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, SelectionError> {
        let file: MaskFile =
            serde_json::from_str(s).map_err(|e| SelectionError::ShapeMismatch(format!("mask file: {e}")))?;
        if file.format != MASK_FORMAT || file.schema_version != MASK_SCHEMA_VERSION {
            return Err(SelectionError::ShapeMismatch(format!(
                "unsupported mask file {} v{}",
                file.format, file.schema_version
            )));
        }
        file.params.check()?;
        Ok(file.params)
    }
}

/// Glorot-uniform scorer for `feature_dim` features per stock.
pub fn init_mask_params(cfg: &SelectionConfig, feature_dim: usize) -> Result<MaskParameters, SelectionError> {
    cfg.validate()?;
    if feature_dim == 0 {
        return Err(SelectionError::ShapeMismatch("per-stock feature dimension must be positive".into()));
    }
    let h = cfg.hidden_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let s1 = (6.0 / (feature_dim + h) as f64).sqrt();
    let d1 = Uniform::new_inclusive(-s1, s1);
    let hidden_weights = Matrix {
        rows: feature_dim,
        cols: h,
        data: (0..feature_dim * h).map(|_| d1.sample(&mut rng)).collect(),
    };
    let s2 = (6.0 / (h + 1) as f64).sqrt();
    let d2 = Uniform::new_inclusive(-s2, s2);
    let output_weights = (0..h).map(|_| d2.sample(&mut rng)).collect();
    Ok(MaskParameters {
        hidden_weights,
        hidden_bias: vec![0.0; h],
        output_weights,
        output_bias: 0.0,
    })
}

/// One score per stock. `pool_features` holds the stocks' feature blocks
/// back to back.
pub fn score_stocks(pool_features: &[f64], params: &MaskParameters) -> Result<Vec<f64>, SelectionError> {
    let d = params.feature_dim();
    if pool_features.is_empty() || d == 0 || pool_features.len() % d != 0 {
        return Err(SelectionError::ShapeMismatch(format!(
            "{} pool features is not a positive multiple of {d}",
            pool_features.len()
        )));
    }
    let mut hidden = vec![0.0; params.hidden_size()];
    Ok(pool_features
        .chunks(d)
        .map(|x| {
            hidden.copy_from_slice(&params.hidden_bias);
            params.hidden_weights.accumulate_vec_mul(x, &mut hidden);
            hidden.iter_mut().for_each(|v| *v = relu(*v));
            dot(&params.output_weights, &hidden) + params.output_bias
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params(seed: u64, d: usize) -> MaskParameters {
        let cfg = SelectionConfig {
            hidden_size: 5,
            seed,
            ..SelectionConfig::default()
        };
        let mut p = init_mask_params(&cfg, d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        p.hidden_bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.3..0.3));
        p.output_bias = 0.7;
        p
    }

    #[test]
    fn identical_stocks_score_identically() {
        let p = params(1, 3);
        let s = score_stocks(&[0.1, -0.2, 0.3, 0.1, -0.2, 0.3], &p).unwrap();
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn zero_parameters_give_equal_scores() {
        let mut p = params(2, 2);
        p.values_mut().for_each(|v| *v = 0.0);
        let s = score_stocks(&[1.0, 2.0, -3.0, 4.0, 0.5, 0.5], &p).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_direct_evaluation() {
        let p = params(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats: Vec<f64> = (0..4 * 7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = score_stocks(&feats, &p).unwrap();
        for (s, x) in got.iter().zip(feats.chunks(4)) {
            let mut want = p.output_bias;
            for j in 0..5 {
                let mut z = p.hidden_bias[j];
                for i in 0..4 {
                    z += x[i] * p.hidden_weights.data[i * 5 + j];
                }
                want += p.output_weights[j] * z.max(0.0);
            }
            assert!((s - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_ragged_features() {
        let p = params(4, 3);
        assert!(matches!(score_stocks(&[1.0; 4], &p), Err(SelectionError::ShapeMismatch(_))));
        assert!(matches!(score_stocks(&[], &p), Err(SelectionError::ShapeMismatch(_))));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let p = params(5, 3);
        assert_eq!(MaskParameters::from_json(&p.to_json()).unwrap(), p);
        let bad = p.to_json().replace(MASK_FORMAT, "other");
        assert!(MaskParameters::from_json(&bad).is_err());
    }
}
