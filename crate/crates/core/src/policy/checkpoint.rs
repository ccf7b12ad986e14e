//! JSON checkpoints. Floats are written in shortest round-trip form and read
//! back with exact parsing, so save/load reproduces every bit.

use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyError, PolicyParameters};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "rdnn-policy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub format: String,
    pub feature_dim: usize,
    pub action_dim: usize,
    pub num_stocks: usize,
    pub config: PolicyConfig,
    pub params: PolicyParameters,
}

impl Checkpoint {
    pub fn new(config: PolicyConfig, params: PolicyParameters, num_stocks: usize) -> Self {
        Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            format: CHECKPOINT_FORMAT.to_string(),
            feature_dim: params.feature_dim(),
            action_dim: params.action_dim(),
            num_stocks,
            config,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!("unexpected format {:?}", ck.format)));
        }
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported schema version {}",
                ck.schema_version
            )));
        }
        ck.params.check_shapes()?;
        if ck.params.feature_dim() != ck.feature_dim
            || ck.params.action_dim() != ck.action_dim
            || ck.config.action_dim(ck.num_stocks) != ck.action_dim
        {
            return Err(PolicyError::Checkpoint("declared dimensions disagree with layers".into()));
        }
        if !ck.params.is_finite() {
            return Err(PolicyError::Checkpoint("non-finite parameter".into()));
        }
        Ok(ck)
    }
}
