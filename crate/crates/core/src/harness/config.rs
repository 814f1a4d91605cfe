//! Versioned JSON training configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::distribution::DEFAULT_OUTER_FACTOR;
use crate::engine::{Objective, ObjectiveKind, TrainConfig};
use crate::error::{MacError, Result};
use crate::optim::{LrSchedule, OptimizerKind};
use crate::protocol::Protocol;

pub const CONFIG_VERSION: u32 = 1;

/// Hidden layer widths used when a config does not name any.
pub const DEFAULT_HIDDEN_SIZES: [usize; 1] = [64];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<ObjectiveKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reweight: Option<bool>,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default)]
    pub lr: LrSchedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_outer_factor")]
    pub outer_factor: usize,
    #[serde(default = "default_hidden")]
    pub hidden_sizes: Vec<usize>,
}

fn default_steps() -> u64 {
    20_000
}

fn default_batch() -> usize {
    256
}

fn default_eval_every() -> u64 {
    1000
}

fn default_outer_factor() -> usize {
    DEFAULT_OUTER_FACTOR
}

fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN_SIZES.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            objective: None,
            protocol: None,
            reweight: None,
            steps: default_steps(),
            batch: default_batch(),
            lr: LrSchedule::default(),
            seed: 0,
            eval_every: default_eval_every(),
            outer_factor: default_outer_factor(),
            hidden_sizes: default_hidden(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(MacError::Validation(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// Resolves the objective from the config and an optional override;
    /// the two must agree when both are present.
    pub fn train_config(&self, objective: Option<ObjectiveKind>) -> Result<TrainConfig> {
        let kind = match (objective, self.objective) {
            (Some(a), Some(b)) if a != b => {
                return Err(MacError::Validation(format!(
                    "objective {a} conflicts with config objective {b}"
                )))
            }
            (Some(k), _) | (None, Some(k)) => k,
            (None, None) => return Err(MacError::Validation("no objective given".into())),
        };
        let cfg = TrainConfig {
            objective: Objective::from_parts(kind, self.protocol, self.reweight)?,
            batch: self.batch,
            steps: self.steps,
            lr: self.lr,
            optimizer: OptimizerKind::default(),
            seed: self.seed,
            outer_factor: self.outer_factor,
            eval_every: self.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_document() {
        let cfg = RunConfig::from_json(
            r#"{"version":1,"objective":"mac-cr","protocol":"mac","reweight":true,"steps":10,
                "batch":8,"lr":0.01,"seed":3,"eval_every":5,"outer_factor":4,"hidden_sizes":[16,8]}"#,
        )
        .unwrap();
        let t = cfg.train_config(None).unwrap();
        assert_eq!(t.objective.kind(), ObjectiveKind::MacCr);
        assert_eq!(t.batch, 8);
        assert_eq!(cfg.hidden_sizes, vec![16, 8]);
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(RunConfig::from_json(r#"{"version":1,"stepz":10}"#)
            .unwrap_err()
            .is_validation());
        assert!(matches!(
            RunConfig::from_json(r#"{"version":2}"#),
            Err(MacError::Validation(_))
        ));
        let cfg = RunConfig::from_json(r#"{"version":1,"objective":"rnd-cr","reweight":false}"#).unwrap();
        assert!(cfg.train_config(None).is_err());
        let cfg = RunConfig::from_json(r#"{"version":1,"objective":"ardm"}"#).unwrap();
        assert!(cfg.train_config(Some(ObjectiveKind::MacCr)).is_err());
        assert!(RunConfig::from_json(r#"{"version":1}"#)
            .unwrap()
            .train_config(None)
            .is_err());
        let cfg = RunConfig::from_json(r#"{"version":1,"batch":0}"#).unwrap();
        assert!(cfg.train_config(Some(ObjectiveKind::Ardm)).is_err());
    }
}
