//! First-order optimizers and learning-rate schedules over flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{MacError, Result};

pub const DEFAULT_LR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    first: Vec<f64>,
    second: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Result<Self> {
        if let OptimizerKind::Adam { beta1, beta2, eps } = kind {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(MacError::invalid("Adam needs betas in [0, 1) and eps > 0"));
            }
        }
        let moments = match kind {
            OptimizerKind::Adam { .. } => n_params,
            OptimizerKind::Sgd => 0,
        };
        Ok(Self {
            kind,
            first: vec![0.0; moments],
            second: vec![0.0; moments],
            t: 0,
        })
    }

    pub fn adam(n_params: usize) -> Self {
        Self::new(OptimizerKind::default(), n_params).expect("default hyperparameters are valid")
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), grad.len(), "gradient length must match parameters");
        self.t += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    Cosine,
    Linear,
}

/// A constant rate, written as a bare number, or a decay from `base` to
/// `base·final_fraction` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSchedule {
    Constant(f64),
    Decay {
        base: f64,
        decay: Decay,
        #[serde(default)]
        final_fraction: f64,
    },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Constant(DEFAULT_LR)
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        let (base, fraction) = match *self {
            LrSchedule::Constant(lr) => (lr, 1.0),
            LrSchedule::Decay {
                base, final_fraction, ..
            } => (base, final_fraction),
        };
        if !(base > 0.0) || !base.is_finite() {
            return Err(MacError::Validation(format!(
                "learning rate must be positive, got {base}"
            )));
        }
        if !(0.0..=1.0).contains(&fraction) {
            return Err(MacError::Validation("final_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn base(&self) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Decay { base, .. } => base,
        }
    }

    /// Rate for the update at `step` (0-based) of `total`.
    pub fn rate(&self, step: u64, total: u64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::Decay {
                base,
                decay,
                final_fraction,
            } => {
                let progress = if total <= 1 {
                    0.0
                } else {
                    step as f64 / (total - 1) as f64
                };
                let shape = match decay {
                    Decay::Cosine => 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()),
                    Decay::Linear => 1.0 - progress,
                };
                base * (final_fraction + (1.0 - final_fraction) * shape)
            }
        }
    }
}
