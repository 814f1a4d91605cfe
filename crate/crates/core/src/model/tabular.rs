//! One free logit vector per conditional slot `(i, e, x_e)`.
//!
//! Unlimited capacity: every conditional is its own parameter block, so the
//! training objective is minimized exactly by the data conditionals.

use super::{
    check_target, log_sum_exp, softmax_into, validate_batch, CategoricalPrediction, ConditionalModel, Instance,
    TrainableModel, WeightedExample,
};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};

const MAX_TABULAR_PARAMS: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    spec: LatticeSpec,
    /// Start of each mask's block; the block holds `K^|e| · N · K` logits.
    offsets: Vec<usize>,
    logits: Vec<f64>,
}

impl TabularModel {
    /// All logits zero (uniform predictions).
    pub fn new(spec: LatticeSpec) -> Result<Self> {
        spec.require_exact()?;
        let n = spec.n_vars();
        let k = spec.alphabet_size();
        let mut offsets = Vec::with_capacity(1 << n);
        let mut total = 0usize;
        for e in spec.all_masks()? {
            offsets.push(total);
            let block = k
                .checked_pow(e.cardinality() as u32)
                .and_then(|v| v.checked_mul(n * k))
                .ok_or_else(|| MacError::Capacity("tabular model too large".into()))?;
            total = total
                .checked_add(block)
                .filter(|&t| t <= MAX_TABULAR_PARAMS)
                .ok_or_else(|| MacError::Capacity("tabular model too large".into()))?;
        }
        Ok(Self {
            spec,
            offsets,
            logits: vec![0.0; total],
        })
    }

    fn slot(&self, x: &Instance, target: usize, e: Mask) -> usize {
        let k = self.spec.alphabet_size();
        let code = e
            .sorted_elements()
            .iter()
            .rev()
            .fold(0usize, |acc, &v| acc * k + x.get(v));
        self.offsets[e.bits() as usize] + (code * self.spec.n_vars() + target) * k
    }

    pub fn slot_logits(&self, x: &Instance, target: usize, e: Mask) -> &[f64] {
        let start = self.slot(x, target, e);
        &self.logits[start..start + self.spec.alphabet_size()]
    }
}

impl ConditionalModel for TabularModel {
    fn spec(&self) -> LatticeSpec {
        self.spec
    }

    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        x.validate(&self.spec)?;
        let k = self.spec.alphabet_size();
        let entries = e
            .complement(self.spec.n_vars())
            .iter()
            .map(|i| {
                let mut p = vec![0.0; k];
                softmax_into(self.slot_logits(x, i, e), &mut p);
                (i, p)
            })
            .collect();
        Ok(CategoricalPrediction::new(entries))
    }

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        check_target(j, e, &self.spec)?;
        let logits = self.slot_logits(x, j, e);
        Ok(logits[x.get(j)] - log_sum_exp(logits))
    }
}

impl TrainableModel for TabularModel {
    fn params(&self) -> &[f64] {
        &self.logits
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn loss_and_grad(&self, batch: &[WeightedExample<'_>]) -> Result<(f64, Vec<f64>)> {
        validate_batch(batch, &self.spec)?;
        let n = self.spec.n_vars();
        let k = self.spec.alphabet_size();
        let b = batch.len() as f64;
        let mut grad = vec![0.0; self.logits.len()];
        let mut probs = vec![0.0; k];
        let mut loss = 0.0;
        for ex in batch {
            let missing = ex.mask.complement(n);
            let coef = ex.weight / missing.cardinality() as f64;
            for i in missing.iter() {
                let start = self.slot(ex.x, i, ex.mask);
                let logits = &self.logits[start..start + k];
                softmax_into(logits, &mut probs);
                let target = ex.x.get(i);
                loss += coef * (log_sum_exp(logits) - logits[target]);
                for s in 0..k {
                    let indicator = if s == target { 1.0 } else { 0.0 };
                    grad[start + s] += coef * (probs[s] - indicator) / b;
                }
            }
        }
        Ok((loss / b, grad))
    }
}
