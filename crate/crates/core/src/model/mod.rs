//! Univariate-conditional models `p(x_i | x_e)`.
//!
//! [`ConditionalModel`] is the inference interface; [`TrainableModel`] adds a
//! flat parameter vector and the parallel masked objective
//! `w/(N-|e|) · Σ_{i∉e} -log p(x_i | x_e)`, averaged over a batch.

pub mod mixture;
pub mod network;
pub mod oracle;
pub mod tabular;

use serde::{Deserialize, Serialize};

use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};

pub use mixture::ProductMixture;
pub use network::{init_network, MaskedMlp, NetworkConfig, NetworkParams};
pub use oracle::{oracle_from_joint, JointTable, OracleModel};
pub use tabular::TabularModel;

/// A full assignment of symbols to the `N` variables.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(Vec<u32>);

impl Instance {
    pub fn new(values: Vec<u32>, spec: &LatticeSpec) -> Result<Self> {
        if values.len() != spec.n_vars() {
            return Err(MacError::invalid(format!(
                "instance has {} values, expected {}",
                values.len(),
                spec.n_vars()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= spec.alphabet_size())
        {
            return Err(MacError::invalid(format!(
                "symbol {v} at position {i} outside alphabet of size {}",
                spec.alphabet_size()
            )));
        }
        Ok(Self(values))
    }

    /// Builds an instance without range checks; callers guarantee validity.
    pub(crate) fn from_raw(values: Vec<u32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i] as usize
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn with_value(&self, i: usize, symbol: usize) -> Instance {
        let mut v = self.0.clone();
        v[i] = symbol as u32;
        Instance(v)
    }

    pub(crate) fn set(&mut self, i: usize, symbol: usize) {
        self.0[i] = symbol as u32;
    }

    pub fn validate(&self, spec: &LatticeSpec) -> Result<()> {
        Instance::new(self.0.clone(), spec).map(|_| ())
    }
}

/// Per-target categorical distributions, ascending target index.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPrediction {
    entries: Vec<(usize, Vec<f64>)>,
}

impl CategoricalPrediction {
    pub fn new(entries: Vec<(usize, Vec<f64>)>) -> Self {
        Self { entries }
    }

    pub fn get(&self, target: usize) -> Option<&[f64]> {
        self.entries
            .binary_search_by_key(&target, |(i, _)| *i)
            .ok()
            .map(|k| self.entries[k].1.as_slice())
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(i, _)| *i)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.entries.iter().map(|(i, p)| (*i, p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One conditional evaluation `log p(x_target | x_given)`.
#[derive(Debug, Clone, Copy)]
pub struct ConditionalQuery<'a> {
    pub x: &'a Instance,
    pub target: usize,
    pub given: Mask,
}

pub trait ConditionalModel: Send + Sync {
    fn spec(&self) -> LatticeSpec;

    /// Normalized predictions for every variable outside `e`.
    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction>;

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        check_target(j, e, &self.spec())?;
        let pred = self.predict_all(x, e)?;
        let probs = pred.get(j).expect("prediction covers every missing target");
        Ok(probs[x.get(j)].ln())
    }

    fn log_conditional_batch(&self, queries: &[ConditionalQuery<'_>]) -> Result<Vec<f64>> {
        queries
            .iter()
            .map(|q| self.log_conditional(q.x, q.target, q.given))
            .collect()
    }
}

impl<M: ConditionalModel + ?Sized> ConditionalModel for &M {
    fn spec(&self) -> LatticeSpec {
        (**self).spec()
    }
    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        (**self).predict_all(x, e)
    }
    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        (**self).log_conditional(x, j, e)
    }
    fn log_conditional_batch(&self, queries: &[ConditionalQuery<'_>]) -> Result<Vec<f64>> {
        (**self).log_conditional_batch(queries)
    }
}

pub(crate) fn check_target(j: usize, e: Mask, spec: &LatticeSpec) -> Result<()> {
    if j >= spec.n_vars() {
        return Err(MacError::invalid(format!("target {j} out of range")));
    }
    if e.contains(j) {
        return Err(MacError::invalid(format!("target {j} is already observed in {e}")));
    }
    Ok(())
}

/// One term of the masked training objective.
#[derive(Debug, Clone, Copy)]
pub struct WeightedExample<'a> {
    pub x: &'a Instance,
    pub mask: Mask,
    pub weight: f64,
}

pub trait TrainableModel: ConditionalModel {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Mean over the batch of `weight/(N-|e|) · Σ_{i∉e} -log p(x_i | x_e)` and its gradient.
    fn loss_and_grad(&self, batch: &[WeightedExample<'_>]) -> Result<(f64, Vec<f64>)>;
}

pub(crate) fn validate_batch(batch: &[WeightedExample<'_>], spec: &LatticeSpec) -> Result<()> {
    if batch.is_empty() {
        return Err(MacError::invalid("empty batch"));
    }
    for ex in batch {
        if ex.mask.cardinality() >= spec.n_vars() {
            return Err(MacError::invalid("full mask in training batch: no missing targets"));
        }
        if !spec.contains_mask(ex.mask) {
            return Err(MacError::invalid(format!("mask {} outside lattice", ex.mask)));
        }
        if !ex.weight.is_finite() {
            return Err(MacError::invalid("non-finite example weight"));
        }
        ex.x.validate(spec)?;
    }
    Ok(())
}

/// Absorbing-state encoding: per variable, a one-hot of its symbol (zeroed
/// when unobserved) followed by a presence bit.
pub fn encode_input(x: &Instance, e: Mask, spec: &LatticeSpec) -> Vec<f64> {
    let mut out = vec![0.0; spec.n_vars() * (spec.alphabet_size() + 1)];
    encode_into(x, e, spec, &mut out);
    out
}

pub(crate) fn encode_into(x: &Instance, e: Mask, spec: &LatticeSpec, out: &mut [f64]) {
    let width = spec.alphabet_size() + 1;
    out.iter_mut().for_each(|v| *v = 0.0);
    for v in e.iter() {
        out[v * width + x.get(v)] = 1.0;
        out[v * width + width - 1] = 1.0;
    }
}

/// Numerically stable `log Σ exp`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Softmax of `logits` written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let lse = log_sum_exp(logits);
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_mask;

    #[test]
    fn encoding_examples() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let x = Instance::new(vec![1, 0], &spec).unwrap();
        assert_eq!(
            encode_input(&x, make_mask(&[0], &spec).unwrap(), &spec),
            vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]
        );
        assert!(encode_input(&x, Mask::EMPTY, &spec).iter().all(|&v| v == 0.0));
        let full = encode_input(&x, spec.full_mask(), &spec);
        assert_eq!(full, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn instance_validation() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        assert!(Instance::new(vec![1, 0, 1], &spec).is_ok());
        assert!(Instance::new(vec![1, 2, 1], &spec).is_err());
        assert!(Instance::new(vec![1, 0], &spec).is_err());
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }
}
