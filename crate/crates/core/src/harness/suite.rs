//! Masked-likelihood evaluation suites.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::Serialize;

use super::data::Dataset;
use crate::distribution::MaskDistribution;
use crate::engine::eval_marginal_batch;
use crate::error::{MacError, Result};
use crate::lattice::Mask;
use crate::model::{ConditionalModel, Instance};
use crate::protocol::Decompose;

/// Denominator of bits-per-dimension for marginals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BpdNorm {
    /// Observed variables `|e|`.
    #[default]
    Observed,
    /// All `N` variables.
    AllVars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteResult {
    /// Mean negative log-likelihood in nats.
    pub nll: f64,
    /// Mean of `nll / (|e| ln 2)`; empty masks are skipped.
    pub bpd_observed: f64,
    /// Mean of `nll / (N ln 2)`.
    pub bpd_all: f64,
    pub queries: usize,
    pub mask_hash: u64,
}

impl SuiteResult {
    pub fn bpd(&self, norm: BpdNorm) -> f64 {
        match norm {
            BpdNorm::Observed => self.bpd_observed,
            BpdNorm::AllVars => self.bpd_all,
        }
    }
}

/// FNV-1a over the mask bit patterns, identifying an evaluation mask stream.
pub fn mask_stream_hash(masks: impl IntoIterator<Item = Mask>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for e in masks {
        for byte in e.bits().to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Draws `trials` masks per instance, instance by instance.
pub fn draw_eval_masks<R: Rng + ?Sized>(
    instances: usize,
    m: &MaskDistribution,
    trials: usize,
    rng: &mut R,
) -> Vec<Mask> {
    (0..instances * trials).map(|_| m.sample(rng)).collect()
}

/// Scores fixed `(instance, mask)` queries.
pub fn score_marginals<M: ConditionalModel + ?Sized, R: Rng>(
    model: &M,
    items: &[(&Instance, Mask)],
    w: &dyn Decompose,
    rng: &mut R,
) -> Result<SuiteResult> {
    if items.is_empty() {
        return Err(MacError::invalid("no evaluation queries"));
    }
    let logs = eval_marginal_batch(model, items, w, rng)?;
    Ok(summarize(items, &logs, model.spec().n_vars()))
}

pub(crate) fn summarize(items: &[(&Instance, Mask)], logs: &[f64], n_vars: usize) -> SuiteResult {
    let mut nll = 0.0;
    let mut bpd_observed = 0.0;
    let mut observed_count = 0usize;
    for (&(_, e), &l) in items.iter().zip(logs) {
        nll -= l;
        if !e.is_empty() {
            bpd_observed -= l / (e.cardinality() as f64 * LN_2);
            observed_count += 1;
        }
    }
    let count = items.len() as f64;
    SuiteResult {
        nll: nll / count,
        bpd_observed: if observed_count == 0 {
            0.0
        } else {
            bpd_observed / observed_count as f64
        },
        bpd_all: nll / count / (n_vars as f64 * LN_2),
        queries: items.len(),
        mask_hash: mask_stream_hash(items.iter().map(|&(_, e)| e)),
    }
}

/// Mean of `-log p(x_e)` over every instance of `d` and `trials` masks
/// `e ~ M` each, with marginals evaluated along paths drawn from `w`.
pub fn marginal_nll_suite<M: ConditionalModel + ?Sized, R: Rng>(
    model: &M,
    d: &Dataset,
    m: &MaskDistribution,
    w: &dyn Decompose,
    trials: usize,
    rng: &mut R,
) -> Result<SuiteResult> {
    if trials == 0 {
        return Err(MacError::invalid("trials must be at least 1"));
    }
    if d.is_empty() {
        return Err(MacError::invalid("dataset is empty"));
    }
    if d.spec() != model.spec() || m.spec() != model.spec() {
        return Err(MacError::Validation(
            "model, dataset and mask distribution specs differ".into(),
        ));
    }
    let masks = draw_eval_masks(d.len(), m, trials, rng);
    let items: Vec<(&Instance, Mask)> = d
        .instances()
        .iter()
        .flat_map(|x| std::iter::repeat_n(x, trials))
        .zip(masks)
        .collect();
    score_marginals(model, &items, w, rng)
}
