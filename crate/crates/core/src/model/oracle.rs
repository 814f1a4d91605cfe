//! Exact conditionals from a dense joint probability table.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{check_target, CategoricalPrediction, ConditionalModel, Instance};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};

/// Largest joint table the oracle will hold, `K^N <= 2^24`.
pub const MAX_JOINT_ENTRIES: usize = 1 << 24;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Dense table of `K^N` probabilities. Entry index is `Σ_v x_v·K^v`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    spec: LatticeSpec,
    probs: Vec<f64>,
}

pub(crate) fn joint_size(spec: &LatticeSpec) -> Result<usize> {
    let k = spec.alphabet_size();
    let mut size = 1usize;
    for _ in 0..spec.n_vars() {
        size = size.checked_mul(k).filter(|&s| s <= MAX_JOINT_ENTRIES).ok_or_else(|| {
            MacError::Capacity(format!("joint table of {}^{} entries exceeds 2^24", k, spec.n_vars()))
        })?;
    }
    Ok(size)
}

impl JointTable {
    pub fn new(spec: LatticeSpec, probs: Vec<f64>) -> Result<Self> {
        let size = joint_size(&spec)?;
        if probs.len() != size {
            return Err(MacError::invalid(format!(
                "joint table needs {size} entries, got {}",
                probs.len()
            )));
        }
        if let Some(bad) = probs.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
            return Err(MacError::invalid(format!("invalid joint probability {bad}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(MacError::invalid(format!("joint table sums to {total}")));
        }
        Ok(Self { spec, probs })
    }

    /// Normalizes non-negative weights into a table.
    pub fn from_weights(spec: LatticeSpec, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(MacError::DegenerateDistribution("joint weights have no mass".into()));
        }
        Self::new(spec, weights.into_iter().map(|w| w / total).collect())
    }

    pub fn uniform(spec: LatticeSpec) -> Result<Self> {
        let size = joint_size(&spec)?;
        Self::new(spec, vec![1.0 / size as f64; size])
    }

    pub fn point_mass(spec: LatticeSpec, x: &Instance) -> Result<Self> {
        x.validate(&spec)?;
        let mut probs = vec![0.0; joint_size(&spec)?];
        let t = Self {
            spec,
            probs: Vec::new(),
        };
        probs[t.index_of(x)] = 1.0;
        Self::new(spec, probs)
    }

    /// A table drawn from the flat Dirichlet over the simplex.
    pub fn random<R: Rng + ?Sized>(spec: LatticeSpec, rng: &mut R) -> Result<Self> {
        let size = joint_size(&spec)?;
        let weights = (0..size).map(|_| Exp1.sample(rng)).collect();
        Self::from_weights(spec, weights)
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn index_of(&self, x: &Instance) -> usize {
        let k = self.spec.alphabet_size();
        x.values().iter().rev().fold(0, |acc, &v| acc * k + v as usize)
    }

    pub fn instance_at(&self, mut index: usize) -> Instance {
        let k = self.spec.alphabet_size();
        let values = (0..self.spec.n_vars())
            .map(|_| {
                let v = (index % k) as u32;
                index /= k;
                v
            })
            .collect();
        Instance::from_raw(values)
    }

    pub fn prob(&self, x: &Instance) -> f64 {
        self.probs[self.index_of(x)]
    }

    /// `p(x_e)`, summing over every completion of the variables outside `e`.
    pub fn marginal(&self, x: &Instance, e: Mask) -> f64 {
        let k = self.spec.alphabet_size();
        let n = self.spec.n_vars();
        let strides: Vec<usize> = (0..n)
            .scan(1usize, |s, _| {
                let cur = *s;
                *s *= k;
                Some(cur)
            })
            .collect();
        let base: usize = e.iter().map(|v| x.get(v) * strides[v]).sum();
        let missing: Vec<usize> = e.complement(n).iter().collect();
        let mut digits = vec![0usize; missing.len()];
        let mut total = 0.0;
        let mut offset = 0usize;
        loop {
            total += self.probs[base + offset];
            // odometer over the missing variables
            let mut pos = 0;
            loop {
                if pos == missing.len() {
                    return total;
                }
                digits[pos] += 1;
                offset += strides[missing[pos]];
                if digits[pos] < k {
                    break;
                }
                offset -= k * strides[missing[pos]];
                digits[pos] = 0;
                pos += 1;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            acc += p;
            last = i;
            if u < acc {
                return self.instance_at(i);
            }
        }
        self.instance_at(last)
    }
}

/// Exact tabular model answering every conditional by brute-force summation.
#[derive(Debug, Clone)]
pub struct OracleModel {
    joint: JointTable,
}

pub fn oracle_from_joint(joint: JointTable) -> OracleModel {
    OracleModel { joint }
}

impl OracleModel {
    pub fn joint(&self) -> &JointTable {
        &self.joint
    }

    pub fn log_marginal(&self, x: &Instance, e: Mask) -> f64 {
        self.joint.marginal(x, e).ln()
    }
}

impl ConditionalModel for OracleModel {
    fn spec(&self) -> LatticeSpec {
        self.joint.spec
    }

    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        let spec = self.joint.spec;
        let evidence = self.joint.marginal(x, e);
        if evidence <= 0.0 {
            return Err(MacError::ZeroEvidence);
        }
        let entries = e
            .complement(spec.n_vars())
            .iter()
            .map(|i| {
                let mut probs: Vec<f64> = (0..spec.alphabet_size())
                    .map(|s| self.joint.marginal(&x.with_value(i, s), e.with(i)) / evidence)
                    .collect();
                let total: f64 = probs.iter().sum();
                probs.iter_mut().for_each(|p| *p /= total);
                (i, probs)
            })
            .collect();
        Ok(CategoricalPrediction::new(entries))
    }

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        check_target(j, e, &self.joint.spec)?;
        let evidence = self.joint.marginal(x, e);
        if evidence <= 0.0 {
            return Err(MacError::ZeroEvidence);
        }
        Ok(self.joint.marginal(x, e.with(j)).ln() - evidence.ln())
    }
}
