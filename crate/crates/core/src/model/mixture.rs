//! Finite mixtures of product-of-categoricals distributions.
//!
//! Marginals and conditionals are closed form, so the mixture doubles as an
//! exact oracle for lattices too large for a dense joint table.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use super::oracle::{joint_size, JointTable};
use super::{check_target, log_sum_exp, CategoricalPrediction, ConditionalModel, Instance};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct ProductMixture {
    spec: LatticeSpec,
    weights: Vec<f64>,
    /// `[component][variable][symbol]`, flattened.
    probs: Vec<f64>,
}

impl ProductMixture {
    /// `components[c][v]` is the categorical of variable `v` in component `c`.
    pub fn new(spec: LatticeSpec, weights: Vec<f64>, components: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(MacError::invalid("mixture needs one weight per component"));
        }
        check_simplex(&weights, "mixture weights")?;
        let mut probs = Vec::with_capacity(components.len() * spec.n_vars() * spec.alphabet_size());
        for comp in &components {
            if comp.len() != spec.n_vars() {
                return Err(MacError::invalid("component must define every variable"));
            }
            for cat in comp {
                if cat.len() != spec.alphabet_size() {
                    return Err(MacError::invalid("categorical length must equal the alphabet size"));
                }
                check_simplex(cat, "categorical")?;
                probs.extend_from_slice(cat);
            }
        }
        Ok(Self { spec, weights, probs })
    }

    /// Independent variables: a single component.
    pub fn product(spec: LatticeSpec, marginals: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(spec, vec![1.0], vec![marginals])
    }

    /// Random mixture: flat Dirichlet weights and per-variable categoricals
    /// drawn from a symmetric Dirichlet with the given concentration.
    pub fn random<R: Rng + ?Sized>(
        spec: LatticeSpec,
        components: usize,
        concentration: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if components == 0 {
            return Err(MacError::invalid("mixture needs at least one component"));
        }
        let gamma = Gamma::new(concentration, 1.0).map_err(|e| MacError::invalid(format!("concentration: {e}")))?;
        let unit = Gamma::new(1.0, 1.0).expect("valid shape");
        let weights = normalize((0..components).map(|_| unit.sample(rng)).collect());
        let comps = (0..components)
            .map(|_| {
                (0..spec.n_vars())
                    .map(|_| {
                        normalize(
                            (0..spec.alphabet_size())
                                .map(|_| gamma.sample(rng).max(1e-300))
                                .collect(),
                        )
                    })
                    .collect()
            })
            .collect();
        Self::new(spec, weights, comps)
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// `[component][variable][symbol]` probabilities.
    pub fn components(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.weights.len())
            .map(|c| {
                (0..self.spec.n_vars())
                    .map(|v| self.categorical(c, v).to_vec())
                    .collect()
            })
            .collect()
    }

    fn categorical(&self, c: usize, v: usize) -> &[f64] {
        let k = self.spec.alphabet_size();
        let start = (c * self.spec.n_vars() + v) * k;
        &self.probs[start..start + k]
    }

    /// `log π_c + Σ_{v∈e} log θ_{c,v}(x_v)` for every component.
    fn component_log_terms(&self, x: &Instance, e: Mask) -> Vec<f64> {
        (0..self.weights.len())
            .map(|c| self.weights[c].ln() + e.iter().map(|v| self.categorical(c, v)[x.get(v)].ln()).sum::<f64>())
            .collect()
    }

    pub fn log_marginal(&self, x: &Instance, e: Mask) -> f64 {
        log_sum_exp(&self.component_log_terms(x, e))
    }

    /// Posterior responsibilities of the components given `x_e`.
    fn responsibilities(&self, x: &Instance, e: Mask) -> Result<Vec<f64>> {
        let terms = self.component_log_terms(x, e);
        let lse = log_sum_exp(&terms);
        if lse == f64::NEG_INFINITY {
            return Err(MacError::ZeroEvidence);
        }
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        let c = pick(&self.weights, rng);
        let values = (0..self.spec.n_vars())
            .map(|v| pick(self.categorical(c, v), rng) as u32)
            .collect();
        Instance::from_raw(values)
    }

    /// Dense joint table; fails when `K^N` exceeds the oracle capacity.
    pub fn to_joint_table(&self) -> Result<JointTable> {
        let size = joint_size(&self.spec)?;
        let k = self.spec.alphabet_size();
        let n = self.spec.n_vars();
        let mut probs = vec![0.0; size];
        for (c, &w) in self.weights.iter().enumerate() {
            // fill by increasing prefix length: entries [0, K^v) hold the product over variables < v
            let mut partial = vec![0.0; size];
            partial[0] = w;
            let mut len = 1;
            for v in 0..n {
                let cat = self.categorical(c, v);
                for s in (0..k).rev() {
                    for idx in 0..len {
                        partial[s * len + idx] = partial[idx] * cat[s];
                    }
                }
                len *= k;
            }
            for (p, q) in probs.iter_mut().zip(&partial) {
                *p += q;
            }
        }
        JointTable::from_weights(self.spec, probs)
    }
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(MacError::invalid(format!("{what} must be non-negative")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(MacError::invalid(format!("{what} sum to {total}")));
    }
    Ok(())
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let total: f64 = v.iter().sum();
    v.into_iter().map(|x| x / total).collect()
}

fn pick<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl ConditionalModel for ProductMixture {
    fn spec(&self) -> LatticeSpec {
        self.spec
    }

    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        let resp = self.responsibilities(x, e)?;
        let k = self.spec.alphabet_size();
        let entries = e
            .complement(self.spec.n_vars())
            .iter()
            .map(|i| {
                let mut probs = vec![0.0; k];
                for (c, r) in resp.iter().enumerate() {
                    for (p, q) in probs.iter_mut().zip(self.categorical(c, i)) {
                        *p += r * q;
                    }
                }
                (i, probs)
            })
            .collect();
        Ok(CategoricalPrediction::new(entries))
    }

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        check_target(j, e, &self.spec)?;
        let terms = self.component_log_terms(x, e);
        let lse = log_sum_exp(&terms);
        if lse == f64::NEG_INFINITY {
            return Err(MacError::ZeroEvidence);
        }
        let joint: Vec<f64> = terms
            .iter()
            .enumerate()
            .map(|(c, t)| t + self.categorical(c, j)[x.get(j)].ln())
            .collect();
        Ok(log_sum_exp(&joint) - lse)
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::model::oracle_from_joint;
    use crate::rng::seeded;

    #[test]
    fn point_mass_mixture_table() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let mix = ProductMixture::new(
            spec,
            vec![0.3, 0.7],
            vec![
                vec![vec![1.0, 0.0], vec![1.0, 0.0]],
                vec![vec![0.0, 1.0], vec![0.0, 1.0]],
            ],
        )
        .unwrap();
        let joint = mix.to_joint_table().unwrap();
        assert_abs_diff_eq!(joint.probs()[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(joint.probs()[3], 0.7, epsilon = 1e-15);
        assert_eq!(joint.probs()[1], 0.0);
        let x = Instance::new(vec![1, 1], &spec).unwrap();
        assert_abs_diff_eq!(mix.log_marginal(&x, Mask::singleton(0)).exp(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_matches_dense_oracle() {
        let spec = LatticeSpec::new(5, 3).unwrap();
        let mut rng = seeded(3);
        let mix = ProductMixture::random(spec, 3, 0.7, &mut rng).unwrap();
        let oracle = oracle_from_joint(mix.to_joint_table().unwrap());
        for _ in 0..100 {
            let x = mix.sample(&mut rng);
            let e = Mask::from_bits(rng.random_range(0..32));
            assert_abs_diff_eq!(mix.log_marginal(&x, e), oracle.log_marginal(&x, e), epsilon = 1e-10);
            for j in e.complement(5).iter() {
                assert_abs_diff_eq!(
                    mix.log_conditional(&x, j, e).unwrap(),
                    oracle.log_conditional(&x, j, e).unwrap(),
                    epsilon = 1e-10
                );
            }
            let a = mix.predict_all(&x, e).unwrap();
            let b = oracle.predict_all(&x, e).unwrap();
            for ((i, p), (i2, q)) in a.iter().zip(b.iter()) {
                assert_eq!(i, i2);
                for (u, v) in p.iter().zip(q) {
                    assert_abs_diff_eq!(u, v, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        assert!(ProductMixture::product(spec, vec![vec![0.5, 0.6], vec![0.5, 0.5]]).is_err());
        assert!(ProductMixture::product(spec, vec![vec![0.5, 0.5]]).is_err());
        assert!(ProductMixture::new(spec, vec![1.0], vec![]).is_err());
    }
}
