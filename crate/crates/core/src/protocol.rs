//! Decomposition protocols: for each non-empty mask, a distribution over
//! which element to peel off next. Repeated application walks a path from a
//! mask down to the empty set.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{MacError, Result};
use crate::lattice::{Edge, LatticeSpec, Mask};

/// Tolerance for the normalization self-check of user protocols.
const NORMALIZATION_TOL: f64 = 1e-9;

pub trait Decompose: Send + Sync {
    fn name(&self) -> &str;

    /// Removal distribution `w_e` as `(element, weight)` pairs; `e` must be non-empty.
    fn weights(&self, e: Mask) -> Result<Vec<(usize, f64)>>;

    fn choose(&self, e: Mask, rng: &mut dyn RngCore) -> Result<usize> {
        let weights = self.weights(e)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = None;
        for &(j, w) in &weights {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            last = Some(j);
            if u < acc {
                return Ok(j);
            }
        }
        last.ok_or_else(|| MacError::DegenerateDistribution(format!("protocol {} has no mass on {e}", self.name())))
    }
}

/// The two shipped protocols.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Uniform removal, `w_e(j) = 1/|e|`.
    Rnd,
    /// Always remove the largest element.
    Mac,
}

impl Protocol {
    pub fn id(&self) -> &'static str {
        match self {
            Protocol::Rnd => "rnd",
            Protocol::Mac => "mac",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Protocol {
    type Err = MacError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rnd" => Ok(Protocol::Rnd),
            "mac" => Ok(Protocol::Mac),
            other => Err(MacError::invalid(format!(
                "unknown protocol '{other}' (expected 'mac' or 'rnd')"
            ))),
        }
    }
}

impl Decompose for Protocol {
    fn name(&self) -> &str {
        self.id()
    }

    fn weights(&self, e: Mask) -> Result<Vec<(usize, f64)>> {
        if e.is_empty() {
            return Err(MacError::EmptyMask);
        }
        Ok(match self {
            Protocol::Rnd => {
                let w = 1.0 / e.cardinality() as f64;
                e.iter().map(|j| (j, w)).collect()
            }
            Protocol::Mac => vec![(e.max_element()?, 1.0)],
        })
    }

    fn choose(&self, e: Mask, rng: &mut dyn RngCore) -> Result<usize> {
        match self {
            Protocol::Mac => e.max_element(),
            Protocol::Rnd => {
                if e.is_empty() {
                    return Err(MacError::EmptyMask);
                }
                let k = rng.random_range(0..e.cardinality());
                Ok(e.iter().nth(k).expect("k < |e|"))
            }
        }
    }
}

type WeightFn = dyn Fn(Mask) -> Vec<(usize, f64)> + Send + Sync;

/// A user-supplied protocol, normalization-checked over the whole lattice on construction.
pub struct CustomProtocol {
    name: String,
    rule: Box<WeightFn>,
}

impl CustomProtocol {
    pub fn new<F>(name: impl Into<String>, spec: &LatticeSpec, rule: F) -> Result<Self>
    where
        F: Fn(Mask) -> Vec<(usize, f64)> + Send + Sync + 'static,
    {
        let name = name.into();
        for e in spec.all_masks()?.filter(|e| !e.is_empty()) {
            let weights = rule(e);
            let mut total = 0.0;
            for &(j, w) in &weights {
                if !e.contains(j) {
                    return Err(MacError::Validation(format!(
                        "protocol {name}: element {j} not in mask {e}"
                    )));
                }
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(MacError::Validation(format!(
                        "protocol {name}: invalid weight {w} on mask {e}"
                    )));
                }
                total += w;
            }
            if (total - 1.0).abs() > NORMALIZATION_TOL {
                return Err(MacError::Validation(format!(
                    "protocol {name}: weights on {e} sum to {total}"
                )));
            }
        }
        Ok(Self {
            name,
            rule: Box::new(rule),
        })
    }
}

impl Decompose for CustomProtocol {
    fn name(&self) -> &str {
        &self.name
    }

    fn weights(&self, e: Mask) -> Result<Vec<(usize, f64)>> {
        if e.is_empty() {
            return Err(MacError::EmptyMask);
        }
        Ok((self.rule)(e))
    }
}

/// A walk from `origin` to the empty mask. Each edge `(i_t, e_t)` records the
/// removed element and the mask left after removing it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    origin: Mask,
    edges: Vec<Edge>,
}

impl Path {
    pub fn origin(&self) -> Mask {
        self.origin
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn sources(&self) -> Vec<Mask> {
        self.edges.iter().map(Edge::source).collect()
    }

    /// Targets in reverse traversal order: a generation order whose first
    /// `|origin|` elements are exactly `origin`.
    pub fn ordering(&self) -> Vec<usize> {
        self.edges.iter().rev().map(Edge::target).collect()
    }
}

pub fn simulate_path(w: &dyn Decompose, e: Mask, rng: &mut dyn RngCore) -> Result<Path> {
    let mut edges = Vec::with_capacity(e.cardinality());
    let mut current = e;
    while !current.is_empty() {
        let j = w.choose(current, rng)?;
        if !current.contains(j) {
            return Err(MacError::Validation(format!(
                "protocol {} chose {j} outside {current}",
                w.name()
            )));
        }
        current = current.without(j);
        edges.push(Edge::new(j, current)?);
    }
    Ok(Path { origin: e, edges })
}

pub fn path_sources(p: &Path) -> Vec<Mask> {
    p.sources()
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::lattice::make_mask;
    use crate::rng::seeded;

    fn m(idx: &[usize]) -> Mask {
        make_mask(idx, &LatticeSpec::binary(12).unwrap()).unwrap()
    }

    #[test]
    fn mac_choice_is_max() {
        let mut rng = seeded(0);
        assert_eq!(Protocol::Mac.choose(m(&[0, 2, 3]), &mut rng).unwrap(), 3);
        assert!(matches!(
            Protocol::Mac.choose(Mask::EMPTY, &mut rng),
            Err(MacError::EmptyMask)
        ));
        assert!(matches!(
            Protocol::Rnd.choose(Mask::EMPTY, &mut rng),
            Err(MacError::EmptyMask)
        ));
    }

    #[test]
    fn rnd_choice_is_uniform() {
        let mut rng = seeded(11);
        let draws = 100_000;
        let zeros = (0..draws)
            .filter(|_| Protocol::Rnd.choose(m(&[0, 2]), &mut rng).unwrap() == 0)
            .count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn mac_path_examples() {
        let mut rng = seeded(0);
        let p = simulate_path(&Protocol::Mac, m(&[0, 2, 3]), &mut rng).unwrap();
        let got: Vec<(usize, Mask)> = p.edges().iter().map(|e| (e.target(), e.source())).collect();
        assert_eq!(got, vec![(3, m(&[0, 2])), (2, m(&[0])), (0, Mask::EMPTY)]);
        assert_eq!(path_sources(&p), vec![m(&[0, 2]), m(&[0]), Mask::EMPTY]);

        let empty = simulate_path(&Protocol::Rnd, Mask::EMPTY, &mut rng).unwrap();
        assert!(empty.is_empty());
        assert!(path_sources(&empty).is_empty());

        let single = simulate_path(&Protocol::Mac, m(&[1]), &mut rng).unwrap();
        assert_eq!(single.edges(), &[Edge::new(1, Mask::EMPTY).unwrap()]);
        let five = simulate_path(&Protocol::Mac, m(&[5]), &mut rng).unwrap();
        assert_eq!(path_sources(&five), vec![Mask::EMPTY]);
    }

    #[test]
    fn mac_sources_are_descending_prefixes_exhaustive() {
        let spec = LatticeSpec::binary(12).unwrap();
        let mut rng = seeded(0);
        for e in spec.all_masks().unwrap() {
            let p = simulate_path(&Protocol::Mac, e, &mut rng).unwrap();
            let expected: Vec<Mask> = (0..e.cardinality()).rev().map(|k| e.prefix(k).unwrap()).collect();
            assert_eq!(p.sources(), expected);
        }
    }

    #[test]
    fn orderings_are_compatible_with_origin() {
        let spec = LatticeSpec::binary(8).unwrap();
        let mut rng = seeded(5);
        for e in spec.all_masks().unwrap() {
            for w in [Protocol::Mac, Protocol::Rnd] {
                let p = simulate_path(&w, e, &mut rng).unwrap();
                let order = p.ordering();
                assert_eq!(order.len(), e.cardinality());
                assert_eq!(make_mask(&order, &spec).unwrap(), e);
                // every prefix of the order is the destination of the matching edge
                for (t, edge) in p.edges().iter().rev().enumerate() {
                    assert_eq!(make_mask(&order[..t], &spec).unwrap(), edge.source());
                }
            }
        }
    }

    #[test]
    fn rnd_paths_are_uniform_over_orders() {
        let mut rng = seeded(99);
        let e = m(&[1, 4, 7]);
        let draws = 100_000;
        let mut counts: HashMap<Vec<usize>, usize> = HashMap::new();
        for _ in 0..draws {
            *counts
                .entry(simulate_path(&Protocol::Rnd, e, &mut rng).unwrap().ordering())
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (order, c) in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "{order:?}: {f}");
        }
    }

    #[test]
    fn custom_protocol_self_check() {
        let spec = LatticeSpec::binary(4).unwrap();
        // remove the smallest element
        let min_rule = CustomProtocol::new("min", &spec, |e: Mask| vec![(e.iter().next().unwrap(), 1.0)]).unwrap();
        let mut rng = seeded(0);
        let p = simulate_path(&min_rule, Mask::from_bits(0b1011), &mut rng).unwrap();
        assert_eq!(p.ordering(), vec![3, 1, 0]);

        let bad = CustomProtocol::new("half", &spec, |e: Mask| vec![(e.iter().next().unwrap(), 0.5)]);
        assert!(matches!(bad, Err(MacError::Validation(_))));
        let outside = CustomProtocol::new("outside", &spec, |e: Mask| {
            vec![(e.complement(4).iter().next().unwrap_or(0), 1.0)]
        });
        assert!(outside.is_err());
    }

    #[test]
    fn protocol_ids_round_trip() {
        for p in [Protocol::Mac, Protocol::Rnd] {
            assert_eq!(p.id().parse::<Protocol>().unwrap(), p);
        }
        assert!("lifo".parse::<Protocol>().is_err());
    }
}
