//! Masks (variable subsets) and the subset lattice they live on.
//!
//! Variables are indexed from 0. A [`Mask`] is a 64-bit set; its textual
//! form is a bitstring with index 0 as the rightmost character.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MacError, Result};

/// Largest lattice for which operations enumerate all `2^N` masks.
pub const EXACT_CUTOFF: usize = 20;

/// Widest lattice representable by a single-word [`Mask`].
pub const MAX_VARS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    n_vars: usize,
    alphabet_size: usize,
}

impl LatticeSpec {
    pub fn new(n_vars: usize, alphabet_size: usize) -> Result<Self> {
        if n_vars == 0 || n_vars > MAX_VARS {
            return Err(MacError::invalid(format!(
                "n_vars must be in [1, {MAX_VARS}], got {n_vars}"
            )));
        }
        if alphabet_size < 2 {
            return Err(MacError::invalid(format!(
                "alphabet_size must be at least 2, got {alphabet_size}"
            )));
        }
        Ok(Self { n_vars, alphabet_size })
    }

    /// Binary alphabet; convenient for lattice-only computations.
    pub fn binary(n_vars: usize) -> Result<Self> {
        Self::new(n_vars, 2)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn full_mask(&self) -> Mask {
        Mask::full(self.n_vars)
    }

    /// Number of masks on the lattice, `2^N`.
    pub fn lattice_size(&self) -> Result<usize> {
        self.require_exact()?;
        Ok(1usize << self.n_vars)
    }

    pub fn require_exact(&self) -> Result<()> {
        if self.n_vars > EXACT_CUTOFF {
            return Err(MacError::Capacity(format!(
                "exact lattice enumeration needs n_vars <= {EXACT_CUTOFF}, got {}",
                self.n_vars
            )));
        }
        Ok(())
    }

    /// Iterates all masks in ascending bit order. Requires `N <= EXACT_CUTOFF`.
    pub fn all_masks(&self) -> Result<impl Iterator<Item = Mask>> {
        let size = self.lattice_size()? as u64;
        Ok((0..size).map(Mask))
    }

    pub fn contains_mask(&self, e: Mask) -> bool {
        e.0 & !self.full_mask().0 == 0
    }
}

/// A subset of variable indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Mask(u64);

impl Mask {
    pub const EMPTY: Mask = Mask(0);

    pub fn from_bits(bits: u64) -> Self {
        Mask(bits)
    }

    pub fn full(n_vars: usize) -> Self {
        if n_vars >= 64 {
            Mask(u64::MAX)
        } else {
            Mask((1u64 << n_vars) - 1)
        }
    }

    pub fn singleton(index: usize) -> Self {
        Mask(1u64 << index)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn cardinality(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn contains(self, index: usize) -> bool {
        index < 64 && (self.0 >> index) & 1 == 1
    }

    pub fn with(self, index: usize) -> Mask {
        Mask(self.0 | (1u64 << index))
    }

    pub fn without(self, index: usize) -> Mask {
        Mask(self.0 & !(1u64 << index))
    }

    pub fn union(self, other: Mask) -> Mask {
        Mask(self.0 | other.0)
    }

    pub fn is_subset_of(self, other: Mask) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement within a lattice of `n_vars` variables.
    pub fn complement(self, n_vars: usize) -> Mask {
        Mask(!self.0 & Mask::full(n_vars).0)
    }

    /// Largest element under ascending index order.
    pub fn max_element(self) -> Result<usize> {
        if self.is_empty() {
            return Err(MacError::EmptyMask);
        }
        Ok(63 - self.0.leading_zeros() as usize)
    }

    pub fn iter(self) -> MaskIter {
        MaskIter(self.0)
    }

    pub fn sorted_elements(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// The `k` smallest-indexed elements of the mask.
    pub fn prefix(self, k: usize) -> Result<Mask> {
        if k > self.cardinality() {
            return Err(MacError::invalid(format!(
                "prefix length {k} exceeds cardinality {}",
                self.cardinality()
            )));
        }
        Ok(Mask(self.iter().take(k).fold(0, |acc, i| acc | (1u64 << i))))
    }

    pub fn to_bitstring(self, n_vars: usize) -> String {
        (0..n_vars)
            .rev()
            .map(|i| if self.contains(i) { '1' } else { '0' })
            .collect()
    }

    pub fn parse_bitstring(s: &str, spec: &LatticeSpec) -> Result<Mask> {
        if s.len() != spec.n_vars() {
            return Err(MacError::invalid(format!(
                "bitstring '{s}' has length {}, expected {}",
                s.len(),
                spec.n_vars()
            )));
        }
        let mut bits = 0u64;
        for (pos, ch) in s.chars().rev().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1u64 << pos,
                other => return Err(MacError::invalid(format!("invalid bitstring character '{other}'"))),
            }
        }
        Ok(Mask(bits))
    }
}

/// Ascending iterator over the set bits of a mask.
pub struct MaskIter(u64);

impl Iterator for MaskIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for MaskIter {}

impl fmt::Display for Mask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, i) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

pub fn make_mask(indices: &[usize], spec: &LatticeSpec) -> Result<Mask> {
    let mut bits = 0u64;
    for &i in indices {
        if i >= spec.n_vars() {
            return Err(MacError::invalid(format!(
                "index {i} out of range for {} variables",
                spec.n_vars()
            )));
        }
        if bits & (1u64 << i) != 0 {
            return Err(MacError::invalid(format!("duplicate index {i}")));
        }
        bits |= 1u64 << i;
    }
    Ok(Mask(bits))
}

/// A univariate conditional slot `p(x_target | x_source)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    target: usize,
    source: Mask,
}

impl Edge {
    pub fn new(target: usize, source: Mask) -> Result<Self> {
        if target >= MAX_VARS || source.contains(target) {
            return Err(MacError::invalid(format!(
                "edge target {target} must lie outside its source {source}"
            )));
        }
        Ok(Self { target, source })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn source(&self) -> Mask {
        self.source
    }

    /// The node this edge leads to: `source ∪ {target}`.
    pub fn destination(&self) -> Mask {
        self.source.with(self.target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec4() -> LatticeSpec {
        LatticeSpec::binary(4).unwrap()
    }

    #[test]
    fn make_mask_examples() {
        let spec = spec4();
        assert_eq!(make_mask(&[], &spec).unwrap(), Mask::EMPTY);
        let m = make_mask(&[0, 2], &spec).unwrap();
        assert_eq!(m.bits(), 0b0101);
        assert_eq!(m.to_bitstring(4), "0101");
        assert!(make_mask(&[4], &spec).is_err());
        assert!(make_mask(&[1, 1], &spec).is_err());
    }

    #[test]
    fn cardinality_and_max() {
        let spec = spec4();
        assert_eq!(Mask::EMPTY.cardinality(), 0);
        let m = make_mask(&[0, 2], &spec).unwrap();
        assert_eq!(m.cardinality(), 2);
        assert_eq!(spec.full_mask().cardinality(), 4);
        assert_eq!(m.max_element().unwrap(), 2);
        assert_eq!(Mask::singleton(3).max_element().unwrap(), 3);
        assert!(matches!(Mask::EMPTY.max_element(), Err(MacError::EmptyMask)));
    }

    #[test]
    fn sorted_and_prefix() {
        let spec = LatticeSpec::binary(6).unwrap();
        assert_eq!(make_mask(&[2, 0, 3], &spec).unwrap().sorted_elements(), vec![0, 2, 3]);
        assert!(Mask::EMPTY.sorted_elements().is_empty());
        assert_eq!(Mask::singleton(1).sorted_elements(), vec![1]);

        let e = make_mask(&[1, 4, 5], &spec).unwrap();
        assert_eq!(e.prefix(2).unwrap(), make_mask(&[1, 4], &spec).unwrap());
        assert_eq!(e.prefix(0).unwrap(), Mask::EMPTY);
        assert_eq!(e.prefix(3).unwrap(), e);
        assert!(e.prefix(4).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LatticeSpec::new(0, 2).is_err());
        assert!(LatticeSpec::new(65, 2).is_err());
        assert!(LatticeSpec::new(3, 1).is_err());
        assert!(LatticeSpec::new(64, 2).is_ok());
        assert!(LatticeSpec::binary(21).unwrap().require_exact().is_err());
        assert!(LatticeSpec::binary(20).unwrap().require_exact().is_ok());
    }

    #[test]
    fn bitstring_parse() {
        let spec = spec4();
        let m = Mask::parse_bitstring("0101", &spec).unwrap();
        assert_eq!(m, make_mask(&[0, 2], &spec).unwrap());
        assert!(Mask::parse_bitstring("010", &spec).is_err());
        assert!(Mask::parse_bitstring("01x1", &spec).is_err());
    }

    #[test]
    fn edge_rejects_target_in_source() {
        assert!(Edge::new(1, Mask::singleton(1)).is_err());
        let e = Edge::new(1, Mask::singleton(0)).unwrap();
        assert_eq!(e.destination().bits(), 0b11);
    }

    proptest! {
        #[test]
        fn lattice_invariants(bits in 0u64..(1 << 12)) {
            let spec = LatticeSpec::binary(12).unwrap();
            let e = Mask::from_bits(bits);
            let sorted = e.sorted_elements();
            prop_assert_eq!(sorted.len(), e.cardinality());
            if !e.is_empty() {
                prop_assert_eq!(Some(&e.max_element().unwrap()), sorted.last());
            }
            for k in 0..=e.cardinality() {
                let p = e.prefix(k).unwrap();
                prop_assert_eq!(p.cardinality(), k);
                prop_assert!(p.is_subset_of(e));
                if k < e.cardinality() {
                    prop_assert!(p.is_subset_of(e.prefix(k + 1).unwrap()));
                }
            }
            prop_assert_eq!(make_mask(&sorted, &spec).unwrap(), e);
            prop_assert_eq!(Mask::parse_bitstring(&e.to_bitstring(12), &spec).unwrap(), e);
        }
    }
}
