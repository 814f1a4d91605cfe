//! Side-by-side tables of a test mask distribution and the node
//! distributions protocols induce on it.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::distribution::{
    entropy, format_probability, induced_edge_exact, induced_node_mc_parallel, induced_node_table,
    reweight_cardinality, MaskDistribution, ProbTable,
};
use crate::error::{MacError, Result};
use crate::lattice::Mask;
use crate::protocol::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistMode {
    Exact,
    MonteCarlo { samples: usize, seed: u64, workers: usize },
}

#[derive(Debug, Clone)]
pub struct DistColumn {
    pub name: String,
    pub table: ProbTable,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct DistReport {
    pub m_entropy: f64,
    m: MaskDistribution,
    /// Induced node tables per protocol, then their reweighted versions.
    pub columns: Vec<DistColumn>,
}

/// Builds columns `p_w` for each protocol followed by `cr_w`.
pub fn dist_report(m: &MaskDistribution, protocols: &[Protocol], mode: DistMode) -> Result<DistReport> {
    if protocols.is_empty() {
        return Err(MacError::invalid("at least one protocol is required"));
    }
    let spec = m.spec();
    let mut induced = Vec::with_capacity(protocols.len());
    for &w in protocols {
        let table = match mode {
            DistMode::Exact => {
                spec.require_exact()?;
                induced_node_table(&induced_edge_exact(m, &w)?)?
            }
            DistMode::MonteCarlo { samples, seed, workers } => induced_node_mc_parallel(m, &w, samples, seed, workers)?,
        };
        induced.push((w, table));
    }
    let mut columns: Vec<DistColumn> = Vec::new();
    for (w, table) in &induced {
        columns.push(DistColumn {
            name: format!("p_{w}"),
            entropy: entropy(table),
            table: table.clone(),
        });
    }
    for (w, table) in &induced {
        let cr = reweight_cardinality(table)?;
        columns.push(DistColumn {
            name: format!("cr_{w}"),
            entropy: entropy(&cr),
            table: cr,
        });
    }
    Ok(DistReport {
        m_entropy: m.entropy(),
        m: m.clone(),
        columns,
    })
}

impl DistReport {
    pub fn column(&self, name: &str) -> Option<&DistColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// Rows for every mask in the lattice (exact) or seen in any column,
    /// ordered by cardinality then bit pattern, followed by an entropy row.
    pub fn to_tsv(&self) -> String {
        let spec = self.m.spec();
        let n = spec.n_vars();
        let masks: Vec<Mask> = match spec.all_masks() {
            Ok(all) => all.collect(),
            Err(_) => {
                let seen: BTreeSet<(usize, u64)> = self
                    .columns
                    .iter()
                    .flat_map(|c| c.table.entries())
                    .map(|(e, _)| (e.cardinality(), e.bits()))
                    .collect();
                seen.into_iter().map(|(_, b)| Mask::from_bits(b)).collect()
            }
        };
        let mut sorted = masks;
        sorted.sort_by_key(|e| (e.cardinality(), e.bits()));

        let mut out = String::from("mask\tM");
        for c in &self.columns {
            out.push('\t');
            out.push_str(&c.name);
        }
        out.push('\n');
        for e in sorted {
            let _ = write!(out, "{}\t{}", e.to_bitstring(n), format_probability(self.m.pmf(e)));
            for c in &self.columns {
                let _ = write!(out, "\t{}", format_probability(c.table.get(e)));
            }
            out.push('\n');
        }
        let _ = write!(out, "# entropy_nats\t{:.9}", self.m_entropy);
        for c in &self.columns {
            let _ = write!(out, "\t{:.9}", c.entropy);
        }
        out.push('\n');
        out
    }
}
