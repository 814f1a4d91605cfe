//! Mask and edge distributions on the subset lattice.
//!
//! Test mask distributions, the edge/node distributions a protocol induces
//! on them (exact lattice DP and Monte-Carlo), cardinality reweighting, and
//! the batch samplers used for training.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::thread;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, SliceRandom};
use rand::{Rng, RngCore};

use crate::error::{MacError, Result};
use crate::lattice::{Edge, LatticeSpec, Mask, EXACT_CUTOFF};
use crate::protocol::{simulate_path, Decompose, Protocol};
use crate::rng::substream;

/// Normalization tolerance for explicit tables.
pub const TABLE_TOL: f64 = 1e-9;

/// Oversampling factor for cardinality-reweighted batches.
pub const DEFAULT_OUTER_FACTOR: usize = 100;

/// Number of fixed shards used by [`induced_node_mc_parallel`].
pub const MC_SHARDS: u64 = 16;

// ---------------------------------------------------------------------------
// Probability tables over masks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    Dense(Vec<f64>),
    Sparse(HashMap<Mask, f64>),
}

/// Probabilities indexed by mask. Dense up to [`EXACT_CUTOFF`] variables,
/// sparse beyond.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    spec: LatticeSpec,
    storage: Storage,
}

impl ProbTable {
    pub fn zeros(spec: LatticeSpec) -> Self {
        let storage = if spec.n_vars() <= EXACT_CUTOFF {
            Storage::Dense(vec![0.0; 1 << spec.n_vars()])
        } else {
            Storage::Sparse(HashMap::new())
        };
        Self { spec, storage }
    }

    /// Builds a table from `2^N` values indexed by mask bits.
    pub fn from_dense(spec: LatticeSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.lattice_size()? {
            return Err(MacError::invalid(format!(
                "dense table needs {} entries, got {}",
                spec.lattice_size()?,
                values.len()
            )));
        }
        check_non_negative(&values)?;
        Ok(Self {
            spec,
            storage: Storage::Dense(values),
        })
    }

    pub fn from_entries(spec: LatticeSpec, entries: impl IntoIterator<Item = (Mask, f64)>) -> Result<Self> {
        let mut t = Self::zeros(spec);
        for (e, p) in entries {
            if !spec.contains_mask(e) {
                return Err(MacError::invalid(format!(
                    "mask {e} outside lattice of {} variables",
                    spec.n_vars()
                )));
            }
            if !(p >= 0.0) || !p.is_finite() {
                return Err(MacError::invalid(format!("invalid probability {p} for {e}")));
            }
            t.add(e, p);
        }
        Ok(t)
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn get(&self, e: Mask) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v.get(e.bits() as usize).copied().unwrap_or(0.0),
            Storage::Sparse(m) => m.get(&e).copied().unwrap_or(0.0),
        }
    }

    fn add(&mut self, e: Mask, p: f64) {
        match &mut self.storage {
            Storage::Dense(v) => v[e.bits() as usize] += p,
            Storage::Sparse(m) => *m.entry(e).or_insert(0.0) += p,
        }
    }

    /// Non-zero entries in ascending mask order.
    pub fn entries(&self) -> Vec<(Mask, f64)> {
        match &self.storage {
            Storage::Dense(v) => v
                .iter()
                .enumerate()
                .filter(|(_, &p)| p != 0.0)
                .map(|(i, &p)| (Mask::from_bits(i as u64), p))
                .collect(),
            Storage::Sparse(m) => {
                let mut out: Vec<(Mask, f64)> = m.iter().filter(|(_, &p)| p != 0.0).map(|(&e, &p)| (e, p)).collect();
                out.sort_by_key(|&(e, _)| e);
                out
            }
        }
    }

    pub fn total(&self) -> f64 {
        match &self.storage {
            Storage::Dense(v) => v.iter().sum(),
            Storage::Sparse(m) => {
                let mut vals: Vec<(Mask, f64)> = m.iter().map(|(&e, &p)| (e, p)).collect();
                vals.sort_by_key(|&(e, _)| e);
                vals.iter().map(|&(_, p)| p).sum()
            }
        }
    }

    pub fn normalized(&self) -> Result<Self> {
        let total = self.total();
        if !(total > 0.0) {
            return Err(MacError::DegenerateDistribution("table has no mass".into()));
        }
        let mut out = self.clone();
        match &mut out.storage {
            Storage::Dense(v) => v.iter_mut().for_each(|p| *p /= total),
            Storage::Sparse(m) => m.values_mut().for_each(|p| *p /= total),
        }
        Ok(out)
    }

    /// Sum of probabilities per cardinality, index `c` for `|e| = c`.
    pub fn cardinality_marginal(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.spec.n_vars() + 1];
        for (e, p) in self.entries() {
            out[e.cardinality()] += p;
        }
        out
    }

    /// TSV with columns `mask`, `probability`; descending probability, ties by bitstring.
    pub fn to_tsv(&self) -> String {
        let n = self.spec.n_vars();
        let mut rows: Vec<(String, f64)> = self
            .entries()
            .into_iter()
            .map(|(e, p)| (e.to_bitstring(n), p))
            .collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut out = String::from("mask\tprobability\n");
        for (mask, p) in rows {
            let _ = writeln!(out, "{mask}\t{}", format_probability(p));
        }
        out
    }
}

fn check_non_negative(values: &[f64]) -> Result<()> {
    if let Some(bad) = values.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(MacError::invalid(format!("invalid probability {bad}")));
    }
    Ok(())
}

/// Decimal rendering with 9 significant digits.
pub fn format_probability(p: f64) -> String {
    if p == 0.0 {
        return "0".to_string();
    }
    let magnitude = p.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    format!("{p:.decimals$}")
}

// ---------------------------------------------------------------------------
// Edge tables
// ---------------------------------------------------------------------------

/// Expected traversal counts over edges `(i, e)`, dense over the lattice.
///
/// Probabilities are counts over the total count. When built from a test
/// distribution the total count is `E_{e'~M} |e'|`, the path-length constant.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTable {
    spec: LatticeSpec,
    counts: Vec<f64>,
    total: f64,
}

impl EdgeTable {
    fn empty(spec: LatticeSpec) -> Result<Self> {
        let size = spec.lattice_size()?;
        Ok(Self {
            spec,
            counts: vec![0.0; size * spec.n_vars()],
            total: 0.0,
        })
    }

    fn slot(&self, edge: Edge) -> usize {
        edge.source().bits() as usize * self.spec.n_vars() + edge.target()
    }

    pub fn from_entries(spec: LatticeSpec, entries: impl IntoIterator<Item = (Edge, f64)>) -> Result<Self> {
        let mut t = Self::empty(spec)?;
        for (edge, c) in entries {
            if edge.target() >= spec.n_vars() || !spec.contains_mask(edge.source()) {
                return Err(MacError::invalid("edge outside lattice"));
            }
            if !(c >= 0.0) || !c.is_finite() {
                return Err(MacError::invalid(format!("invalid edge weight {c}")));
            }
            let slot = t.slot(edge);
            t.counts[slot] += c;
        }
        t.total = t.counts.iter().sum();
        Ok(t)
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn expected_count(&self, edge: Edge) -> f64 {
        if edge.target() >= self.spec.n_vars() || !self.spec.contains_mask(edge.source()) {
            return 0.0;
        }
        self.counts[self.slot(edge)]
    }

    pub fn probability(&self, edge: Edge) -> f64 {
        if self.total > 0.0 {
            self.expected_count(edge) / self.total
        } else {
            0.0
        }
    }

    /// Total expected count; `E|e'|` for tables induced from a test distribution.
    pub fn total_count(&self) -> f64 {
        self.total
    }

    /// Non-zero edges with their normalized probabilities, ordered by (source, target).
    pub fn entries(&self) -> Vec<(Edge, f64)> {
        let n = self.spec.n_vars();
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(slot, &c)| {
                let edge = Edge::new(slot % n, Mask::from_bits((slot / n) as u64)).expect("stored edges are valid");
                (edge, c / self.total)
            })
            .collect()
    }

    /// TSV with columns `mask` (source), `target`, `probability`.
    pub fn to_tsv(&self) -> String {
        let n = self.spec.n_vars();
        let mut rows: Vec<(String, usize, f64)> = self
            .entries()
            .into_iter()
            .map(|(edge, p)| (edge.source().to_bitstring(n), edge.target(), p))
            .collect();
        rows.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut out = String::from("mask\ttarget\tprobability\n");
        for (mask, target, p) in rows {
            let _ = writeln!(out, "{mask}\t{target}\t{}", format_probability(p));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Test mask distributions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
enum Kind {
    /// Uniform cardinality in `[min_cardinality, N]`, then a uniform mask of that size.
    CardMask { min_cardinality: usize },
    Table {
        table: ProbTable,
        cdf: Vec<(Mask, f64)>,
        biased_cdf: Vec<(Mask, f64)>,
    },
}

#[derive(Debug, Clone, Copy)]
enum LazyQuery {
    /// A uniform subset of the given cardinality, not yet drawn.
    Uniform(usize),
    Fixed(Mask),
}

/// A test mask distribution `M`.
#[derive(Debug, Clone)]
pub struct MaskDistribution {
    spec: LatticeSpec,
    kind: Kind,
}

impl MaskDistribution {
    /// `M_card-mask` with cardinality support `{1..N}`.
    pub fn card_mask(spec: LatticeSpec) -> Self {
        Self {
            spec,
            kind: Kind::CardMask { min_cardinality: 1 },
        }
    }

    /// `M_card-mask` over `{min_cardinality..N}`; `0` admits the empty mask.
    pub fn card_mask_from(spec: LatticeSpec, min_cardinality: usize) -> Result<Self> {
        if min_cardinality > spec.n_vars() {
            return Err(MacError::invalid("minimum cardinality exceeds n_vars"));
        }
        Ok(Self {
            spec,
            kind: Kind::CardMask { min_cardinality },
        })
    }

    pub fn from_table(table: ProbTable) -> Result<Self> {
        let total = table.total();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MacError::invalid(format!("mask table sums to {total}, expected 1")));
        }
        let entries = table.entries();
        let cdf = cumulative(entries.iter().map(|&(e, p)| (e, p)));
        let biased_cdf = cumulative(entries.iter().map(|&(e, p)| (e, p * e.cardinality() as f64)));
        Ok(Self {
            spec: table.spec(),
            kind: Kind::Table { table, cdf, biased_cdf },
        })
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn pmf(&self, e: Mask) -> f64 {
        match &self.kind {
            Kind::CardMask { min_cardinality } => {
                let n = self.spec.n_vars();
                let c = e.cardinality();
                if c < *min_cardinality || !self.spec.contains_mask(e) {
                    0.0
                } else {
                    1.0 / (n - min_cardinality + 1) as f64 / binomial(n, c)
                }
            }
            Kind::Table { table, .. } => table.get(e),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mask {
        match &self.kind {
            Kind::CardMask { min_cardinality } => {
                let c = rng.random_range(*min_cardinality..=self.spec.n_vars());
                random_subset(self.spec.n_vars(), c, rng)
            }
            Kind::Table { cdf, .. } => sample_cdf(cdf, rng),
        }
    }

    /// Draws `e` with probability proportional to `M(e)·|e|`: the law of the
    /// query whose path contains a uniformly chosen traversal.
    pub fn sample_size_biased<R: Rng + ?Sized>(&self, rng: &mut R) -> Mask {
        let (query, _) = self.size_biased_query(rng);
        self.materialize(query, rng)
    }

    /// Size-biased draw that defers building the mask when its cardinality
    /// alone determines the rest of the law.
    fn size_biased_query<R: Rng + ?Sized>(&self, rng: &mut R) -> (LazyQuery, usize) {
        match &self.kind {
            Kind::CardMask { min_cardinality } => {
                let n = self.spec.n_vars();
                let lo = (*min_cardinality).max(1);
                let total: usize = (lo..=n).sum();
                let mut u = rng.random_range(0..total);
                let mut c = lo;
                while u >= c {
                    u -= c;
                    c += 1;
                }
                (LazyQuery::Uniform(c), c)
            }
            Kind::Table { biased_cdf, .. } => {
                let e = sample_cdf(biased_cdf, rng);
                (LazyQuery::Fixed(e), e.cardinality())
            }
        }
    }

    fn materialize<R: Rng + ?Sized>(&self, query: LazyQuery, rng: &mut R) -> Mask {
        match query {
            LazyQuery::Uniform(c) => random_subset(self.spec.n_vars(), c, rng),
            LazyQuery::Fixed(e) => e,
        }
    }

    /// Shannon entropy of `M` in nats, in closed form for `M_card-mask`.
    pub fn entropy(&self) -> f64 {
        match &self.kind {
            Kind::CardMask { min_cardinality } => {
                let n = self.spec.n_vars();
                let levels = (n - min_cardinality + 1) as f64;
                (*min_cardinality..=n)
                    .map(|c| (levels.ln() + binomial(n, c).ln()) / levels)
                    .sum()
            }
            Kind::Table { table, .. } => entropy(table),
        }
    }

    /// `E_{e~M} |e|`.
    pub fn mean_cardinality(&self) -> f64 {
        match &self.kind {
            Kind::CardMask { min_cardinality } => (*min_cardinality + self.spec.n_vars()) as f64 / 2.0,
            Kind::Table { table, .. } => table.entries().iter().map(|&(e, p)| p * e.cardinality() as f64).sum(),
        }
    }

    /// The distribution as an explicit table (requires exact enumeration).
    pub fn to_table(&self) -> Result<ProbTable> {
        match &self.kind {
            Kind::Table { table, .. } => Ok(table.clone()),
            Kind::CardMask { .. } => {
                let values = self.spec.all_masks()?.map(|e| self.pmf(e)).collect();
                ProbTable::from_dense(self.spec, values)
            }
        }
    }
}

fn cumulative(entries: impl Iterator<Item = (Mask, f64)>) -> Vec<(Mask, f64)> {
    let mut acc = 0.0;
    let mut out: Vec<(Mask, f64)> = entries
        .filter(|&(_, w)| w > 0.0)
        .map(|(e, w)| {
            acc += w;
            (e, acc)
        })
        .collect();
    for entry in &mut out {
        entry.1 /= acc;
    }
    out
}

fn sample_cdf<R: Rng + ?Sized>(cdf: &[(Mask, f64)], rng: &mut R) -> Mask {
    let u: f64 = rng.random();
    let i = cdf.partition_point(|&(_, c)| c <= u).min(cdf.len().saturating_sub(1));
    cdf.get(i).map(|&(e, _)| e).unwrap_or(Mask::EMPTY)
}

/// Uniform mask of cardinality `c` over `n` variables.
fn random_subset<R: Rng + ?Sized>(n: usize, c: usize, rng: &mut R) -> Mask {
    index::sample(rng, n, c).into_iter().fold(Mask::EMPTY, |m, i| m.with(i))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn pmf_card_mask(e: Mask, spec: &LatticeSpec) -> f64 {
    MaskDistribution::card_mask(*spec).pmf(e)
}

/// I.i.d. draws from `M_card-mask`: a uniform permutation of the variables
/// with a uniform cut point `t ∈ [1, N]`; the first `t` ranks form the mask.
pub fn sample_test_masks<R: Rng + ?Sized>(batch: usize, spec: &LatticeSpec, rng: &mut R) -> Vec<Mask> {
    let n = spec.n_vars();
    let mut perm: Vec<usize> = (0..n).collect();
    (0..batch)
        .map(|_| {
            perm.shuffle(rng);
            let t = rng.random_range(1..=n);
            perm[..t].iter().fold(Mask::EMPTY, |m, &i| m.with(i))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Induced distributions
// ---------------------------------------------------------------------------

/// Exact induced edge distribution: push each node's inflow mass along its
/// protocol edges, visiting masks in descending bit order so every superset
/// is settled before its subsets.
pub fn induced_edge_exact(m: &MaskDistribution, w: &dyn Decompose) -> Result<EdgeTable> {
    let spec = m.spec();
    let mut table = EdgeTable::empty(spec)?;
    let n = spec.n_vars();
    let mut inflow: Vec<f64> = spec.all_masks()?.map(|e| m.pmf(e)).collect();
    for bits in (1..inflow.len()).rev() {
        let mass = inflow[bits];
        if mass == 0.0 {
            continue;
        }
        let e = Mask::from_bits(bits as u64);
        for (j, wj) in w.weights(e)? {
            if wj == 0.0 {
                continue;
            }
            let flow = mass * wj;
            let source = e.without(j);
            table.counts[source.bits() as usize * n + j] += flow;
            inflow[source.bits() as usize] += flow;
        }
    }
    table.total = table.counts.iter().sum();
    Ok(table)
}

/// Node distribution from an edge table: `p(e) ∝ Σ_i p(i, e)`.
pub fn induced_node_table(edges: &EdgeTable) -> Result<ProbTable> {
    let n = edges.spec.n_vars();
    let values: Vec<f64> = edges.counts.chunks(n).map(|row| row.iter().sum()).collect();
    let t = ProbTable::from_dense(edges.spec, values)?;
    t.normalized()
}

/// Monte-Carlo estimate of the induced node distribution from `samples` simulated queries.
pub fn induced_node_mc<R: RngCore + ?Sized>(
    m: &MaskDistribution,
    w: &dyn Decompose,
    samples: usize,
    rng: &mut R,
) -> Result<ProbTable> {
    if samples == 0 {
        return Err(MacError::invalid("samples must be at least 1"));
    }
    let counts = mc_counts(m, w, samples, rng)?;
    counts.normalized()
}

fn mc_counts<R: RngCore + ?Sized>(
    m: &MaskDistribution,
    w: &dyn Decompose,
    samples: usize,
    mut rng: &mut R,
) -> Result<ProbTable> {
    let mut counts = ProbTable::zeros(m.spec());
    for _ in 0..samples {
        let e = m.sample(&mut rng);
        let path = simulate_path(w, e, &mut rng)?;
        for source in path.sources() {
            counts.add(source, 1.0);
        }
    }
    Ok(counts)
}

/// Sharded Monte-Carlo estimate. Samples are split across [`MC_SHARDS`]
/// fixed substreams of `seed` and merged in shard order, so the result does
/// not depend on `workers`.
pub fn induced_node_mc_parallel(
    m: &MaskDistribution,
    w: &dyn Decompose,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Result<ProbTable> {
    if samples == 0 {
        return Err(MacError::invalid("samples must be at least 1"));
    }
    let shards: Vec<(u64, usize)> = (0..MC_SHARDS)
        .map(|s| {
            (
                s,
                samples / MC_SHARDS as usize + usize::from((s as usize) < samples % MC_SHARDS as usize),
            )
        })
        .collect();
    let workers = workers.max(1);
    let mut results: Vec<Option<Result<ProbTable>>> = (0..shards.len()).map(|_| None).collect();
    for chunk in shards.chunks(workers).zip(results.chunks_mut(workers)) {
        let (jobs, slots) = chunk;
        thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(shard, count)| {
                    scope.spawn(move || {
                        let mut rng = substream(seed, shard);
                        mc_counts(m, w, count, &mut rng)
                    })
                })
                .collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().expect("mc worker panicked"));
            }
        });
    }
    let mut merged = ProbTable::zeros(m.spec());
    for r in results {
        for (e, c) in r.expect("every shard ran")?.entries() {
            merged.add(e, c);
        }
    }
    merged.normalized()
}

/// Scales each entry by `1 + |e|` and renormalizes.
pub fn reweight_cardinality(t: &ProbTable) -> Result<ProbTable> {
    let entries = t
        .entries()
        .into_iter()
        .map(|(e, p)| (e, p * (1 + e.cardinality()) as f64));
    let out = ProbTable::from_entries(t.spec(), entries)?;
    out.normalized()
}

// ---------------------------------------------------------------------------
// Batch samplers
// ---------------------------------------------------------------------------

/// How queries are weighted when picking an intermediate node on their path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeWeighting {
    /// Every traversal counts once: the law of the induced node table.
    #[default]
    Traversal,
    /// Every query counts once regardless of its path length.
    PerQuery,
}

/// Draws intermediate nodes of decomposition paths: choose a query `e`,
/// then one of the `|e|` source nodes on its path uniformly.
pub fn sample_induced_nodes<R: RngCore + ?Sized>(
    m: &MaskDistribution,
    w: &dyn Decompose,
    batch: usize,
    weighting: NodeWeighting,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    let mut out = Vec::with_capacity(batch);
    while out.len() < batch {
        let e = match weighting {
            NodeWeighting::Traversal => m.sample_size_biased(rng),
            NodeWeighting::PerQuery => m.sample(rng),
        };
        let c = e.cardinality();
        if c == 0 {
            if m.mean_cardinality() == 0.0 {
                return Err(MacError::DegenerateDistribution(
                    "test distribution only contains the empty mask".into(),
                ));
            }
            continue;
        }
        let t = rng.random_range(0..c);
        out.push(node_with_cardinality(w, e, t, rng)?);
    }
    Ok(out)
}

fn node_with_cardinality<R: RngCore + ?Sized>(w: &dyn Decompose, e: Mask, t: usize, mut rng: &mut R) -> Result<Mask> {
    // the source of the step that leaves `t` elements
    let mut current = e;
    while current.cardinality() > t {
        let j = w.choose(current, &mut rng)?;
        current = current.without(j);
    }
    Ok(current)
}

/// Training masks for the MAC protocol under `M_card-mask`: the prefix of
/// uniform length `t ∈ [0, c)` of a size-biased test mask. No path is simulated.
pub fn sample_train_masks<R: Rng + ?Sized>(batch: usize, spec: &LatticeSpec, rng: &mut R) -> Vec<Mask> {
    let m = MaskDistribution::card_mask(*spec);
    (0..batch)
        .map(|_| {
            let (query, c) = m.size_biased_query(rng);
            let t = rng.random_range(0..c);
            m.materialize(query, rng).prefix(t).expect("t < |e|")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    #[default]
    WithoutReplacement,
    WithReplacement,
}

/// Sampling-importance-resampling of `pool` with weights `1 + |e|`.
pub fn resample_by_cardinality<R: Rng + ?Sized>(
    pool: &[Mask],
    batch: usize,
    resampling: Resampling,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    let cards: Vec<usize> = pool.iter().map(|e| e.cardinality()).collect();
    Ok(pick_by_cardinality(&cards, batch, resampling, rng)?
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

/// Indices of `batch` pool entries resampled with weights `1 + cards[i]`.
fn pick_by_cardinality<R: Rng + ?Sized>(
    cards: &[usize],
    batch: usize,
    resampling: Resampling,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if batch > cards.len() {
        return Err(MacError::invalid(format!(
            "cannot resample {batch} from a pool of {}",
            cards.len()
        )));
    }
    let weight = |i: usize| (1 + cards[i]) as f64;
    match resampling {
        Resampling::WithoutReplacement => Ok(index::sample_weighted(rng, cards.len(), weight, batch)
            .map_err(|e| MacError::DegenerateDistribution(e.to_string()))?
            .into_vec()),
        Resampling::WithReplacement => {
            let dist = WeightedIndex::new((0..cards.len()).map(weight))
                .map_err(|e| MacError::DegenerateDistribution(e.to_string()))?;
            Ok((0..batch).map(|_| dist.sample(rng)).collect())
        }
    }
}

/// Cardinality-reweighted MAC training masks: draw `outer_factor·batch`
/// masks with [`sample_train_masks`] and resample `batch` of them without
/// replacement, weights `1 + |e|`.
pub fn sample_reweighted_batch<R: Rng + ?Sized>(
    batch: usize,
    spec: &LatticeSpec,
    outer_factor: usize,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    sample_reweighted_batch_with(batch, spec, outer_factor, Resampling::WithoutReplacement, rng)
}

pub fn sample_reweighted_batch_with<R: Rng + ?Sized>(
    batch: usize,
    spec: &LatticeSpec,
    outer_factor: usize,
    resampling: Resampling,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    if outer_factor == 0 {
        return Err(MacError::invalid("outer_factor must be at least 1"));
    }
    let m = MaskDistribution::card_mask(*spec);
    // resampling weights only see |e|, so only the picked masks are built
    let pool: Vec<(LazyQuery, usize)> = (0..outer_factor * batch)
        .map(|_| {
            let (query, c) = m.size_biased_query(rng);
            (query, rng.random_range(0..c))
        })
        .collect();
    let cards: Vec<usize> = pool.iter().map(|&(_, t)| t).collect();
    Ok(pick_by_cardinality(&cards, batch, resampling, rng)?
        .into_iter()
        .map(|i| {
            let (query, t) = pool[i];
            m.materialize(query, rng).prefix(t).expect("t < |e|")
        })
        .collect())
}

/// Cardinality-reweighted nodes for an arbitrary protocol.
pub fn sample_reweighted_nodes<R: RngCore + ?Sized>(
    m: &MaskDistribution,
    w: &dyn Decompose,
    batch: usize,
    outer_factor: usize,
    resampling: Resampling,
    rng: &mut R,
) -> Result<Vec<Mask>> {
    if outer_factor == 0 {
        return Err(MacError::invalid("outer_factor must be at least 1"));
    }
    if m.mean_cardinality() == 0.0 {
        return Err(MacError::DegenerateDistribution(
            "test distribution only contains the empty mask".into(),
        ));
    }
    let mut pool: Vec<(LazyQuery, usize)> = Vec::with_capacity(outer_factor * batch);
    while pool.len() < outer_factor * batch {
        let (query, c) = m.size_biased_query(rng);
        if c > 0 {
            pool.push((query, rng.random_range(0..c)));
        }
    }
    let cards: Vec<usize> = pool.iter().map(|&(_, t)| t).collect();
    pick_by_cardinality(&cards, batch, resampling, rng)?
        .into_iter()
        .map(|i| {
            let (query, t) = pool[i];
            let e = m.materialize(query, rng);
            node_with_cardinality(w, e, t, rng)
        })
        .collect()
}

/// Draws `(σ(t), σ(<t))` for a uniform permutation `σ` and uniform `t ∈ [1, N]`.
pub fn baseline_edge_sampler<R: Rng + ?Sized>(batch: usize, spec: &LatticeSpec, rng: &mut R) -> Vec<(usize, Mask)> {
    let n = spec.n_vars();
    let mut perm: Vec<usize> = (0..n).collect();
    (0..batch)
        .map(|_| {
            perm.shuffle(rng);
            let t = rng.random_range(1..=n);
            let source = perm[..t - 1].iter().fold(Mask::EMPTY, |m, &i| m.with(i));
            (perm[t - 1], source)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Shannon entropy in nats.
pub fn entropy(t: &ProbTable) -> f64 {
    -t.entries().iter().map(|&(_, p)| p * p.ln()).sum::<f64>()
}

pub fn tv_distance(a: &ProbTable, b: &ProbTable) -> Result<f64> {
    if a.spec().n_vars() != b.spec().n_vars() {
        return Err(MacError::invalid(
            "total variation between tables on different lattices",
        ));
    }
    let mut diff: HashMap<Mask, f64> = HashMap::new();
    for (e, p) in a.entries() {
        *diff.entry(e).or_insert(0.0) += p;
    }
    for (e, p) in b.entries() {
        *diff.entry(e).or_insert(0.0) -= p;
    }
    let mut terms: Vec<(Mask, f64)> = diff.into_iter().collect();
    terms.sort_by_key(|&(e, _)| e);
    Ok(0.5 * terms.iter().map(|&(_, d)| d.abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardinalityStats {
    /// `E_{(i,e)} |e|` under the normalized edge table.
    pub edge_expectation: f64,
    /// Total expected traversals, `E_{e'~M} |e'|` for induced tables.
    pub path_length_constant: f64,
}

pub fn expected_cardinality(edges: &EdgeTable) -> CardinalityStats {
    let edge_expectation = edges
        .entries()
        .iter()
        .map(|&(edge, p)| p * edge.source().cardinality() as f64)
        .sum();
    CardinalityStats {
        edge_expectation,
        path_length_constant: edges.total_count(),
    }
}

/// Exact induced node table for one of the shipped protocols under `M_card-mask`.
pub fn card_mask_node_table(spec: &LatticeSpec, w: Protocol) -> Result<ProbTable> {
    induced_node_table(&induced_edge_exact(&MaskDistribution::card_mask(*spec), &w)?)
}
