//! Datasets, synthetic ground truth and their file formats.
//!
//! Dataset CSV: a header `n_vars=<N>,alphabet=<K>` followed by one
//! comma-separated row of symbols per instance. The masked variant writes
//! unobserved entries as `?`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};
use crate::model::oracle::joint_size;
use crate::model::{CategoricalPrediction, ConditionalModel, Instance, JointTable, ProductMixture};

/// Exact distribution behind a synthetic dataset.
#[derive(Debug, Clone)]
pub enum GroundTruth {
    Joint(JointTable),
    /// Kept in closed form; the dense table is built on request.
    Mixture(ProductMixture),
}

impl GroundTruth {
    pub fn spec(&self) -> LatticeSpec {
        match self {
            GroundTruth::Joint(j) => j.spec(),
            GroundTruth::Mixture(m) => m.spec(),
        }
    }

    pub fn log_marginal(&self, x: &Instance, e: Mask) -> f64 {
        match self {
            GroundTruth::Joint(j) => j.marginal(x, e).ln(),
            GroundTruth::Mixture(m) => m.log_marginal(x, e),
        }
    }

    pub fn joint_table(&self) -> Result<JointTable> {
        match self {
            GroundTruth::Joint(j) => Ok(j.clone()),
            GroundTruth::Mixture(m) => m.to_joint_table(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        match self {
            GroundTruth::Joint(j) => j.sample(rng),
            GroundTruth::Mixture(m) => m.sample(rng),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = match self {
            GroundTruth::Joint(j) => TruthFile::Joint {
                n_vars: j.spec().n_vars(),
                alphabet_size: j.spec().alphabet_size(),
                probs: j.probs().to_vec(),
            },
            GroundTruth::Mixture(m) => TruthFile::Mixture {
                n_vars: m.spec().n_vars(),
                alphabet_size: m.spec().alphabet_size(),
                weights: m.weights().to_vec(),
                components: m.components(),
            },
        };
        fs::write(path, serde_json::to_string(&file)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: TruthFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(match file {
            TruthFile::Joint {
                n_vars,
                alphabet_size,
                probs,
            } => GroundTruth::Joint(JointTable::new(LatticeSpec::new(n_vars, alphabet_size)?, probs)?),
            TruthFile::Mixture {
                n_vars,
                alphabet_size,
                weights,
                components,
            } => GroundTruth::Mixture(ProductMixture::new(
                LatticeSpec::new(n_vars, alphabet_size)?,
                weights,
                components,
            )?),
        })
    }
}

impl ConditionalModel for GroundTruth {
    fn spec(&self) -> LatticeSpec {
        GroundTruth::spec(self)
    }

    fn predict_all(&self, x: &Instance, e: Mask) -> Result<CategoricalPrediction> {
        match self {
            GroundTruth::Joint(j) => crate::model::oracle_from_joint(j.clone()).predict_all(x, e),
            GroundTruth::Mixture(m) => m.predict_all(x, e),
        }
    }

    fn log_conditional(&self, x: &Instance, j: usize, e: Mask) -> Result<f64> {
        crate::model::check_target(j, e, &self.spec())?;
        let evidence = self.log_marginal(x, e);
        if evidence == f64::NEG_INFINITY {
            return Err(MacError::ZeroEvidence);
        }
        Ok(self.log_marginal(x, e.with(j)) - evidence)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum TruthFile {
    Joint {
        n_vars: usize,
        alphabet_size: usize,
        probs: Vec<f64>,
    },
    Mixture {
        n_vars: usize,
        alphabet_size: usize,
        weights: Vec<f64>,
        components: Vec<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone)]
pub struct Dataset {
    spec: LatticeSpec,
    instances: Vec<Instance>,
    truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(spec: LatticeSpec, instances: Vec<Instance>) -> Result<Self> {
        for (row, x) in instances.iter().enumerate() {
            x.validate(&spec)
                .map_err(|e| MacError::Validation(format!("instance {row}: {e}")))?;
        }
        Ok(Self {
            spec,
            instances,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if truth.spec() != self.spec {
            return Err(MacError::Validation(
                "ground truth spec does not match the dataset".into(),
            ));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    /// The first `n` instances and the rest, both keeping the ground truth.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.instances.len() {
            return Err(MacError::invalid("split point beyond the dataset"));
        }
        let part = |instances: Vec<Instance>| Dataset {
            spec: self.spec,
            instances,
            truth: self.truth.clone(),
        };
        Ok((part(self.instances[..n].to_vec()), part(self.instances[n..].to_vec())))
    }

    pub fn to_csv(&self) -> String {
        let mut out = header(&self.spec);
        for x in &self.instances {
            let row: Vec<String> = x.values().iter().map(u32::to_string).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let (spec, rows) = parse_rows(text)?;
        let mut instances = Vec::with_capacity(rows.len());
        for (line, cells) in rows {
            let values = cells
                .into_iter()
                .map(|c| c.ok_or_else(|| parse_error(line, "missing entry '?' in a complete dataset")))
                .collect::<Result<Vec<u32>>>()?;
            instances.push(Instance::new(values, &spec).map_err(|e| parse_error(line, e.to_string()))?);
        }
        Dataset::new(spec, instances)
    }
}

/// Parameters of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// Independent variables with the given categoricals.
    Product { marginals: Vec<Vec<f64>> },
    /// Explicit mixture of product components.
    Mixture {
        weights: Vec<f64>,
        components: Vec<Vec<Vec<f64>>>,
    },
    /// Mixture with Dirichlet-drawn parameters.
    RandomMixture { components: usize, concentration: f64 },
}

/// Samples `count` instances i.i.d. from a synthetic distribution and
/// attaches it as ground truth.
pub fn generate_synthetic<R: Rng + ?Sized>(
    kind: &SyntheticKind,
    spec: LatticeSpec,
    count: usize,
    rng: &mut R,
) -> Result<Dataset> {
    joint_size(&spec)?;
    let mixture = match kind {
        SyntheticKind::Product { marginals } => ProductMixture::product(spec, marginals.clone())?,
        SyntheticKind::Mixture { weights, components } => {
            ProductMixture::new(spec, weights.clone(), components.clone())?
        }
        SyntheticKind::RandomMixture {
            components,
            concentration,
        } => ProductMixture::random(spec, *components, *concentration, rng)?,
    };
    let instances = (0..count).map(|_| mixture.sample(rng)).collect();
    Dataset::new(spec, instances)?.with_truth(GroundTruth::Mixture(mixture))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    Dataset::from_csv(&fs::read_to_string(path)?)
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, d.to_csv())?;
    Ok(())
}

/// Instances with observed masks; missing entries read as symbol 0.
pub fn parse_masked_csv(text: &str) -> Result<(LatticeSpec, Vec<(Instance, Mask)>)> {
    let (spec, rows) = parse_rows(text)?;
    let mut out = Vec::with_capacity(rows.len());
    for (line, cells) in rows {
        let mut e = Mask::EMPTY;
        let values = cells
            .iter()
            .enumerate()
            .map(|(i, c)| match c {
                Some(v) => {
                    e = e.with(i);
                    *v
                }
                None => 0,
            })
            .collect();
        out.push((
            Instance::new(values, &spec).map_err(|e| parse_error(line, e.to_string()))?,
            e,
        ));
    }
    Ok((spec, out))
}

pub fn format_masked_csv(spec: &LatticeSpec, rows: &[(Instance, Mask)]) -> String {
    let mut out = header(spec);
    for (x, e) in rows {
        let cells: Vec<String> = (0..spec.n_vars())
            .map(|i| {
                if e.contains(i) {
                    x.get(i).to_string()
                } else {
                    "?".into()
                }
            })
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn header(spec: &LatticeSpec) -> String {
    let mut h = String::new();
    let _ = writeln!(h, "n_vars={},alphabet={}", spec.n_vars(), spec.alphabet_size());
    h
}

fn parse_error(line: usize, message: impl Into<String>) -> MacError {
    MacError::Parse {
        line,
        message: message.into(),
    }
}

type Rows = Vec<(usize, Vec<Option<u32>>)>;

fn parse_rows(text: &str) -> Result<(LatticeSpec, Rows)> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, first) = lines.next().ok_or_else(|| parse_error(1, "empty file"))?;
    let spec = parse_header(first)?;
    let mut rows = Vec::new();
    for (line, text) in lines {
        if text.is_empty() {
            continue;
        }
        let cells = text
            .split(',')
            .map(|c| match c.trim() {
                "?" => Ok(None),
                c => c
                    .parse::<u32>()
                    .map(Some)
                    .map_err(|_| parse_error(line, format!("'{c}' is not a symbol"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != spec.n_vars() {
            return Err(parse_error(
                line,
                format!("expected {} entries, found {}", spec.n_vars(), cells.len()),
            ));
        }
        if let Some(v) = cells.iter().flatten().find(|&&v| v as usize >= spec.alphabet_size()) {
            return Err(parse_error(
                line,
                format!("symbol {v} outside alphabet of size {}", spec.alphabet_size()),
            ));
        }
        rows.push((line, cells));
    }
    Ok((spec, rows))
}

fn parse_header(line: &str) -> Result<LatticeSpec> {
    let mut n = None;
    let mut k = None;
    for part in line.split(',') {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| parse_error(1, format!("malformed header field '{part}'")))?;
        let value: usize = value
            .trim()
            .parse()
            .map_err(|_| parse_error(1, format!("header value '{value}' is not an integer")))?;
        match key.trim() {
            "n_vars" => n = Some(value),
            "alphabet" => k = Some(value),
            other => return Err(parse_error(1, format!("unknown header key '{other}'"))),
        }
    }
    match (n, k) {
        (Some(n), Some(k)) => LatticeSpec::new(n, k).map_err(|e| parse_error(1, e.to_string())),
        _ => Err(parse_error(1, "header must be 'n_vars=<N>,alphabet=<K>'")),
    }
}
