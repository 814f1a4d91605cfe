//! Training loops for the masked objectives and likelihood inference along
//! decomposition paths.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::distribution::{
    baseline_edge_sampler, sample_induced_nodes, sample_reweighted_batch, sample_reweighted_nodes, sample_train_masks,
    MaskDistribution, NodeWeighting, Resampling, DEFAULT_OUTER_FACTOR,
};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};
use crate::model::{ConditionalModel, ConditionalQuery, Instance, TrainableModel, WeightedExample};
use crate::optim::{LrSchedule, Optimizer, OptimizerKind};
use crate::protocol::{simulate_path, Decompose, Protocol};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectiveKind {
    #[serde(rename = "mac-cr")]
    MacCr,
    #[serde(rename = "mac-nocr")]
    MacNocr,
    #[serde(rename = "rnd-cr")]
    RndCr,
    #[serde(rename = "rnd-nocr")]
    RndNocr,
    #[serde(rename = "ardm")]
    Ardm,
}

impl ObjectiveKind {
    /// Every arm of the ablation, baseline first.
    pub const ALL: [ObjectiveKind; 5] = [
        ObjectiveKind::Ardm,
        ObjectiveKind::RndNocr,
        ObjectiveKind::RndCr,
        ObjectiveKind::MacNocr,
        ObjectiveKind::MacCr,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ObjectiveKind::MacCr => "mac-cr",
            ObjectiveKind::MacNocr => "mac-nocr",
            ObjectiveKind::RndCr => "rnd-cr",
            ObjectiveKind::RndNocr => "rnd-nocr",
            ObjectiveKind::Ardm => "ardm",
        }
    }

    pub fn protocol(&self) -> Protocol {
        match self {
            ObjectiveKind::MacCr | ObjectiveKind::MacNocr => Protocol::Mac,
            _ => Protocol::Rnd,
        }
    }

    pub fn reweighted(&self) -> bool {
        matches!(self, ObjectiveKind::MacCr | ObjectiveKind::RndCr)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for ObjectiveKind {
    type Err = MacError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        ObjectiveKind::ALL.into_iter().find(|k| k.id() == norm).ok_or_else(|| {
            MacError::invalid(format!(
                "unknown objective '{s}' (expected one of mac-cr, mac-nocr, rnd-cr, rnd-nocr, ardm)"
            ))
        })
    }
}

/// Training objective: which masks are drawn and how examples are weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Objective {
    kind: ObjectiveKind,
    protocol: Protocol,
    reweight: bool,
}

impl Objective {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            kind,
            protocol: kind.protocol(),
            reweight: kind.reweighted(),
        }
    }

    /// Checks optional redundant fields against the kind.
    pub fn from_parts(kind: ObjectiveKind, protocol: Option<Protocol>, reweight: Option<bool>) -> Result<Self> {
        let obj = Self::new(kind);
        if protocol.is_some_and(|p| p != obj.protocol) {
            return Err(MacError::Validation(format!(
                "objective {kind} uses protocol {}, config says {}",
                obj.protocol,
                protocol.unwrap()
            )));
        }
        if reweight.is_some_and(|r| r != obj.reweight) {
            return Err(MacError::Validation(format!(
                "objective {kind} has reweight={}, config says {}",
                obj.reweight,
                reweight.unwrap()
            )));
        }
        Ok(obj)
    }

    pub fn kind(&self) -> ObjectiveKind {
        self.kind
    }

    /// Protocol used for training paths and for evaluating marginals.
    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn reweight(&self) -> bool {
        self.reweight
    }

    /// Per-example weight: `N` for the baseline, 1 otherwise.
    pub fn example_weight(&self, spec: &LatticeSpec) -> f64 {
        match self.kind {
            ObjectiveKind::Ardm => spec.n_vars() as f64,
            _ => 1.0,
        }
    }

    /// Draws the training nodes of one step with their example weights.
    pub fn training_masks<R: Rng + ?Sized>(
        &self,
        batch: usize,
        spec: &LatticeSpec,
        outer_factor: usize,
        rng: &mut R,
    ) -> Result<Vec<Mask>> {
        let card = || MaskDistribution::card_mask(*spec);
        match self.kind {
            ObjectiveKind::MacNocr => Ok(sample_train_masks(batch, spec, rng)),
            ObjectiveKind::MacCr => sample_reweighted_batch(batch, spec, outer_factor, rng),
            ObjectiveKind::RndNocr => {
                sample_induced_nodes(&card(), &Protocol::Rnd, batch, NodeWeighting::Traversal, rng)
            }
            ObjectiveKind::RndCr => sample_reweighted_nodes(
                &card(),
                &Protocol::Rnd,
                batch,
                outer_factor,
                Resampling::WithoutReplacement,
                rng,
            ),
            ObjectiveKind::Ardm => Ok(baseline_edge_sampler(batch, spec, rng)
                .into_iter()
                .map(|(_, source)| source)
                .collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch: usize,
    pub steps: u64,
    pub lr: LrSchedule,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub outer_factor: usize,
    /// Steps between log rows.
    pub eval_every: u64,
}

impl TrainConfig {
    pub fn new(kind: ObjectiveKind) -> Self {
        Self {
            objective: Objective::new(kind),
            batch: 256,
            steps: 20_000,
            lr: LrSchedule::default(),
            optimizer: OptimizerKind::default(),
            seed: 0,
            outer_factor: DEFAULT_OUTER_FACTOR,
            eval_every: 1000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(MacError::Validation("batch must be at least 1".into()));
        }
        if self.outer_factor == 0 {
            return Err(MacError::Validation("outer_factor must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(MacError::Validation("eval_every must be at least 1".into()));
        }
        self.lr.validate()?;
        Optimizer::new(self.optimizer, 0).map(|_| ())
    }
}

// ---------------------------------------------------------------------------
// Inference
// ---------------------------------------------------------------------------

/// `log p(x_e)` as the sum of conditionals along a path drawn from `w`.
pub fn eval_marginal<M: ConditionalModel + ?Sized>(
    m: &M,
    x: &Instance,
    e: Mask,
    w: &dyn Decompose,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    Ok(eval_marginal_batch(m, &[(x, e)], w, rng)?[0])
}

/// [`eval_marginal`] for many queries with one batched model call. Paths are
/// drawn in input order, so results match sequential calls on the same stream.
pub fn eval_marginal_batch<M: ConditionalModel + ?Sized>(
    m: &M,
    items: &[(&Instance, Mask)],
    w: &dyn Decompose,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let spec = m.spec();
    let mut queries = Vec::new();
    let mut ends = Vec::with_capacity(items.len());
    for &(x, e) in items {
        x.validate(&spec)?;
        if !spec.contains_mask(e) {
            return Err(MacError::invalid(format!("mask {e} outside lattice")));
        }
        let path = simulate_path(w, e, rng)?;
        queries.extend(path.edges().iter().map(|edge| ConditionalQuery {
            x,
            target: edge.target(),
            given: edge.source(),
        }));
        ends.push(queries.len());
    }
    let logs = m.log_conditional_batch(&queries)?;
    let mut start = 0;
    Ok(ends
        .into_iter()
        .map(|end| {
            // accumulate from the empty set upward so each prefix is itself a marginal
            let total = logs[start..end].iter().rev().fold(0.0, |acc, l| acc + l);
            start = end;
            total
        })
        .collect())
}

pub fn eval_joint<M: ConditionalModel + ?Sized>(
    m: &M,
    x: &Instance,
    w: &dyn Decompose,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    eval_marginal(m, x, m.spec().full_mask(), w, rng)
}

/// Mean chain-rule log-likelihood over `order_samples` uniform orderings.
pub fn eval_joint_elbo<M: ConditionalModel + ?Sized>(
    m: &M,
    x: &Instance,
    order_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if order_samples == 0 {
        return Err(MacError::invalid("order_samples must be at least 1"));
    }
    let full = m.spec().full_mask();
    let items = vec![(x, full); order_samples];
    let logs = eval_marginal_batch(m, &items, &Protocol::Rnd, rng)?;
    Ok(logs.iter().sum::<f64>() / order_samples as f64)
}

/// Fills the variables outside `e` one at a time in ascending index order,
/// each drawn from the model conditioned on everything fixed so far.
pub fn complete<M: ConditionalModel + ?Sized, R: Rng + ?Sized>(
    m: &M,
    x: &Instance,
    e: Mask,
    rng: &mut R,
) -> Result<Instance> {
    let spec = m.spec();
    if x.len() != spec.n_vars() {
        return Err(MacError::invalid("instance length does not match the model"));
    }
    let mut y = x.clone();
    for i in e.complement(spec.n_vars()).iter() {
        y.set(i, 0);
    }
    y.validate(&spec)?;
    let mut fixed = e;
    for i in e.complement(spec.n_vars()).iter() {
        let pred = m.predict_all(&y, fixed)?;
        let probs = pred.get(i).expect("prediction covers every missing target");
        y.set(i, inverse_cdf(probs, rng.random()));
        fixed = fixed.with(i);
    }
    Ok(y)
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (s, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = s;
        if u < acc {
            return s;
        }
    }
    last
}

/// Fixed held-out queries evaluated during and after training.
#[derive(Debug, Clone)]
pub struct EvalSet {
    instances: Vec<Instance>,
    masks: Vec<Mask>,
    protocol: Protocol,
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    /// Mean `-log p(x_e)` in nats.
    pub marginal_nll: f64,
    /// Mean `-log p(x)` in nats.
    pub joint_nll: f64,
}

impl EvalSet {
    pub fn new(instances: Vec<Instance>, masks: Vec<Mask>, protocol: Protocol, seed: u64) -> Result<Self> {
        if instances.is_empty() || instances.len() != masks.len() {
            return Err(MacError::invalid("eval set needs one mask per instance"));
        }
        Ok(Self {
            instances,
            masks,
            protocol,
            seed,
        })
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn protocol(&self) -> Protocol {
        self.protocol
    }

    pub fn with_protocol(&self, protocol: Protocol) -> Self {
        Self {
            protocol,
            ..self.clone()
        }
    }

    /// Every call replays the same path stream, so results are reproducible.
    pub fn evaluate<M: ConditionalModel + ?Sized>(&self, m: &M) -> Result<EvalResult> {
        let mut rng = seeded(self.seed);
        let items: Vec<(&Instance, Mask)> = self.instances.iter().zip(self.masks.iter().copied()).collect();
        let marginals = eval_marginal_batch(m, &items, &self.protocol, &mut rng)?;
        let full = m.spec().full_mask();
        let joints: Vec<(&Instance, Mask)> = self.instances.iter().map(|x| (x, full)).collect();
        let joint = eval_marginal_batch(m, &joints, &self.protocol, &mut rng)?;
        let n = self.instances.len() as f64;
        Ok(EvalResult {
            marginal_nll: -marginals.iter().sum::<f64>() / n,
            joint_nll: -joint.iter().sum::<f64>() / n,
        })
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    /// Mean batch loss since the previous row; NaN before the first step.
    pub train_loss: f64,
    pub eval_marginal_nll: f64,
    pub eval_joint_nll: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub objective: ObjectiveKind,
    /// Expected path length `E|e|` of the test distribution.
    pub path_length_constant: f64,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("step\ttrain_loss\teval_marginal_nll\teval_joint_nll\twall_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.step, r.train_loss, r.eval_marginal_nll, r.eval_joint_nll, r.wall_ms
            ));
        }
        out
    }

    pub fn final_row(&self) -> Option<&LogRow> {
        self.rows.last()
    }
}

/// Runs `cfg.steps` optimizer steps on batches of `(instance, node)` pairs.
/// Instances are drawn uniformly with replacement; nodes come from the
/// objective's mask sampler.
pub fn train<M: TrainableModel, R: Rng + ?Sized>(
    mut model: M,
    data: &[Instance],
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
    rng: &mut R,
) -> Result<(M, TrainLog)> {
    cfg.validate()?;
    let spec = model.spec();
    if data.is_empty() {
        return Err(MacError::Validation("training data is empty".into()));
    }
    for (row, x) in data.iter().enumerate() {
        x.validate(&spec)
            .map_err(|e| MacError::Validation(format!("training instance {row}: {e}")))?;
    }
    let weight = cfg.objective.example_weight(&spec);
    let mut opt = Optimizer::new(cfg.optimizer, model.params().len())?;
    let clock = Instant::now();
    let mut log = TrainLog {
        objective: cfg.objective.kind(),
        path_length_constant: MaskDistribution::card_mask(spec).mean_cardinality(),
        rows: Vec::new(),
    };
    let record = |model: &M, step: u64, train_loss: f64| -> Result<LogRow> {
        let (m, j) = match eval {
            Some(set) => {
                let r = set.evaluate(model)?;
                (r.marginal_nll, r.joint_nll)
            }
            None => (f64::NAN, f64::NAN),
        };
        Ok(LogRow {
            step,
            train_loss,
            eval_marginal_nll: m,
            eval_joint_nll: j,
            wall_ms: clock.elapsed().as_millis() as u64,
        })
    };
    log.rows.push(record(&model, 0, f64::NAN)?);

    let mut window = (0.0, 0u64);
    for step in 0..cfg.steps {
        let masks = cfg.objective.training_masks(cfg.batch, &spec, cfg.outer_factor, rng)?;
        let batch: Vec<WeightedExample<'_>> = masks
            .into_iter()
            .map(|mask| WeightedExample {
                x: &data[rng.random_range(0..data.len())],
                mask,
                weight,
            })
            .collect();
        let (loss, grad) = model.loss_and_grad(&batch)?;
        if !loss.is_finite() {
            return Err(MacError::DegenerateDistribution(format!(
                "non-finite loss at step {step}"
            )));
        }
        opt.step(model.params_mut(), &grad, cfg.lr.rate(step, cfg.steps));
        window.0 += loss;
        window.1 += 1;
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == cfg.steps {
            log.rows.push(record(&model, done, window.0 / window.1 as f64)?);
            window = (0.0, 0);
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use approx::assert_abs_diff_eq;

    use super::*;
    use crate::lattice::make_mask;
    use crate::model::{oracle_from_joint, JointTable, OracleModel, TabularModel};

    fn two_var() -> OracleModel {
        let spec = LatticeSpec::new(2, 2).unwrap();
        oracle_from_joint(JointTable::new(spec, vec![0.1, 0.3, 0.2, 0.4]).unwrap())
    }

    #[test]
    fn objective_ids_round_trip() {
        for k in ObjectiveKind::ALL {
            assert_eq!(k.id().parse::<ObjectiveKind>().unwrap(), k);
        }
        assert_eq!("MAC_CR".parse::<ObjectiveKind>().unwrap(), ObjectiveKind::MacCr);
        assert!("mac".parse::<ObjectiveKind>().is_err());
        assert!(Objective::from_parts(ObjectiveKind::MacCr, Some(Protocol::Rnd), None).is_err());
        assert!(Objective::from_parts(ObjectiveKind::RndNocr, Some(Protocol::Rnd), Some(true)).is_err());
        assert!(Objective::from_parts(ObjectiveKind::RndCr, Some(Protocol::Rnd), Some(true)).is_ok());
    }

    #[test]
    fn marginal_examples() {
        let m = two_var();
        let spec = m.spec();
        let x = Instance::new(vec![1, 1], &spec).unwrap();
        let mut rng = seeded(0);
        assert_eq!(
            eval_marginal(&m, &x, Mask::EMPTY, &Protocol::Mac, &mut rng).unwrap(),
            0.0
        );
        let full = eval_marginal(&m, &x, spec.full_mask(), &Protocol::Mac, &mut rng).unwrap();
        assert_abs_diff_eq!(full, 0.4f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(full, 0.7f64.ln() + (4.0f64 / 7.0).ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(
            eval_joint(&m, &x, &Protocol::Rnd, &mut rng).unwrap(),
            0.4f64.ln(),
            epsilon = 1e-12
        );

        let uniform = oracle_from_joint(JointTable::uniform(LatticeSpec::binary(3).unwrap()).unwrap());
        for seed in 0..5 {
            let mut rng = seeded(seed);
            let x = Instance::new(vec![seed as u32 % 2, 1, 0], &uniform.spec()).unwrap();
            for e in [0b011u64, 0b101, 0b110] {
                for w in [Protocol::Mac, Protocol::Rnd] {
                    let v = eval_marginal(&uniform, &x, Mask::from_bits(e), &w, &mut rng).unwrap();
                    assert_abs_diff_eq!(v, 0.25f64.ln(), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn chain_rule_step_is_exact() {
        let spec = LatticeSpec::new(6, 3).unwrap();
        let mut rng = seeded(4);
        let m = oracle_from_joint(JointTable::random(spec, &mut rng).unwrap());
        for bits in 1..64u64 {
            let e = Mask::from_bits(bits);
            let x = m.joint().sample(&mut rng);
            let j = e.max_element().unwrap();
            let lhs = eval_marginal(&m, &x, e, &Protocol::Mac, &mut rng).unwrap();
            let rest = eval_marginal(&m, &x, e.without(j), &Protocol::Mac, &mut rng).unwrap();
            let step = m.log_conditional(&x, j, e.without(j)).unwrap();
            assert_eq!(lhs, rest + step);
        }
    }

    #[test]
    fn elbo_on_oracle_is_tight() {
        let m = two_var();
        let x = Instance::new(vec![1, 1], &m.spec()).unwrap();
        let mut rng = seeded(1);
        assert_abs_diff_eq!(
            eval_joint_elbo(&m, &x, 16, &mut rng).unwrap(),
            0.4f64.ln(),
            epsilon = 1e-12
        );
        assert!(eval_joint_elbo(&m, &x, 0, &mut rng).is_err());
    }

    #[test]
    fn completion_frequency() {
        let m = two_var();
        let spec = m.spec();
        let x = Instance::new(vec![1, 0], &spec).unwrap();
        let e = make_mask(&[0], &spec).unwrap();
        let mut rng = seeded(8);
        let draws = 100_000;
        let ones = (0..draws)
            .filter(|_| complete(&m, &x, e, &mut rng).unwrap().get(1) == 1)
            .count();
        assert_abs_diff_eq!(ones as f64 / draws as f64, 4.0 / 7.0, epsilon = 0.01);
        assert_eq!(complete(&m, &x, spec.full_mask(), &mut rng).unwrap(), x);
    }

    #[test]
    fn completion_of_point_mass() {
        let spec = LatticeSpec::new(4, 3).unwrap();
        let target = Instance::new(vec![2, 0, 1, 2], &spec).unwrap();
        let m = oracle_from_joint(JointTable::point_mass(spec, &target).unwrap());
        let x = Instance::new(vec![2, 1, 1, 0], &spec).unwrap();
        let e = make_mask(&[0, 2], &spec).unwrap();
        let mut rng = seeded(2);
        assert_eq!(complete(&m, &x, e, &mut rng).unwrap(), target);
    }

    #[test]
    fn training_masks_never_full() {
        let spec = LatticeSpec::new(5, 2).unwrap();
        let mut rng = seeded(3);
        for kind in ObjectiveKind::ALL {
            let masks = Objective::new(kind).training_masks(500, &spec, 4, &mut rng).unwrap();
            assert_eq!(masks.len(), 500);
            assert!(masks.iter().all(|e| e.cardinality() < 5), "{kind}");
        }
    }

    #[test]
    fn ardm_loss_scale() {
        let spec = LatticeSpec::new(4, 3).unwrap();
        let mut rng = seeded(5);
        let mut model = TabularModel::new(spec).unwrap();
        model
            .params_mut()
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let obj = Objective::new(ObjectiveKind::Ardm);
        let masks = obj.training_masks(64, &spec, 1, &mut rng).unwrap();
        let data: Vec<Instance> = (0..64)
            .map(|_| Instance::new((0..4).map(|_| rng.random_range(0..3)).collect(), &spec).unwrap())
            .collect();
        let batch: Vec<WeightedExample<'_>> = masks
            .iter()
            .zip(&data)
            .map(|(&mask, x)| WeightedExample {
                x,
                mask,
                weight: obj.example_weight(&spec),
            })
            .collect();
        let (loss, _) = model.loss_and_grad(&batch).unwrap();
        let direct: f64 = batch
            .iter()
            .map(|ex| {
                let missing = ex.mask.complement(4);
                let ce: f64 = missing
                    .iter()
                    .map(|i| -model.log_conditional(ex.x, i, ex.mask).unwrap())
                    .sum();
                ce / missing.cardinality() as f64
            })
            .sum::<f64>()
            / 64.0;
        assert_abs_diff_eq!(loss, 4.0 * direct, epsilon = 1e-12);
    }

    /// Data whose empirical joint is exactly `counts / Σ counts`.
    fn counted_data(spec: LatticeSpec, counts: &[usize]) -> (Vec<Instance>, OracleModel) {
        let total: usize = counts.iter().sum();
        let joint = JointTable::new(spec, counts.iter().map(|&c| c as f64 / total as f64).collect()).unwrap();
        let data = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(joint.instance_at(i), c))
            .collect();
        (data, oracle_from_joint(joint))
    }

    #[test]
    fn tabular_model_recovers_data_conditionals() {
        let spec = LatticeSpec::new(2, 2).unwrap();
        let (data, oracle) = counted_data(spec, &[1, 9, 9, 1]);
        for kind in [ObjectiveKind::Ardm, ObjectiveKind::MacNocr] {
            let mut cfg = TrainConfig::new(kind);
            cfg.batch = 8192;
            cfg.steps = 500;
            cfg.eval_every = 500;
            cfg.optimizer = OptimizerKind::Sgd;
            cfg.lr = LrSchedule::Constant(0.5);
            let mut rng = seeded(11);
            let (mut model, _) = train(TabularModel::new(spec).unwrap(), &data, &cfg, None, &mut rng).unwrap();
            // average the iterates of a constant-rate tail to remove SGD jitter
            cfg.steps = 50;
            cfg.eval_every = 50;
            let chunks = 40;
            let mut mean = vec![0.0; model.params().len()];
            for _ in 0..chunks {
                model = train(model, &data, &cfg, None, &mut rng).unwrap().0;
                for (m, p) in mean.iter_mut().zip(model.params()) {
                    *m += p / chunks as f64;
                }
            }
            model.params_mut().copy_from_slice(&mean);

            let nodes: Vec<Mask> = match kind {
                ObjectiveKind::Ardm => vec![Mask::EMPTY, Mask::singleton(0), Mask::singleton(1)],
                _ => vec![Mask::EMPTY, Mask::singleton(0)],
            };
            let mut worst: f64 = 0.0;
            for x in &data {
                for &e in &nodes {
                    let truth = oracle.predict_all(x, e).unwrap();
                    let learned = model.predict_all(x, e).unwrap();
                    for ((_, p), (_, q)) in truth.iter().zip(learned.iter()) {
                        for (a, b) in p.iter().zip(q) {
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
            assert!(worst < 1e-3, "{kind}: max deviation {worst}");
        }
    }

    #[test]
    fn training_is_deterministic_and_validates_data() {
        let spec = LatticeSpec::new(3, 2).unwrap();
        let (data, oracle) = counted_data(spec, &[3, 1, 1, 2, 1, 1, 2, 5]);
        let eval = EvalSet::new(data[..6].to_vec(), vec![Mask::from_bits(3); 6], Protocol::Rnd, 9).unwrap();
        let mut cfg = TrainConfig::new(ObjectiveKind::RndCr);
        cfg.steps = 50;
        cfg.batch = 16;
        cfg.eval_every = 20;
        cfg.outer_factor = 4;
        let run = || {
            let mut rng = seeded(cfg.seed);
            train(TabularModel::new(spec).unwrap(), &data, &cfg, Some(&eval), &mut rng).unwrap()
        };
        let (m1, log1) = run();
        let (m2, log2) = run();
        assert_eq!(m1, m2);
        let strip = |log: &TrainLog| -> Vec<(u64, u64, u64, u64)> {
            log.rows
                .iter()
                .map(|r| {
                    (
                        r.step,
                        r.train_loss.to_bits(),
                        r.eval_marginal_nll.to_bits(),
                        r.eval_joint_nll.to_bits(),
                    )
                })
                .collect()
        };
        assert_eq!(strip(&log1), strip(&log2));
        assert_eq!(
            log1.rows.iter().map(|r| r.step).collect::<Vec<_>>(),
            vec![0, 20, 40, 50]
        );
        assert!(log1
            .to_tsv()
            .starts_with("step\ttrain_loss\teval_marginal_nll\teval_joint_nll\twall_ms\n"));
        assert_abs_diff_eq!(log1.path_length_constant, 2.0);
        assert!(eval.evaluate(&oracle).unwrap().marginal_nll.is_finite());

        let bad = vec![Instance::from_raw(vec![0, 2, 1])];
        let mut rng = seeded(0);
        let res = train(TabularModel::new(spec).unwrap(), &bad, &cfg, None, &mut rng);
        assert!(matches!(res, Err(MacError::Validation(_))));
    }
}
