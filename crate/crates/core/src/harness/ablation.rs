//! Seeded comparison of training objectives on shared synthetic data.

use std::f64::consts::LN_2;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};

use super::config::DEFAULT_HIDDEN_SIZES;
use super::data::{generate_synthetic, Dataset, GroundTruth, SyntheticKind};
use super::suite::{draw_eval_masks, mask_stream_hash, score_marginals, summarize, SuiteResult};
use crate::distribution::{
    entropy, induced_edge_exact, induced_node_table, reweight_cardinality, sample_reweighted_batch, sample_train_masks,
    tv_distance, MaskDistribution, ProbTable, DEFAULT_OUTER_FACTOR,
};
use crate::engine::{train, EvalSet, LogRow, Objective, ObjectiveKind, TrainConfig};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};
use crate::model::{Instance, MaskedMlp, NetworkConfig};
use crate::optim::{LrSchedule, OptimizerKind};
use crate::protocol::Protocol;
use crate::rng::{seeded, substream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub n_vars: usize,
    pub alphabet: usize,
    /// Components of the random product mixture generating the data.
    pub components: usize,
    /// Dirichlet concentration of each component's per-variable categoricals.
    pub concentration: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub data_seed: u64,
    pub eval_seed: u64,
    pub seeds: Vec<u64>,
    pub steps: u64,
    pub batch: usize,
    pub lr: LrSchedule,
    pub hidden_sizes: Vec<usize>,
    pub outer_factor: usize,
    pub eval_every: u64,
    /// Test instances scored at each curve point.
    pub curve_size: usize,
    pub arms: Vec<ObjectiveKind>,
    /// Draws used for the sampler diagnostics.
    pub tv_samples: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            n_vars: 12,
            alphabet: 4,
            components: 8,
            concentration: 0.5,
            n_train: 50_000,
            n_test: 10_000,
            data_seed: 2024,
            eval_seed: 7,
            seeds: (0..5).collect(),
            steps: 20_000,
            batch: 256,
            lr: LrSchedule::Decay {
                base: 1e-3,
                decay: crate::optim::Decay::Cosine,
                final_fraction: 0.0,
            },
            hidden_sizes: DEFAULT_HIDDEN_SIZES.to_vec(),
            outer_factor: DEFAULT_OUTER_FACTOR,
            eval_every: 1000,
            curve_size: 1000,
            arms: ObjectiveKind::ALL.to_vec(),
            tv_samples: 200_000,
        }
    }
}

impl AblationConfig {
    pub fn spec(&self) -> Result<LatticeSpec> {
        LatticeSpec::new(self.n_vars, self.alphabet)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        spec.require_exact()?;
        let fail = |msg: &str| Err(MacError::Validation(msg.into()));
        if self.arms.is_empty() || self.seeds.is_empty() {
            return fail("ablation needs at least one arm and one seed");
        }
        for (i, a) in self.arms.iter().enumerate() {
            if self.arms[..i].contains(a) {
                return fail("duplicate arm");
            }
        }
        if self.n_train == 0 || self.n_test == 0 {
            return fail("train and test sets must be non-empty");
        }
        if self.curve_size == 0 || self.curve_size > self.n_test {
            return fail("curve_size must lie in 1..=n_test");
        }
        NetworkConfig::new(&spec, self.hidden_sizes.clone())?;
        for &arm in &self.arms {
            self.train_config(arm, 0).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, arm: ObjectiveKind, seed: u64) -> TrainConfig {
        TrainConfig {
            objective: Objective::new(arm),
            batch: self.batch,
            steps: self.steps,
            lr: self.lr,
            optimizer: OptimizerKind::default(),
            seed,
            outer_factor: self.outer_factor,
            eval_every: self.eval_every.max(1),
        }
    }
}

/// The protocol an arm is scored with: MAC-trained arms use `W_MAC`,
/// the others the uniform protocol they were trained under.
pub fn eval_protocol(arm: ObjectiveKind) -> Protocol {
    match arm {
        ObjectiveKind::MacCr | ObjectiveKind::MacNocr => Protocol::Mac,
        _ => Protocol::Rnd,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: u64,
    /// Mean training loss over the preceding window; absent at step 0.
    pub train_loss: Option<f64>,
    pub eval_marginal_nll: f64,
    pub eval_joint_nll: f64,
}

impl From<&LogRow> for CurvePoint {
    fn from(r: &LogRow) -> Self {
        Self {
            step: r.step,
            train_loss: r.train_loss.is_finite().then_some(r.train_loss),
            eval_marginal_nll: r.eval_marginal_nll,
            eval_joint_nll: r.eval_joint_nll,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmResult {
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub eval_protocol: Protocol,
    /// Test marginal NLL under [`eval_protocol`].
    pub marginal_nll: f64,
    pub marginal_bpd: f64,
    /// Test joint NLL under [`eval_protocol`].
    pub joint_nll: f64,
    pub joint_bpd: f64,
    pub marginal_mac: SuiteResult,
    pub marginal_rnd: SuiteResult,
    pub joint_mac: f64,
    pub joint_rnd: f64,
    pub curve: Vec<CurvePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionStats {
    pub entropy_m: f64,
    pub entropy_mac: f64,
    pub entropy_rnd: f64,
    pub entropy_cr_mac: f64,
    pub entropy_cr_rnd: f64,
    pub tv_mac_rnd: f64,
    /// Empirical training-mask samplers against their exact tables.
    pub tv_sampler_mac_nocr: f64,
    pub tv_sampler_mac_cr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleStats {
    pub marginal_nll: f64,
    pub marginal_bpd: f64,
    pub joint_nll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub objective: ObjectiveKind,
    pub mean_marginal_nll: f64,
    pub std_marginal_nll: f64,
    pub mean_joint_nll: f64,
}

/// Seeds in which `better` scored no worse than `other`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseComparison {
    pub better: ObjectiveKind,
    pub other: ObjectiveKind,
    pub wins: usize,
    pub seeds: usize,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: AblationConfig,
    pub eval_mask_hash: u64,
    pub oracle: OracleStats,
    pub distributions: DistributionStats,
    pub arms: Vec<ArmResult>,
    pub summary: Vec<ArmSummary>,
    pub comparisons: Vec<PairwiseComparison>,
}

impl ExperimentReport {
    pub fn arm_results(&self, arm: ObjectiveKind) -> impl Iterator<Item = &ArmResult> {
        self.arms.iter().filter(move |r| r.objective == arm)
    }

    pub fn comparison(&self, better: ObjectiveKind, other: ObjectiveKind) -> Option<&PairwiseComparison> {
        self.comparisons.iter().find(|c| c.better == better && c.other == other)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per (arm, seed).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("objective\tseed\teval_protocol\tmarginal_nll\tmarginal_bpd\tjoint_nll\tmarginal_nll_mac\tmarginal_nll_rnd\n");
        for r in &self.arms {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                r.objective,
                r.seed,
                r.eval_protocol,
                r.marginal_nll,
                r.marginal_bpd,
                r.joint_nll,
                r.marginal_mac.nll,
                r.marginal_rnd.nll
            ));
        }
        out
    }
}

struct Shared {
    spec: LatticeSpec,
    train: Dataset,
    test: Dataset,
    masks: Vec<Mask>,
}

impl Shared {
    fn items(&self) -> Vec<(&Instance, Mask)> {
        self.test.instances().iter().zip(self.masks.iter().copied()).collect()
    }

    fn joint_items(&self) -> Vec<(&Instance, Mask)> {
        let full = self.spec.full_mask();
        self.test.instances().iter().map(|x| (x, full)).collect()
    }
}

fn build_shared(cfg: &AblationConfig) -> Result<(Shared, GroundTruth)> {
    let spec = cfg.spec()?;
    let mut rng = seeded(cfg.data_seed);
    let kind = SyntheticKind::RandomMixture {
        components: cfg.components,
        concentration: cfg.concentration,
    };
    let data = generate_synthetic(&kind, spec, cfg.n_train + cfg.n_test, &mut rng)?;
    let truth = data.truth().cloned().expect("synthetic data carries its truth");
    let (train, test) = data.split_at(cfg.n_train)?;
    let masks = draw_eval_masks(
        cfg.n_test,
        &MaskDistribution::card_mask(spec),
        1,
        &mut seeded(cfg.eval_seed),
    );
    Ok((
        Shared {
            spec,
            train,
            test,
            masks,
        },
        truth,
    ))
}

fn empirical(spec: LatticeSpec, masks: impl IntoIterator<Item = Mask>) -> Result<ProbTable> {
    let mut counts = vec![0.0; 1 << spec.n_vars()];
    for e in masks {
        counts[e.bits() as usize] += 1.0;
    }
    ProbTable::from_dense(spec, counts)?.normalized()
}

fn distribution_stats(cfg: &AblationConfig, spec: LatticeSpec) -> Result<DistributionStats> {
    let m = MaskDistribution::card_mask(spec);
    let mac = induced_node_table(&induced_edge_exact(&m, &Protocol::Mac)?)?;
    let rnd = induced_node_table(&induced_edge_exact(&m, &Protocol::Rnd)?)?;
    let cr_mac = reweight_cardinality(&mac)?;
    let cr_rnd = reweight_cardinality(&rnd)?;
    let n = cfg.tv_samples.max(1);
    let mut rng = substream(cfg.eval_seed, 1);
    let nocr = empirical(spec, sample_train_masks(n, &spec, &mut rng))?;
    let cr = empirical(spec, sample_reweighted_batch(n, &spec, cfg.outer_factor, &mut rng)?)?;
    Ok(DistributionStats {
        entropy_m: m.entropy(),
        entropy_mac: entropy(&mac),
        entropy_rnd: entropy(&rnd),
        entropy_cr_mac: entropy(&cr_mac),
        entropy_cr_rnd: entropy(&cr_rnd),
        tv_mac_rnd: tv_distance(&mac, &rnd)?,
        tv_sampler_mac_nocr: tv_distance(&nocr, &mac)?,
        tv_sampler_mac_cr: tv_distance(&cr, &cr_mac)?,
    })
}

fn oracle_stats(shared: &Shared, truth: &GroundTruth) -> OracleStats {
    let items = shared.items();
    let logs: Vec<f64> = items.iter().map(|&(x, e)| truth.log_marginal(x, e)).collect();
    let s = summarize(&items, &logs, shared.spec.n_vars());
    let full = shared.spec.full_mask();
    let joint = -shared
        .test
        .instances()
        .iter()
        .map(|x| truth.log_marginal(x, full))
        .sum::<f64>()
        / shared.test.len() as f64;
    OracleStats {
        marginal_nll: s.nll,
        marginal_bpd: s.bpd_observed,
        joint_nll: joint,
    }
}

fn run_arm(cfg: &AblationConfig, shared: &Shared, arm: ObjectiveKind, seed: u64) -> Result<ArmResult> {
    let protocol = eval_protocol(arm);
    let curve_set = EvalSet::new(
        shared.test.instances()[..cfg.curve_size].to_vec(),
        shared.masks[..cfg.curve_size].to_vec(),
        protocol,
        cfg.eval_seed,
    )?;
    let net = NetworkConfig::new(&shared.spec, cfg.hidden_sizes.clone())?;
    let model = MaskedMlp::init(net, seed)?;
    let tc = cfg.train_config(arm, seed);
    let (model, log) = train(
        model,
        shared.train.instances(),
        &tc,
        Some(&curve_set),
        &mut substream(seed, 1),
    )?;

    let items = shared.items();
    let joints = shared.joint_items();
    let score = |w: Protocol| -> Result<(SuiteResult, f64)> {
        let mut rng = substream(cfg.eval_seed, 2);
        let marginal = score_marginals(&model, &items, &w, &mut rng)?;
        let joint = score_marginals(&model, &joints, &w, &mut rng)?.nll;
        Ok((marginal, joint))
    };
    let (marginal_mac, joint_mac) = score(Protocol::Mac)?;
    let (marginal_rnd, joint_rnd) = score(Protocol::Rnd)?;
    let (own, joint_nll) = match protocol {
        Protocol::Mac => (marginal_mac, joint_mac),
        Protocol::Rnd => (marginal_rnd, joint_rnd),
    };
    let result = ArmResult {
        objective: arm,
        seed,
        eval_protocol: protocol,
        marginal_nll: own.nll,
        marginal_bpd: own.bpd_observed,
        joint_nll,
        joint_bpd: joint_nll / (shared.spec.n_vars() as f64 * LN_2),
        marginal_mac,
        marginal_rnd,
        joint_mac,
        joint_rnd,
        curve: log.rows.iter().map(CurvePoint::from).collect(),
    };
    let finite = [
        result.marginal_nll,
        result.joint_nll,
        joint_mac,
        joint_rnd,
        marginal_mac.nll,
        marginal_rnd.nll,
    ];
    if finite.iter().any(|v| !v.is_finite()) {
        return Err(MacError::DegenerateDistribution(format!(
            "{arm} seed {seed}: non-finite NLL"
        )));
    }
    Ok(result)
}

fn summarize_arms(cfg: &AblationConfig, arms: &[ArmResult]) -> Vec<ArmSummary> {
    cfg.arms
        .iter()
        .map(|&kind| {
            let vals: Vec<&ArmResult> = arms.iter().filter(|r| r.objective == kind).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().map(|r| r.marginal_nll).sum::<f64>() / n;
            let var = if vals.len() > 1 {
                vals.iter().map(|r| (r.marginal_nll - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            ArmSummary {
                objective: kind,
                mean_marginal_nll: mean,
                std_marginal_nll: var.sqrt(),
                mean_joint_nll: vals.iter().map(|r| r.joint_nll).sum::<f64>() / n,
            }
        })
        .collect()
}

fn compare(
    cfg: &AblationConfig,
    arms: &[ArmResult],
    better: ObjectiveKind,
    other: ObjectiveKind,
) -> PairwiseComparison {
    let find = |k: ObjectiveKind, s: u64| arms.iter().find(|r| r.objective == k && r.seed == s);
    let margins: Vec<f64> = cfg
        .seeds
        .iter()
        .filter_map(|&s| Some(find(other, s)?.marginal_nll - find(better, s)?.marginal_nll))
        .collect();
    PairwiseComparison {
        better,
        other,
        wins: margins.iter().filter(|&&m| m >= 0.0).count(),
        seeds: margins.len(),
        mean_margin: margins.iter().sum::<f64>() / margins.len().max(1) as f64,
    }
}

/// Trains every (arm, seed) job on up to `workers` threads and scores each
/// on the shared test set and eval masks. The report does not depend on
/// `workers`. `progress` is called as each job finishes.
pub fn run_ablation(
    cfg: &AblationConfig,
    workers: usize,
    progress: Option<&(dyn Fn(&ArmResult) + Sync)>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (shared, truth) = build_shared(cfg)?;
    let distributions = distribution_stats(cfg, shared.spec)?;
    let oracle = oracle_stats(&shared, &truth);

    let jobs: Vec<(ObjectiveKind, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.arms.iter().map(move |&a| (a, s)))
        .collect();
    let slots: Mutex<Vec<Option<Result<ArmResult>>>> = Mutex::new(jobs.iter().map(|_| None).collect());
    let next = AtomicUsize::new(0);
    thread::scope(|scope| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(arm, seed)) = jobs.get(i) else { break };
                let r = run_arm(cfg, &shared, arm, seed);
                if let (Ok(res), Some(f)) = (&r, progress) {
                    f(res);
                }
                let failed = r.is_err();
                slots.lock().expect("no job panics while holding the lock")[i] = Some(r);
                if failed {
                    next.store(jobs.len(), Ordering::Relaxed);
                }
            });
        }
    });
    let arms = slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .flatten()
        .collect::<Result<Vec<_>>>()?;

    let summary = summarize_arms(cfg, &arms);
    let mut comparisons = Vec::new();
    for (better, other) in [
        (ObjectiveKind::MacCr, ObjectiveKind::MacNocr),
        (ObjectiveKind::MacCr, ObjectiveKind::Ardm),
        (ObjectiveKind::RndCr, ObjectiveKind::RndNocr),
        (ObjectiveKind::MacNocr, ObjectiveKind::RndNocr),
        (ObjectiveKind::MacCr, ObjectiveKind::RndCr),
    ] {
        if cfg.arms.contains(&better) && cfg.arms.contains(&other) {
            comparisons.push(compare(cfg, &arms, better, other));
        }
    }
    Ok(ExperimentReport {
        config: cfg.clone(),
        eval_mask_hash: mask_stream_hash(shared.masks.iter().copied()),
        oracle,
        distributions,
        arms,
        summary,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> AblationConfig {
        AblationConfig {
            n_vars: 5,
            alphabet: 3,
            components: 3,
            n_train: 200,
            n_test: 50,
            seeds: vec![0, 1],
            steps: 0,
            batch: 16,
            hidden_sizes: vec![8],
            outer_factor: 4,
            eval_every: 5,
            curve_size: 20,
            tv_samples: 1000,
            ..AblationConfig::default()
        }
    }

    #[test]
    fn untrained_arms_agree() {
        let r = run_ablation(&tiny(), 1, None).unwrap();
        assert_eq!(r.arms.len(), 10);
        for seed in [0, 1] {
            let of_seed: Vec<&ArmResult> = r.arms.iter().filter(|a| a.seed == seed).collect();
            for a in &of_seed {
                assert_eq!(a.marginal_mac.nll, of_seed[0].marginal_mac.nll);
                assert_eq!(a.marginal_rnd.nll, of_seed[0].marginal_rnd.nll);
                assert_eq!(a.marginal_mac.mask_hash, r.eval_mask_hash);
            }
        }
        assert!(r.oracle.marginal_nll < r.arms[0].marginal_nll);
    }

    #[test]
    fn report_independent_of_workers() {
        let cfg = AblationConfig { steps: 12, ..tiny() };
        let a = run_ablation(&cfg, 1, None).unwrap();
        let b = run_ablation(&cfg, 3, None).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.arms[0].curve.len(), 4);
        assert_eq!(a.arms[0].curve[0].train_loss, None);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(AblationConfig { arms: vec![], ..tiny() }.validate().is_err());
        assert!(AblationConfig {
            arms: vec![ObjectiveKind::Ardm; 2],
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(AblationConfig {
            curve_size: 51,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(AblationConfig { n_vars: 21, ..tiny() }.validate().is_err());
        assert!(serde_json::from_str::<AblationConfig>(r#"{"n_var": 3}"#).is_err());
    }
}
