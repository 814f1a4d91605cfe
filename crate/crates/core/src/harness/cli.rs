//! The `mac` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use super::ablation::{eval_protocol, run_ablation, AblationConfig, ArmResult};
use super::config::RunConfig;
use super::data::{
    format_masked_csv, generate_synthetic, load_dataset, parse_masked_csv, save_dataset, GroundTruth, SyntheticKind,
};
use super::report::{dist_report, DistMode};
use super::suite::{draw_eval_masks, marginal_nll_suite, score_marginals, BpdNorm};
use crate::distribution::{sample_test_masks, MaskDistribution};
use crate::engine::{complete, eval_joint_elbo, train, EvalSet, Objective, ObjectiveKind};
use crate::error::{MacError, Result};
use crate::lattice::{LatticeSpec, Mask};
use crate::model::{ConditionalModel, Instance, MaskedMlp, NetworkConfig};
use crate::protocol::Protocol;
use crate::rng::{seeded, substream};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "MAC_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "mac",
    version,
    about = "Any-order autoregressive models with mask-tuned training"
)]
struct Cli {
    /// Run single-threaded with fixed-order reductions.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Induced mask distribution table for a lattice.
    Dist(DistArgs),
    /// Draw masks from a test or training sampler.
    SampleMasks(SampleMasksArgs),
    /// Generate a synthetic dataset with known ground truth.
    GenData(GenDataArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Score a checkpoint or ground truth on a dataset.
    Eval(EvalArgs),
    /// Fill in the missing entries of a masked CSV.
    Complete(CompleteArgs),
    /// Run the objective ablation.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct DistArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "mac,rnd")]
    protocols: Vec<Protocol>,
    /// Exact dynamic programming over the lattice.
    #[arg(long, conflicts_with = "samples")]
    exact: bool,
    /// Monte Carlo samples when not exact.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Sampler {
    Test,
    Ardm,
    RndNocr,
    RndCr,
    MacNocr,
    MacCr,
}

#[derive(Debug, Args)]
struct SampleMasksArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, value_enum, default_value = "test")]
    sampler: Sampler,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = crate::distribution::DEFAULT_OUTER_FACTOR)]
    outer_factor: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DataKind {
    Product,
    Mixture,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    alphabet: usize,
    #[arg(long, value_enum, default_value = "mixture")]
    kind: DataKind,
    #[arg(long, default_value_t = 8)]
    components: usize,
    #[arg(long, default_value_t = 0.5)]
    concentration: f64,
    #[arg(long)]
    count: usize,
    /// Extra instances drawn from the same distribution for a test split.
    #[arg(long, requires = "test_out")]
    test_count: Option<usize>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON written next to the data.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Training log TSV.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Held-out data scored at each log row.
    #[arg(long)]
    eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    eval_size: usize,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Metric {
    Marginal,
    Joint,
    Elbo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum NormArg {
    Observed,
    All,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false, args = ["ckpt", "truth"])]
struct ModelSource {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    source: ModelSource,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "marginal")]
    metric: Metric,
    #[arg(long, default_value = "mac")]
    protocol: Protocol,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 16)]
    order_samples: usize,
    #[arg(long, value_enum, default_value = "observed")]
    bpd_norm: NormArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CompleteArgs {
    #[command(flatten)]
    source: ModelSource,
    /// Masked CSV with `?` for missing entries.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    arms: Option<Vec<ObjectiveKind>>,
    #[arg(long)]
    workers: Option<usize>,
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code. Results go to stdout, diagnostics to stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = io::stdout();
    run_command_to(argv, &mut stdout.lock())
}

/// [`run_command`] writing results to `out`.
pub fn run_command_to<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

/// Worker threads: the available parallelism, capped by `MAC_THREADS`;
/// always 1 when deterministic.
pub fn worker_count(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .map_or(available, |n| n.min(available))
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let workers = worker_count(cli.deterministic);
    match cli.command {
        Command::Dist(a) => dist(a, workers, out),
        Command::SampleMasks(a) => sample_masks(a, out),
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Complete(a) => complete_cmd(a, out),
        Command::Ablate(a) => ablate(a, workers, out),
    }
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

fn dist(a: DistArgs, workers: usize, out: &mut dyn Write) -> Result<()> {
    let m = MaskDistribution::card_mask(LatticeSpec::binary(a.n)?);
    let mode = match (a.exact, a.samples) {
        (_, Some(samples)) => DistMode::MonteCarlo {
            samples,
            seed: a.seed,
            workers,
        },
        (true, None) => DistMode::Exact,
        (false, None) => return Err(MacError::invalid("pass --exact or --samples")),
    };
    let report = dist_report(&m, &a.protocols, mode)?;
    emit(&report.to_tsv(), a.out.as_deref(), out)
}

fn sample_masks(a: SampleMasksArgs, out: &mut dyn Write) -> Result<()> {
    let spec = LatticeSpec::binary(a.n)?;
    let mut rng = seeded(a.seed);
    let kind = match a.sampler {
        Sampler::Test => None,
        Sampler::Ardm => Some(ObjectiveKind::Ardm),
        Sampler::RndNocr => Some(ObjectiveKind::RndNocr),
        Sampler::RndCr => Some(ObjectiveKind::RndCr),
        Sampler::MacNocr => Some(ObjectiveKind::MacNocr),
        Sampler::MacCr => Some(ObjectiveKind::MacCr),
    };
    let masks = match kind {
        None => sample_test_masks(a.count, &spec, &mut rng),
        Some(k) => Objective::new(k).training_masks(a.count, &spec, a.outer_factor, &mut rng)?,
    };
    let mut text = String::new();
    for e in masks {
        text.push_str(&e.to_bitstring(a.n));
        text.push('\n');
    }
    emit(&text, a.out.as_deref(), out)
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let spec = LatticeSpec::new(a.n, a.alphabet)?;
    let components = match a.kind {
        DataKind::Product => 1,
        DataKind::Mixture => a.components,
    };
    let kind = SyntheticKind::RandomMixture {
        components,
        concentration: a.concentration,
    };
    let extra = a.test_count.unwrap_or(0);
    let data = generate_synthetic(&kind, spec, a.count + extra, &mut seeded(a.seed))?;
    let (train, test) = data.split_at(a.count)?;
    save_dataset(&train, &a.out)?;
    if let Some(path) = &a.test_out {
        save_dataset(&test, path)?;
    }
    if let (Some(path), Some(truth)) = (&a.truth, data.truth()) {
        truth.save(path)?;
    }
    writeln!(out, "wrote {} instances to {}", train.len(), a.out.display())?;
    Ok(())
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut run = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = a.steps {
        run.steps = s;
    }
    if let Some(s) = a.seed {
        run.seed = s;
    }
    let cfg = run.train_config(a.objective)?;
    let data = load_dataset(&a.data)?;
    let spec = data.spec();
    let eval = match &a.eval_data {
        Some(p) => {
            let held = load_dataset(p)?;
            if held.spec() != spec {
                return Err(MacError::Validation("eval data spec differs from training data".into()));
            }
            let n = a.eval_size.min(held.len());
            let instances = held.instances()[..n].to_vec();
            let masks = draw_eval_masks(n, &MaskDistribution::card_mask(spec), 1, &mut substream(cfg.seed, 3));
            Some(EvalSet::new(
                instances,
                masks,
                eval_protocol(cfg.objective.kind()),
                cfg.seed,
            )?)
        }
        None => None,
    };
    let model = MaskedMlp::init(NetworkConfig::new(&spec, run.hidden_sizes.clone())?, cfg.seed)?;
    let (mut model, log) = train(
        model,
        data.instances(),
        &cfg,
        eval.as_ref(),
        &mut substream(cfg.seed, 1),
    )?;
    model.set_step(cfg.steps);
    model.save(&a.out)?;
    if let Some(p) = &a.log {
        fs::write(p, log.to_tsv())?;
    }
    let last = log.final_row().expect("log has an initial row");
    writeln!(
        out,
        "objective={} steps={} train_loss={:.6} path_length={:.6} checkpoint={}",
        cfg.objective.kind(),
        last.step,
        last.train_loss,
        log.path_length_constant,
        a.out.display()
    )?;
    Ok(())
}

fn load_model(source: &ModelSource) -> Result<Box<dyn ConditionalModel>> {
    match (&source.ckpt, &source.truth) {
        (Some(p), _) => Ok(Box::new(MaskedMlp::load(p)?)),
        (None, Some(p)) => Ok(Box::new(GroundTruth::load(p)?)),
        (None, None) => Err(MacError::invalid("pass --ckpt or --truth")),
    }
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.source)?;
    let data = load_dataset(&a.data)?;
    if data.spec() != model.spec() {
        return Err(MacError::Validation("dataset spec differs from the model".into()));
    }
    let n = data.spec().n_vars();
    let mut rng = seeded(a.seed);
    let norm = match a.bpd_norm {
        NormArg::Observed => BpdNorm::Observed,
        NormArg::All => BpdNorm::AllVars,
    };
    match a.metric {
        Metric::Marginal => {
            let m = MaskDistribution::card_mask(data.spec());
            let r = marginal_nll_suite(&*model, &data, &m, &a.protocol, a.trials, &mut rng)?;
            writeln!(
                out,
                "metric=marginal protocol={} nll={:.6} bpd={:.6} queries={} mask_hash={:016x}",
                a.protocol,
                r.nll,
                r.bpd(norm),
                r.queries,
                r.mask_hash
            )?;
        }
        Metric::Joint => {
            let full = data.spec().full_mask();
            let items: Vec<(&Instance, Mask)> = data.instances().iter().map(|x| (x, full)).collect();
            let r = score_marginals(&*model, &items, &a.protocol, &mut rng)?;
            writeln!(
                out,
                "metric=joint protocol={} nll={:.6} bpd={:.6} queries={}",
                a.protocol, r.nll, r.bpd_all, r.queries
            )?;
        }
        Metric::Elbo => {
            let mut total = 0.0;
            for x in data.instances() {
                total -= eval_joint_elbo(&*model, x, a.order_samples, &mut rng)?;
            }
            let nll = total / data.len() as f64;
            writeln!(
                out,
                "metric=elbo order_samples={} nll={:.6} bpd={:.6} queries={}",
                a.order_samples,
                nll,
                nll / (n as f64 * std::f64::consts::LN_2),
                data.len()
            )?;
        }
    }
    Ok(())
}

fn complete_cmd(a: CompleteArgs, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.source)?;
    let (spec, rows) = parse_masked_csv(&fs::read_to_string(&a.input)?)?;
    if spec != model.spec() {
        return Err(MacError::Validation("input spec differs from the model".into()));
    }
    let mut rng = seeded(a.seed);
    let full = spec.full_mask();
    let filled = rows
        .iter()
        .map(|(x, e)| Ok((complete(&*model, x, *e, &mut rng)?, full)))
        .collect::<Result<Vec<_>>>()?;
    emit(&format_masked_csv(&spec, &filled), a.out.as_deref(), out)
}

fn ablate(a: AblateArgs, workers: usize, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => AblationConfig::load(p)?,
        None => AblationConfig::default(),
    };
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(arms) = a.arms {
        cfg.arms = arms;
    }
    let workers = a.workers.map_or(workers, |w| w.clamp(1, workers));
    fs::create_dir_all(a.out_dir.join("curves"))?;
    let progress = |r: &ArmResult| {
        eprintln!(
            "{} seed {}: marginal_nll={:.6} joint_nll={:.6}",
            r.objective, r.seed, r.marginal_nll, r.joint_nll
        );
    };
    let report = run_ablation(&cfg, workers, Some(&progress))?;
    fs::write(a.out_dir.join("report.json"), report.to_json()? + "\n")?;
    fs::write(a.out_dir.join("arms.tsv"), report.to_tsv())?;
    for r in &report.arms {
        let mut tsv = String::from("step\ttrain_loss\teval_marginal_nll\teval_joint_nll\n");
        for p in &r.curve {
            let loss = p.train_loss.map_or("nan".to_string(), |l| l.to_string());
            tsv.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                p.step, loss, p.eval_marginal_nll, p.eval_joint_nll
            ));
        }
        fs::write(
            a.out_dir
                .join("curves")
                .join(format!("{}_seed{}.tsv", r.objective, r.seed)),
            tsv,
        )?;
    }
    writeln!(out, "oracle marginal_nll={:.6}", report.oracle.marginal_nll)?;
    for s in &report.summary {
        writeln!(
            out,
            "{} marginal_nll={:.6}±{:.6} joint_nll={:.6}",
            s.objective, s.mean_marginal_nll, s.std_marginal_nll, s.mean_joint_nll
        )?;
    }
    for c in &report.comparisons {
        writeln!(
            out,
            "{} <= {}: {}/{} seeds, mean margin {:.6}",
            c.better, c.other, c.wins, c.seeds, c.mean_margin
        )?;
    }
    Ok(())
}
