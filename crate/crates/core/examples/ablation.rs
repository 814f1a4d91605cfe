//! Compare the five training objectives on shared data and eval masks.
//!
//! The defaults are the full ablation (N=12, 5 seeds, 20k steps per arm);
//! pass a step count and seed count to shrink it:
//! `cargo run --release --example ablation -- 2000 2`.

use mac_core::harness::{run_ablation, worker_count, AblationConfig, ArmResult};

fn main() -> mac_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = AblationConfig::default();
    if let Some(steps) = args.next().and_then(|a| a.parse().ok()) {
        cfg.steps = steps;
    }
    if let Some(seeds) = args.next().and_then(|a| a.parse::<u64>().ok()) {
        cfg.seeds = (0..seeds).collect();
    }

    let progress = |r: &ArmResult| println!("  {:<9} seed {}  marginal {:.4}", r.objective, r.seed, r.marginal_nll);
    let report = run_ablation(&cfg, worker_count(false), Some(&progress))?;

    println!("\nground truth marginal NLL {:.4}", report.oracle.marginal_nll);
    println!(
        "node entropy: mac {:.3}  rnd {:.3}  cr-mac {:.3}",
        report.distributions.entropy_mac, report.distributions.entropy_rnd, report.distributions.entropy_cr_mac
    );
    for s in &report.summary {
        println!(
            "{:<9} {:.4} ± {:.4}",
            s.objective, s.mean_marginal_nll, s.std_marginal_nll
        );
    }
    for c in &report.comparisons {
        println!("{} ≤ {} in {}/{} seeds", c.better, c.other, c.wins, c.seeds);
    }
    Ok(())
}
