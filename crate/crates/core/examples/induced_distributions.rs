//! How often each lattice node is visited when test masks are decomposed,
//! and how concentrated those visits are per protocol.
//!
//! `cargo run --release --example induced_distributions -- 12`

use mac_core::distribution::{
    entropy, expected_cardinality, induced_edge_exact, induced_node_table, reweight_cardinality, tv_distance,
    MaskDistribution,
};
use mac_core::harness::{dist_report, DistMode};
use mac_core::{LatticeSpec, Protocol};

fn main() -> mac_core::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let m = MaskDistribution::card_mask(LatticeSpec::binary(n)?);

    println!("N = {n}, H(M) = {:.4} nats", m.entropy());
    let mut tables = Vec::new();
    for w in [Protocol::Mac, Protocol::Rnd] {
        let edges = induced_edge_exact(&m, &w)?;
        let nodes = induced_node_table(&edges)?;
        let stats = expected_cardinality(&edges);
        println!(
            "{w}: H(nodes) = {:.4}, H(cr nodes) = {:.4}, distinct nodes = {}, mean source size = {:.3}",
            entropy(&nodes),
            entropy(&reweight_cardinality(&nodes)?),
            nodes.entries().len(),
            stats.edge_expectation
        );
        tables.push(nodes);
    }
    println!("TV(mac, rnd) = {:.4}", tv_distance(&tables[0], &tables[1])?);

    if n <= 4 {
        let report = dist_report(&m, &[Protocol::Mac, Protocol::Rnd], DistMode::Exact)?;
        print!("\n{}", report.to_tsv());
    }
    Ok(())
}
