//! Training-mask samplers compared with the exact node distributions they target.

use std::collections::HashMap;

use mac_core::distribution::{
    induced_edge_exact, induced_node_table, reweight_cardinality, sample_reweighted_batch, sample_test_masks,
    sample_train_masks, MaskDistribution, ProbTable,
};
use mac_core::rng::seeded;
use mac_core::{LatticeSpec, Mask, Protocol};

fn cardinality_histogram(masks: &[Mask], n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n + 1];
    for e in masks {
        h[e.cardinality()] += 1.0 / masks.len() as f64;
    }
    h
}

fn show(label: &str, h: &[f64]) {
    let cells: Vec<String> = h.iter().map(|p| format!("{p:.3}")).collect();
    println!("{label:>14}: {}", cells.join(" "));
}

fn main() -> mac_core::Result<()> {
    let n = 8;
    let spec = LatticeSpec::binary(n)?;
    let mut rng = seeded(5);
    let draws = 200_000;

    let test = sample_test_masks(draws, &spec, &mut rng);
    let train = sample_train_masks(draws, &spec, &mut rng);
    let cr = sample_reweighted_batch(draws, &spec, 100, &mut rng)?;

    let m = MaskDistribution::card_mask(spec);
    let mac: ProbTable = induced_node_table(&induced_edge_exact(&m, &Protocol::Mac)?)?;
    let cr_mac = reweight_cardinality(&mac)?;

    println!("cardinality histograms, |e| = 0..{n}");
    show("test", &cardinality_histogram(&test, n));
    show("train", &cardinality_histogram(&train, n));
    show("exact mac", &mac.cardinality_marginal());
    show("train cr", &cardinality_histogram(&cr, n));
    show("exact cr mac", &cr_mac.cardinality_marginal());

    let distinct: HashMap<u64, usize> = train.iter().fold(HashMap::new(), |mut acc, e| {
        *acc.entry(e.bits()).or_default() += 1;
        acc
    });
    println!("distinct training nodes: {} of {}", distinct.len(), 1usize << n);
    println!("full mask drawn: {}", distinct.contains_key(&spec.full_mask().bits()));
    Ok(())
}
