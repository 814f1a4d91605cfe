//! Decompose a mask into a path down the subset lattice under both protocols.
//!
//! Run with `cargo run --example lattice_walk`.

use mac_core::protocol::simulate_path;
use mac_core::rng::seeded;
use mac_core::{make_mask, LatticeSpec, Protocol};

fn main() -> mac_core::Result<()> {
    let spec = LatticeSpec::binary(6)?;
    let e = make_mask(&[0, 2, 3, 5], &spec)?;
    println!("mask {} (|e| = {})", e.to_bitstring(spec.n_vars()), e.cardinality());

    let mut rng = seeded(11);
    for w in [Protocol::Mac, Protocol::Rnd] {
        for trial in 0..3 {
            let path = simulate_path(&w, e, &mut rng)?;
            let steps: Vec<String> = path
                .edges()
                .iter()
                .map(|edge| format!("-{}→{}", edge.target(), edge.source().to_bitstring(spec.n_vars())))
                .collect();
            println!("{w} #{trial}: {}  ordering {:?}", steps.join(" "), path.ordering());
        }
    }
    Ok(())
}
