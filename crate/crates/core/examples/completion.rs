//! Fill in missing entries by sampling from a model's conditionals.

use mac_core::engine::complete;
use mac_core::harness::{format_masked_csv, parse_masked_csv, GroundTruth};
use mac_core::model::ProductMixture;
use mac_core::rng::seeded;
use mac_core::LatticeSpec;

fn main() -> mac_core::Result<()> {
    let spec = LatticeSpec::binary(4)?;
    // two modes: all zeros and all ones
    let lo = vec![vec![0.95, 0.05]; 4];
    let hi = vec![vec![0.05, 0.95]; 4];
    let truth = GroundTruth::Mixture(ProductMixture::new(spec, vec![0.5, 0.5], vec![lo, hi])?);

    let input = "n_vars=4,alphabet=2\n0,?,?,?\n1,1,?,?\n?,?,?,?\n0,?,1,?\n";
    let (spec, rows) = parse_masked_csv(input)?;
    let mut rng = seeded(9);
    let filled = rows
        .iter()
        .map(|(x, e)| Ok((complete(&truth, x, *e, &mut rng)?, spec.full_mask())))
        .collect::<mac_core::Result<Vec<_>>>()?;

    print!("input:\n{input}\ncompleted:\n{}", format_masked_csv(&spec, &filled));
    Ok(())
}
