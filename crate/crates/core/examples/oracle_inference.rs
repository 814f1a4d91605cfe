//! Exact marginals of a random joint table through chain-rule decomposition.
//!
//! With an exact model every path gives the same answer, so `W_MAC`, `W_RND`
//! and the order-averaged joint all agree with brute-force summation.

use mac_core::engine::{eval_joint, eval_joint_elbo, eval_marginal};
use mac_core::model::{oracle_from_joint, Instance, JointTable};
use mac_core::rng::seeded;
use mac_core::{LatticeSpec, Mask, Protocol};
use rand::Rng;

fn main() -> mac_core::Result<()> {
    let spec = LatticeSpec::new(5, 3)?;
    let mut rng = seeded(1);
    let joint = JointTable::random(spec, &mut rng)?;
    let oracle = oracle_from_joint(joint.clone());

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let x = joint.sample(&mut rng);
        let e = Mask::from_bits(rng.random_range(0..1u64 << spec.n_vars()));
        let brute = joint.marginal(&x, e).ln();
        for w in [Protocol::Mac, Protocol::Rnd] {
            worst = worst.max((eval_marginal(&oracle, &x, e, &w, &mut rng)? - brute).abs());
        }
    }
    println!("max |chain rule - brute force| over 400 queries: {worst:.2e}");

    let x = Instance::new(vec![2, 0, 1, 1, 0], &spec)?;
    println!(
        "log p(x)       mac   {:.12}",
        eval_joint(&oracle, &x, &Protocol::Mac, &mut rng)?
    );
    println!(
        "log p(x)       rnd   {:.12}",
        eval_joint(&oracle, &x, &Protocol::Rnd, &mut rng)?
    );
    println!(
        "order-averaged (16)  {:.12}",
        eval_joint_elbo(&oracle, &x, 16, &mut rng)?
    );
    println!("table                {:.12}", joint.prob(&x).ln());
    Ok(())
}
