//! Train a small network with the MAC objective on synthetic mixture data,
//! then score it against the exact ground truth.
//!
//! `cargo run --release --example train_mac -- [steps] [objective]`

use mac_core::distribution::MaskDistribution;
use mac_core::engine::{train, EvalSet, ObjectiveKind, TrainConfig};
use mac_core::harness::{draw_eval_masks, eval_protocol, generate_synthetic, SyntheticKind};
use mac_core::model::{MaskedMlp, NetworkConfig};
use mac_core::optim::{Decay, LrSchedule};
use mac_core::rng::seeded;
use mac_core::LatticeSpec;

fn main() -> mac_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1500);
    let objective: ObjectiveKind = match args.next() {
        Some(a) => a.parse()?,
        None => ObjectiveKind::MacCr,
    };

    let spec = LatticeSpec::new(8, 3)?;
    let mut rng = seeded(0);
    let kind = SyntheticKind::RandomMixture {
        components: 4,
        concentration: 0.5,
    };
    let data = generate_synthetic(&kind, spec, 6000, &mut rng)?;
    let (train_set, test_set) = data.split_at(5000)?;

    let masks = draw_eval_masks(test_set.len(), &MaskDistribution::card_mask(spec), 1, &mut rng);
    let eval = EvalSet::new(test_set.instances().to_vec(), masks, eval_protocol(objective), 3)?;
    let truth = data.truth().expect("synthetic data has ground truth");
    let oracle = eval.evaluate(truth)?;

    let cfg = TrainConfig {
        steps,
        batch: 128,
        lr: LrSchedule::Decay {
            base: 3e-3,
            decay: Decay::Cosine,
            final_fraction: 0.0,
        },
        eval_every: (steps / 5).max(1),
        ..TrainConfig::new(objective)
    };
    let model = MaskedMlp::init(NetworkConfig::new(&spec, vec![64])?, 0)?;
    let (_model, log) = train(model, train_set.instances(), &cfg, Some(&eval), &mut rng)?;

    println!("objective {objective}, eval protocol {}", eval.protocol());
    print!("{}", log.to_tsv());
    println!(
        "ground truth: marginal {:.4}  joint {:.4}",
        oracle.marginal_nll, oracle.joint_nll
    );
    Ok(())
}
