//! Compare the network's analytic gradient with central finite differences.

use mac_core::distribution::sample_train_masks;
use mac_core::model::{init_network, Instance, MaskedMlp, NetworkConfig, TrainableModel, WeightedExample};
use mac_core::rng::seeded;
use mac_core::LatticeSpec;
use rand::Rng;

fn main() -> mac_core::Result<()> {
    let spec = LatticeSpec::new(5, 3)?;
    let config = NetworkConfig::new(&spec, vec![7, 6])?;
    let mut rng = seeded(2);
    let mut params = init_network(&config, &mut rng)?;
    // the output layer starts at zero; perturb everything so all paths carry signal
    for p in params.as_mut_slice() {
        *p += rng.random_range(-0.3..0.3);
    }
    let mut model = MaskedMlp::new(config, params)?;

    let xs: Vec<Instance> = (0..6)
        .map(|_| Instance::new((0..5).map(|_| rng.random_range(0..3)).collect(), &spec))
        .collect::<mac_core::Result<_>>()?;
    let masks = sample_train_masks(xs.len(), &spec, &mut rng);
    let batch: Vec<WeightedExample<'_>> = xs
        .iter()
        .zip(masks)
        .map(|(x, mask)| WeightedExample { x, mask, weight: 1.0 })
        .collect();

    let (_, grad) = model.loss_and_grad(&batch)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for (k, &analytic) in grad.iter().enumerate() {
        let orig = model.params()[k];
        model.params_mut()[k] = orig + h;
        let up = model.loss_and_grad(&batch)?.0;
        model.params_mut()[k] = orig - h;
        let down = model.loss_and_grad(&batch)?.0;
        model.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    println!("{} parameters, max relative error {worst:.3e}", grad.len());
    Ok(())
}
