use mac_core::engine::{eval_marginal, Objective, ObjectiveKind};
use mac_core::harness::{format_masked_csv, parse_masked_csv, Dataset};
use mac_core::model::{
    init_network, oracle_from_joint, ConditionalModel, Instance, JointTable, MaskedMlp, NetworkConfig,
};
use mac_core::rng::seeded;
use mac_core::{LatticeSpec, Mask, Protocol};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn brute(joint: &JointTable, x: &Instance, e: Mask) -> f64 {
    (0..joint.probs().len())
        .filter(|&i| {
            let y = joint.instance_at(i);
            e.iter().all(|j| y.get(j) == x.get(j))
        })
        .map(|i| joint.probs()[i])
        .sum()
}

fn random_instance(spec: &LatticeSpec, rng: &mut impl Rng) -> Instance {
    let k = spec.alphabet_size() as u32;
    Instance::new((0..spec.n_vars()).map(|_| rng.random_range(0..k)).collect(), spec).unwrap()
}

fn random_network(spec: &LatticeSpec, seed: u64) -> MaskedMlp {
    let config = NetworkConfig::new(spec, vec![6]).unwrap();
    let mut rng = seeded(seed);
    let mut params = init_network(&config, &mut rng).unwrap();
    for p in params.as_mut_slice() {
        *p += rng.random_range(-1.0..1.0);
    }
    MaskedMlp::new(config, params).unwrap()
}

fn lattice() -> impl Strategy<Value = LatticeSpec> {
    (1usize..=6, 2usize..=3).prop_map(|(n, k)| LatticeSpec::new(n, k).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_marginals_are_exact_under_any_protocol(spec in lattice(), seed in any::<u64>(), bits in any::<u64>()) {
        let mut rng = seeded(seed);
        let joint = JointTable::random(spec, &mut rng).unwrap();
        let oracle = oracle_from_joint(joint.clone());
        let x = random_instance(&spec, &mut rng);
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        let expected = brute(&joint, &x, e).ln();
        let mac = eval_marginal(&oracle, &x, e, &Protocol::Mac, &mut rng).unwrap();
        let rnd = eval_marginal(&oracle, &x, e, &Protocol::Rnd, &mut rng).unwrap();
        prop_assert!((mac - expected).abs() < 1e-9);
        prop_assert!((rnd - expected).abs() < 1e-9);
        prop_assert!((mac - rnd).abs() < 1e-9);
    }

    #[test]
    fn oracle_conditionals_are_ratios_of_sums(spec in lattice(), seed in any::<u64>(), bits in any::<u64>()) {
        let mut rng = seeded(seed);
        let joint = JointTable::random(spec, &mut rng).unwrap();
        let oracle = oracle_from_joint(joint.clone());
        let x = random_instance(&spec, &mut rng);
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        let pred = oracle.predict_all(&x, e).unwrap();
        for j in e.complement(spec.n_vars()).iter() {
            let p = oracle.log_conditional(&x, j, e).unwrap().exp();
            prop_assert!((p - brute(&joint, &x, e.with(j)) / brute(&joint, &x, e)).abs() < 1e-12);
            prop_assert!((pred.get(j).unwrap().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_is_permutation_equivariant(spec in lattice(), seed in any::<u64>(), bits in any::<u64>()) {
        let n = spec.n_vars();
        let mut rng = seeded(seed);
        let joint = JointTable::random(spec, &mut rng).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let relabel = |y: &Instance| {
            let mut v = vec![0u32; n];
            for i in 0..n {
                v[perm[i]] = y.values()[i];
            }
            Instance::new(v, &spec).unwrap()
        };
        let mut probs = vec![0.0; joint.probs().len()];
        for (i, &p) in joint.probs().iter().enumerate() {
            probs[joint.index_of(&relabel(&joint.instance_at(i)))] = p;
        }
        let permuted = oracle_from_joint(JointTable::new(spec, probs).unwrap());
        let oracle = oracle_from_joint(joint);
        let x = random_instance(&spec, &mut rng);
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        let pe = e.iter().fold(Mask::EMPTY, |acc, i| acc.with(perm[i]));
        let px = relabel(&x);
        for j in e.complement(n).iter() {
            let a = oracle.log_conditional(&x, j, e).unwrap();
            let b = permuted.log_conditional(&px, perm[j], pe).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn network_predictions_are_normalized(spec in lattice(), seed in any::<u64>(), bits in any::<u64>()) {
        let model = random_network(&spec, seed);
        let x = random_instance(&spec, &mut seeded(seed ^ 1));
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        for (_, probs) in model.predict_all(&x, e).unwrap().iter() {
            prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn mac_evaluation_ignores_the_seed(spec in lattice(), seed in any::<u64>(), bits in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let model = random_network(&spec, seed);
        let x = random_instance(&spec, &mut seeded(seed));
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        let first = eval_marginal(&model, &x, e, &Protocol::Mac, &mut seeded(a)).unwrap();
        let second = eval_marginal(&model, &x, e, &Protocol::Mac, &mut seeded(b)).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn network_chain_rule_step_is_exact(spec in lattice(), seed in any::<u64>(), bits in 1u64..) {
        let model = random_network(&spec, seed);
        let x = random_instance(&spec, &mut seeded(seed));
        let e = Mask::from_bits(bits & spec.full_mask().bits());
        prop_assume!(!e.is_empty());
        let j = e.max_element().unwrap();
        let rest = e.without(j);
        let mut rng = seeded(0);
        let whole = eval_marginal(&model, &x, e, &Protocol::Mac, &mut rng).unwrap();
        let part = eval_marginal(&model, &x, rest, &Protocol::Mac, &mut rng).unwrap();
        prop_assert_eq!(whole, part + model.log_conditional(&x, j, rest).unwrap());
    }

    #[test]
    fn training_masks_are_never_full(n in 1usize..=16, seed in any::<u64>(), arm in 0usize..5) {
        let spec = LatticeSpec::binary(n).unwrap();
        let objective = Objective::new(ObjectiveKind::ALL[arm]);
        let masks = objective.training_masks(64, &spec, 8, &mut seeded(seed)).unwrap();
        prop_assert_eq!(masks.len(), 64);
        prop_assert!(masks.iter().all(|e| e.cardinality() < n && spec.contains_mask(*e)));
    }

    #[test]
    fn dataset_csv_round_trips(spec in lattice(), seed in any::<u64>(), rows in 0usize..40) {
        let mut rng = seeded(seed);
        let instances: Vec<Instance> = (0..rows).map(|_| random_instance(&spec, &mut rng)).collect();
        let d = Dataset::new(spec, instances.clone()).unwrap();
        let back = Dataset::from_csv(&d.to_csv()).unwrap();
        prop_assert_eq!(back.spec(), spec);
        prop_assert_eq!(back.instances(), &instances[..]);
    }

    #[test]
    fn masked_csv_round_trips(spec in lattice(), seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let rows: Vec<(Instance, Mask)> = (0..10)
            .map(|_| {
                let e = Mask::from_bits(rng.random_range(0..=spec.full_mask().bits()));
                let x = random_instance(&spec, &mut rng);
                let kept = Instance::new(
                    (0..spec.n_vars()).map(|i| if e.contains(i) { x.values()[i] } else { 0 }).collect(),
                    &spec,
                ).unwrap();
                (kept, e)
            })
            .collect();
        let (back_spec, back) = parse_masked_csv(&format_masked_csv(&spec, &rows)).unwrap();
        prop_assert_eq!(back_spec, spec);
        prop_assert_eq!(back, rows);
    }
}
