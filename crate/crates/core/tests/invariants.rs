mod common;

use common::{random_data, small_net, unit_bits};
use flextune::checkpoint::{decode, encode};
use flextune::domains::stratified_partition;
use flextune::eval::nearest_neighbors;
use flextune::{
    ap_at_k, apply_shift, fine_tune, subsample_and_split, synth_dataset, train_fixed_epochs, CostLedger,
    EarlyStopConfig, Float, Network, Rng, ShiftSpec, SplitSpec, Tensor, TrainConfig, TrainSize, TrainableMask,
};
use proptest::prelude::*;

fn quick_config(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        learning_rate: 0.05,
        batch_size: 4,
        ..TrainConfig::default()
    }
    .with_seed(seed);
    cfg.early_stop = EarlyStopConfig {
        eval_every: 1,
        patience: 1,
        max_epochs: 2,
    };
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn frozen_units_are_bit_identical(units in 1usize..=4, seed in any::<u64>(), bits in prop::collection::vec(any::<bool>(), 4)) {
        let base = small_net(units, 4, seed);
        let trainable: Vec<usize> = (1..=units).filter(|&l| bits[l - 1]).collect();
        let mask = TrainableMask::units(trainable.iter().copied());
        let train = random_data(9, seed ^ 1);
        let val = random_data(6, seed ^ 2);
        let cfg = quick_config(seed);
        let fixed = train_fixed_epochs(&base, &mask, &train, 2, &cfg, &mut CostLedger::default()).unwrap();
        let tuned = fine_tune(&base, &mask, &train, &val, &cfg, &mut CostLedger::default()).unwrap();
        for l in (1..=units).filter(|l| !trainable.contains(l)) {
            prop_assert_eq!(unit_bits(&fixed, l), unit_bits(&base, l));
            prop_assert_eq!(unit_bits(&tuned.network, l), unit_bits(&base, l));
        }
    }

    #[test]
    fn surgery_replaces_exactly_one_unit(units in 1usize..=4, at in 1usize..=4, seed in any::<u64>()) {
        let at = at.min(units);
        let base = small_net(units, 3, seed);
        let donor = small_net(units, 3, seed.wrapping_add(1));
        let proxy = Network::surgery(&base, &donor, at).unwrap();
        for l in 1..=units {
            let want = if l == at { unit_bits(&donor, l) } else { unit_bits(&base, l) };
            prop_assert_eq!(unit_bits(&proxy, l), want);
        }
        let same = Network::surgery(&base, &base, at).unwrap();
        let x = random_data(4, seed).images;
        prop_assert_eq!(same.forward(&x).unwrap(), base.forward(&x).unwrap());
    }

    #[test]
    fn checkpoints_round_trip(units in 1usize..=4, hidden in 1usize..6, seed in any::<u64>()) {
        let net = small_net(units, hidden, seed);
        let back = decode(&encode(&net)).unwrap();
        prop_assert_eq!(back.checksum(), net.checksum());
        prop_assert_eq!(back.descriptor(), net.descriptor());
        let x = random_data(3, seed).images;
        prop_assert_eq!(back.forward(&x).unwrap(), net.forward(&x).unwrap());
    }

    #[test]
    fn shifts_keep_labels_and_range(sigma in 0.1f64..2.0, noise in 0.0f64..0.5, seed in any::<u64>()) {
        let data = synth_dataset(&Rng::new(seed), 20, 10).unwrap();
        for spec in [ShiftSpec::Blur { sigma }, ShiftSpec::Noise { sigma: noise }] {
            let out = apply_shift(&data, &spec, &Rng::new(seed)).unwrap();
            prop_assert_eq!(&out.labels, &data.labels);
            prop_assert!(out.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn splits_are_disjoint_and_balanced(per_class in 1usize..6, seed in any::<u64>()) {
        let data = synth_dataset(&Rng::new(seed), 200, 10).unwrap();
        let s = subsample_and_split(&data, &SplitSpec { train: TrainSize::PerClass(per_class), val: 30, test: 40, seed }).unwrap();
        prop_assert_eq!(s.train.len(), 10 * per_class);
        prop_assert!(s.train.class_counts().iter().all(|&c| c == per_class));
        prop_assert_eq!(s.val.len(), 30);
        prop_assert_eq!(s.test.len(), 40);
        let parts = stratified_partition(&data, &[50, 70], &Rng::new(seed)).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn average_precision_is_a_fraction(labels in prop::collection::vec(0usize..3, 10), k in 1usize..=10) {
        let ap = ap_at_k(1, &labels, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }
}

#[test]
fn neighbours_match_brute_force() {
    let mut rng = Rng::new(5);
    let q = Tensor::from_fn(&[200, 6], |_| (rng.below(4) as f64 * 0.5) as Float);
    let s = Tensor::from_fn(&[300, 6], |_| (rng.below(4) as f64 * 0.5) as Float);
    let nn = nearest_neighbors(&q, &s, 7).unwrap();
    for (i, got) in nn.iter().enumerate() {
        let mut d: Vec<(f64, usize)> = (0..300)
            .map(|j| (q.row(i).iter().zip(s.row(j)).map(|(a, b)| ((a - b) as f64).powi(2)).sum(), j))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        assert_eq!(*got, d[..7].iter().map(|x| x.1).collect::<Vec<_>>());
    }
}
