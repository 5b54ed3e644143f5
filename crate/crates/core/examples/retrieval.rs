//! Nearest-neighbour retrieval of source images for shifted target queries.

use flextune::domains::stratified_partition;
use flextune::*;

fn main() -> Result<()> {
    let data = synth_dataset(&Rng::new(1), 3000, 10)?;
    let parts = stratified_partition(&data, &[1500], &Rng::new(2))?;
    let source = subsample_and_split(
        &data.subset(&parts[0]),
        &SplitSpec { train: TrainSize::Fraction { fraction: 1.0 }, val: 200, test: 200, seed: 3 },
    )?;
    let mut pre = TrainConfig::default().with_seed(4);
    pre.early_stop.max_epochs = 25;
    let init = Architecture::Mnist4.build_initialized(&[1, 16, 16], 10, &mut Rng::new(5))?;
    let net = fine_tune(&init, &TrainableMask::all(4), &source.train, &source.val, &pre, &mut CostLedger::default())?
        .network;
    let target = subsample_and_split(
        &apply_shift(&data.subset(&parts[1]), &ShiftSpec::Blur { sigma: 1.75 }, &Rng::new(6))?,
        &SplitSpec { train: TrainSize::PerClass(30), val: 200, test: 200, seed: 7 },
    )?;
    let cfg = TrainConfig::default().with_seed(8);
    let flex = flex_tune(&net, &target, &cfg)?;
    let fc = baseline(&net, CandidateId::Fc(1), &target, &cfg)?;

    let depth = net.num_units() - 1;
    let db = net.features_at(&source.val.images, depth)?;
    for (name, tuned) in [("pretrained", &net), ("ft-fc(1)", &fc.chosen_outcome.network), ("flex", &flex.chosen_outcome.network)] {
        let q = tuned.features_at(&target.test.images, depth)?;
        let r = retrieval_map(&q, &target.test.labels, &db, &source.val.labels, 10)?;
        println!("{name:<10} mAP@10 {:.3}", r.map);
    }
    println!("AP@4 of [hit, miss, hit, hit] = {:.4}", ap_at_k(1, &[1, 0, 1, 1], 4)?);
    Ok(())
}
