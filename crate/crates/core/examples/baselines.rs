//! Standard fine-tuning baselines: last fc layer(s), scale-and-shift, everything.

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
    let shift = ShiftSpec::AffineFixed { rotation: 25.0, scale: 0.9, translate: [1.0, 1.0] };
    let target = subsample_and_split(
        &apply_shift(&data.subset(&parts[1]), &shift, &Rng::new(6))?,
        &SplitSpec { train: TrainSize::PerClass(30), val: 300, test: 300, seed: 7 },
    )?;

    let cfg = TrainConfig::default().with_seed(8);
    for kind in [CandidateId::Fc(1), CandidateId::Fc(2), CandidateId::ScaleShift, CandidateId::All] {
        let r = baseline(&net, kind, &target, &cfg)?;
        println!(
            "{:<8} trainable {:>6}  val {:.3}  test {:.3}",
            r.strategy,
            r.candidates[0].trainable_scalars,
            r.chosen_outcome.val_accuracy,
            r.test_accuracy
        );
    }
    Ok(())
}
