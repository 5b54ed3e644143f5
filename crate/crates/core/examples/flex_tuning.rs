//! Flex-tuning: fine-tune each unit and all units, keep the best on validation.

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

    let shifted = apply_shift(&data.subset(&parts[1]), &ShiftSpec::Blur { sigma: 1.75 }, &Rng::new(6))?;
    let target = subsample_and_split(
        &shifted,
        &SplitSpec { train: TrainSize::PerClass(10), val: 300, test: 300, seed: 7 },
    )?;
    println!("pretrained net on blurred test: {:.3}", evaluate_accuracy(&net, &target.test, 1)?);

    let report = flex_tune(&net, &target, &TrainConfig::default().with_seed(8))?;
    for c in &report.candidates {
        println!("{:<7} val {:.3}  epochs {:>3}  trainable {:>6}", c.id.to_string(), c.val_accuracy, c.epochs, c.trainable_scalars);
    }
    println!("chose {} -> test {:.3}", report.chosen, report.test_accuracy);
    println!("{:?}", report.ledger);
    Ok(())
}
