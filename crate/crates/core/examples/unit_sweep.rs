//! Validation and test accuracy of every single-unit candidate at several
//! training-set sizes, written as CSV.

use flextune::domains::stratified_partition;
use flextune::eval::to_csv_string;
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

    let mut ratios = Vec::new();
    for per_class in [3, 10, 30] {
        let s = subsample_and_split(
            &shifted,
            &SplitSpec { train: TrainSize::PerClass(per_class), val: 200, test: 200, seed: 7 },
        )?;
        ratios.push((per_class.to_string(), s));
    }
    let table = per_unit_sweep(&net, &ratios, &Selector::new(TrainConfig::default().with_seed(8)))?;
    print!("{}", to_csv_string(&table)?);
    for (r, _) in &ratios {
        println!("{r}/class: flex picks {}, test-best {}", table.selected(r).unwrap().candidate, table.test_best(r).unwrap().candidate);
    }
    Ok(())
}
