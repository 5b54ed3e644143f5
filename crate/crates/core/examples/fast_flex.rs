//! Fast and even-faster flex-tuning: rank units with surgery proxies instead
//! of training every candidate.

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
        &SplitSpec { train: TrainSize::PerClass(30), val: 300, test: 300, seed: 7 },
    )?;

    let sel = Selector::new(TrainConfig::default().with_seed(8));
    for strategy in [Strategy::Flex, Strategy::FastFlex, Strategy::FasterFlex] {
        let r = sel.run(strategy, &net, &target)?;
        let proxies = r
            .proxy_accuracies
            .as_ref()
            .map(|p| p.iter().map(|(id, a)| format!("{id}={a:.3}")).collect::<Vec<_>>().join(" "))
            .unwrap_or_default();
        println!(
            "{:<12} chose {:<7} test {:.3}  models {}  unit epochs {:>3}  full epochs {:>3}  {proxies}",
            r.strategy,
            r.chosen.to_string(),
            r.test_accuracy,
            r.ledger.trained_models(),
            r.ledger.single_unit_epochs,
            r.ledger.full_network_epochs
        );
    }
    Ok(())
}
