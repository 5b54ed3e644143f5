//! Pretrain the four-unit reference network on synthetic digits and save it.

use flextune::domains::{synth_dataset_with, SynthOptions};
use flextune::*;

fn main() -> Result<()> {
    let data = synth_dataset_with(&Rng::new(1), 2000, 10, &SynthOptions::default())?;
    let splits = subsample_and_split(
        &data,
        &SplitSpec {
            train: TrainSize::Fraction { fraction: 1.0 },
            val: 300,
            test: 300,
            seed: 2,
        },
    )?;
    let net = Architecture::Mnist4.build_initialized(&[1, 16, 16], 10, &mut Rng::new(3))?;
    println!("{}", net.descriptor());

    let mut cfg = TrainConfig::default().with_seed(4);
    cfg.early_stop.max_epochs = 30;
    let mut ledger = CostLedger::default();
    let out = fine_tune(&net, &TrainableMask::all(net.num_units()), &splits.train, &splits.val, &cfg, &mut ledger)?;
    for (epoch, acc) in &out.history {
        println!("epoch {epoch:>3}  val {acc:.3}");
    }
    println!(
        "kept epoch-{} snapshot: test accuracy {:.3}",
        out.epochs_trained,
        evaluate_accuracy(&out.network, &splits.test, 1)?
    );

    let path = std::env::temp_dir().join("flextune-pretrained.ckpt");
    save_checkpoint(&out.network, &path)?;
    let back = load_checkpoint(&path)?;
    assert_eq!(back.checksum(), out.network.checksum());
    println!("saved {}", path.display());
    Ok(())
}
