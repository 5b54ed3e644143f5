//! Prepend a 1x1 convolution unit and undo a linear colour transform with it.

use flextune::domains::{stratified_partition, synth_dataset_with, Palette, SynthOptions};
use flextune::*;

fn main() -> Result<()> {
    let opts = SynthOptions { palette: Palette::Color, ..Default::default() };
    let data = synth_dataset_with(&Rng::new(1), 3000, 10, &opts)?;
    let parts = stratified_partition(&data, &[1500], &Rng::new(2))?;
    let source = subsample_and_split(
        &data.subset(&parts[0]),
        &SplitSpec { train: TrainSize::Fraction { fraction: 1.0 }, val: 200, test: 200, seed: 3 },
    )?;
    let mut pre = TrainConfig::default().with_seed(4);
    pre.early_stop.max_epochs = 25;
    let init = Architecture::Mnist4.build_initialized(&[3, 16, 16], 10, &mut Rng::new(5))?;
    let net = fine_tune(&init, &TrainableMask::all(4), &source.train, &source.val, &pre, &mut CostLedger::default())?
        .network;
    let target = subsample_and_split(
        &apply_shift(&data.subset(&parts[1]), &ShiftSpec::yuv(), &Rng::new(6))?,
        &SplitSpec { train: TrainSize::PerClass(100), val: 200, test: 200, seed: 7 },
    )?;
    println!("source test {:.3}, on YUV-mixed test {:.3}", evaluate_accuracy(&net, &source.test, 1)?, evaluate_accuracy(&net, &target.test, 1)?);

    let augmented = attach_pixel_unit(&net)?;
    let sel = Selector::new(TrainConfig::default().with_seed(8));
    let pixel = sel.baseline(&augmented, CandidateId::PixelUnit, &target)?;
    println!("pixel unit only ({} scalars): test {:.3}", pixel.candidates[0].trainable_scalars, pixel.test_accuracy);
    let conv = &pixel.chosen_outcome.network.unit(1)?.layers[0];
    println!("learned 1x1 weights {:?}", conv.params[0].value.data());
    Ok(())
}
