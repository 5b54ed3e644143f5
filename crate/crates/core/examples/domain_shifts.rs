//! Apply each synthetic domain shift and print a few statistics.

use flextune::domains::{synth_dataset_with, Palette, SynthOptions};
use flextune::*;

fn stats(d: &LabeledDataset) -> (f64, f64) {
    let v = d.images.data();
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / v.len() as f64;
    (mean, var.sqrt())
}

fn main() -> Result<()> {
    let gray = synth_dataset(&Rng::new(1), 100, 10)?;
    let color = synth_dataset_with(&Rng::new(1), 100, 10, &SynthOptions { palette: Palette::Color, ..Default::default() })?;
    let shifts = [
        ShiftSpec::Identity,
        ShiftSpec::Blur { sigma: 1.75 },
        ShiftSpec::Noise { sigma: 0.3 },
        ShiftSpec::Occlude { fraction: 0.4, random_location: true },
        ShiftSpec::AffineFixed { rotation: 25.0, scale: 0.9, translate: [1.0, 1.0] },
        ShiftSpec::AffineRandom { rotation: [-30.0, 30.0], scale: [0.8, 1.1], translate: [-2.0, 2.0] },
        ShiftSpec::yuv(),
        ShiftSpec::hsv_like(),
    ];
    for spec in &shifts {
        let src = if matches!(spec, ShiftSpec::ChannelMix { .. } | ShiftSpec::ChannelWarp { .. }) { &color } else { &gray };
        let out = apply_shift(src, spec, &Rng::new(2))?;
        let (m0, s0) = stats(src);
        let (m1, s1) = stats(&out);
        println!("{:<14} mean {m0:.3} -> {m1:.3}   std {s0:.3} -> {s1:.3}", spec.name());
    }
    println!("{}", serde_json::to_string(&ShiftSpec::Blur { sigma: 1.75 }).unwrap());
    Ok(())
}
