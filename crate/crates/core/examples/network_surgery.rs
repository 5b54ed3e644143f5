//! Build proxy networks by transplanting one unit from a fine-tuned donor.

use flextune::*;

fn main() -> Result<()> {
    let base = Architecture::Mnist4.build_initialized(&[1, 16, 16], 10, &mut Rng::new(1))?;
    let mut donor = base.clone();
    donor.init_params(&mut Rng::new(2));
    let x = synth_dataset(&Rng::new(3), 20, 10)?.images;

    for l in 1..=base.num_units() {
        let proxy = Network::surgery(&base, &donor, l)?;
        let changed: Vec<usize> = (1..=base.num_units())
            .filter(|&u| {
                let a: Vec<_> = proxy.unit(u).unwrap().params().map(|p| p.value.clone()).collect();
                let b: Vec<_> = base.unit(u).unwrap().params().map(|p| p.value.clone()).collect();
                a != b
            })
            .collect();
        println!("proxy-{l}: units differing from base {changed:?}");
    }
    let same = Network::surgery(&base, &base, 3)?;
    assert_eq!(same.forward(&x)?, base.forward(&x)?);
    println!("surgery(base, base, 3) reproduces the base network");
    Ok(())
}
