#![allow(dead_code)]

use flextune::{Float, LabeledDataset, Layer, Network, Rng, Tensor, Unit, UnitRole};

/// Small image classifier on `[1, 4, 4]` inputs with `units` units and three classes.
pub fn small_net(units: usize, hidden: usize, seed: u64) -> Network {
    let channels = 2;
    let mut layers = vec![vec![Layer::conv2d(1, channels, 3, 1, 1), Layer::relu(), Layer::flatten()]];
    let mut width = channels * 16;
    for _ in 1..units {
        layers.last_mut().unwrap().extend([Layer::dense(width, hidden), Layer::relu()]);
        layers.push(Vec::new());
        width = hidden;
    }
    layers.last_mut().unwrap().push(Layer::dense(width, 3));
    let units = layers
        .into_iter()
        .enumerate()
        .map(|(i, layers)| Unit {
            name: format!("u{}", i + 1),
            role: UnitRole::Standard,
            layers,
        })
        .collect();
    let mut net = Network::new("small", vec![1, 4, 4], 3, units).unwrap();
    net.init_params(&mut Rng::new(seed));
    net
}

pub fn random_data(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = Rng::new(seed);
    let images = Tensor::from_fn(&[n, 1, 4, 4], |_| rng.uniform() as Float);
    let labels = (0..n).map(|i| i % 3).collect();
    LabeledDataset::new(images, labels, 3).unwrap()
}

pub fn unit_bits(net: &Network, index: usize) -> Vec<u64> {
    net.units()[index - 1]
        .params()
        .flat_map(|p| p.value.data().iter().map(|v| v.to_bits() as u64))
        .collect()
}
