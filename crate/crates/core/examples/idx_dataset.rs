//! Write a dataset in the IDX format used by MNIST and read it back.

use flextune::domains::{load_idx, write_idx};
use flextune::*;

fn main() -> Result<()> {
    let data = synth_dataset(&Rng::new(1), 50, 10)?;
    let dir = std::env::temp_dir();
    let (images, labels) = (dir.join("flextune-images.idx3-ubyte"), dir.join("flextune-labels.idx1-ubyte"));
    write_idx(&data, &images, &labels)?;
    let back = load_idx(&images, &labels)?;
    println!("{} images of shape {:?}, class counts {:?}", back.len(), back.image_shape(), back.class_counts());
    assert_eq!(back.labels, data.labels);
    // pixels are stored as bytes, so values survive up to 1/255 quantisation
    let err = back.images.data().iter().zip(data.images.data()).map(|(a, b)| (a - b).abs()).fold(0.0, Float::max);
    println!("max pixel error after round trip {err:.4}");

    let bytes = std::fs::read(&labels)?;
    println!("label header {:02x?}", &bytes[..8]);
    Ok(())
}
