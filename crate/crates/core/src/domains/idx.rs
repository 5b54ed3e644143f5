//! IDX files as distributed for MNIST: big-endian magic `0x0000_08_NN`
//! (unsigned bytes, `NN` dimensions), one big-endian `u32` per dimension,
//! then the raw bytes.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Parses one IDX buffer of unsigned bytes into `(dims, payload)`.
pub fn parse_idx(bytes: &[u8], expected_magic: u32) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(Error::Format("IDX file shorter than its magic".into()));
    }
    let magic = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(Error::Format(format!(
            "bad IDX magic {magic:#010x}, expected {expected_magic:#010x}"
        )));
    }
    let ndim = (magic & 0xff) as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| u32::from_be_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize)
        .collect();
    let payload = dims.iter().product::<usize>();
    let body = &bytes[header..];
    if body.len() < payload {
        return Err(Error::Format(format!(
            "truncated IDX payload: {} of {payload} bytes",
            body.len()
        )));
    }
    if body.len() > payload {
        return Err(Error::Format(format!(
            "{} unexpected bytes after IDX payload",
            body.len() - payload
        )));
    }
    Ok((dims, body))
}

/// Reads an image/label IDX pair; pixels are rescaled by `1/255`.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let img_bytes = fs::read(images_path)?;
    let lbl_bytes = fs::read(labels_path)?;
    let (idims, pixels) = parse_idx(&img_bytes, IDX_IMAGES_MAGIC)?;
    let (ldims, labels) = parse_idx(&lbl_bytes, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(Error::Data(format!(
            "image file holds {} items, label file {}",
            idims[0], ldims[0]
        )));
    }
    if idims[0] == 0 {
        return Err(Error::EmptyDataset);
    }
    let labels: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let images = Tensor::new(
        vec![idims[0], 1, idims[1], idims[2]],
        pixels.iter().map(|&b| b as Float / 255.0).collect(),
    )?;
    LabeledDataset::new(images, labels, classes)
}

/// Writes a dataset as an IDX pair (first channel only, quantized to bytes).
pub fn write_idx(data: &LabeledDataset, images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<()> {
    let s = data.images.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut img = Vec::with_capacity(16 + n * h * w);
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [n, h, w] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    for i in 0..n {
        let plane = &data.images.row(i)[..h * w];
        debug_assert!(c >= 1);
        img.extend(plane.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lbl = Vec::with_capacity(8 + n);
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(n as u32).to_be_bytes());
    for &l in &data.labels {
        let b = u8::try_from(l).map_err(|_| Error::Data(format!("label {l} does not fit a byte")))?;
        lbl.push(b);
    }
    fs::write(images_path, img)?;
    fs::write(labels_path, lbl)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, fill: u8) -> Vec<u8> {
        let mut v = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [n, rows, cols] {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v.extend(std::iter::repeat_n(fill, (n * rows * cols) as usize));
        v
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut v = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
        v.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        v.extend_from_slice(labels);
        v
    }

    fn write_pair(img: &[u8], lbl: &[u8]) -> (tempfile::TempDir, std::path::PathBuf, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("img.idx"), dir.path().join("lbl.idx"));
        fs::write(&a, img).unwrap();
        fs::write(&b, lbl).unwrap();
        (dir, a, b)
    }

    #[test]
    fn canonical_ten_thousand_item_pair() {
        let labels: Vec<u8> = (0..10_000).map(|i| (i % 10) as u8).collect();
        let (_d, a, b) = write_pair(&idx_images(10_000, 28, 28, 255), &idx_labels(&labels));
        let data = load_idx(&a, &b).unwrap();
        assert_eq!(data.len(), 10_000);
        assert_eq!(data.image_shape(), &[1, 28, 28]);
        assert_eq!(data.classes, 10);
        assert!(data.images.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn count_mismatch_is_an_error() {
        let (_d, a, b) = write_pair(&idx_images(3, 2, 2, 0), &idx_labels(&[0, 1]));
        assert!(matches!(load_idx(&a, &b), Err(Error::Data(_))));
    }

    #[test]
    fn bad_magic_and_truncation() {
        let mut img = idx_images(2, 2, 2, 7);
        assert!(parse_idx(&img, IDX_LABELS_MAGIC).is_err());
        img.pop();
        assert!(matches!(parse_idx(&img, IDX_IMAGES_MAGIC), Err(Error::Format(_))));
        assert!(parse_idx(&img[..10], IDX_IMAGES_MAGIC).is_err());
    }

    #[test]
    fn write_then_load_recovers_quantized_pixels() {
        let images = Tensor::from_fn(&[4, 1, 3, 3], |i| (i % 9) as Float / 8.0);
        let data = LabeledDataset::new(images, vec![0, 1, 2, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&data, &a, &b).unwrap();
        let back = load_idx(&a, &b).unwrap();
        assert_eq!(back.labels, data.labels);
        for (x, y) in back.images.data().iter().zip(data.images.data()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }
}
