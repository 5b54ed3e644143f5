//! Binary checkpoint format.
//!
//! All integers little-endian:
//!
//! | offset      | size | field                                              |
//! |-------------|------|----------------------------------------------------|
//! | 0           | 8    | magic `FLEXTUNE`                                   |
//! | 8           | 4    | format version (`1`)                               |
//! | 12          | 4    | bytes per scalar (`4` for f32 builds)              |
//! | 16          | 4    | descriptor length `D` in bytes                     |
//! | 20          | D    | UTF-8 architecture descriptor ([`Network::descriptor`]) |
//! | 20 + D      | 4    | unit count `U`                                     |
//! | …           |      | per unit: `u64` scalar count `S`, then `S` scalars |
//!
//! A unit's scalars are its parameters concatenated in layer order, each
//! parameter row-major. Trainable flags and optimizer state are not stored.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Float;

pub const MAGIC: &[u8; 8] = b"FLEXTUNE";
pub const VERSION: u32 = 1;
const SCALAR_BYTES: usize = std::mem::size_of::<Float>();

pub fn encode(net: &Network) -> Vec<u8> {
    let descriptor = net.descriptor();
    let mut out = Vec::with_capacity(24 + descriptor.len() + net.scalar_count() * SCALAR_BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(SCALAR_BYTES as u32).to_le_bytes());
    out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
    out.extend_from_slice(descriptor.as_bytes());
    out.extend_from_slice(&(net.num_units() as u32).to_le_bytes());
    for unit in net.units() {
        out.extend_from_slice(&(unit.scalar_count() as u64).to_le_bytes());
        for p in unit.params() {
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| Error::Format("not a checkpoint file".into()))? != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let width = r.u32()? as usize;
    if width != SCALAR_BYTES {
        return Err(Error::Format(format!(
            "checkpoint stores {width}-byte scalars, this build uses {SCALAR_BYTES}"
        )));
    }
    let dlen = r.u32()? as usize;
    let descriptor = std::str::from_utf8(r.take(dlen)?)
        .map_err(|_| Error::Format("descriptor is not UTF-8".into()))?;
    let mut net = Network::from_descriptor(descriptor)?;
    let units = r.u32()? as usize;
    if units != net.num_units() {
        return Err(Error::Format(format!(
            "checkpoint has {units} unit blobs, descriptor declares {}",
            net.num_units()
        )));
    }
    for i in 1..=units {
        let count = r.u64()? as usize;
        let unit = net.unit_mut(i)?;
        if count != unit.scalar_count() {
            return Err(Error::Format(format!(
                "unit {} blob holds {count} scalars, expected {}",
                unit.name,
                unit.scalar_count()
            )));
        }
        for p in unit.params_mut() {
            for v in p.value.data_mut() {
                *v = Float::from_le_bytes(r.take(SCALAR_BYTES)?.try_into().unwrap());
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(net))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Network> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint and requires its architecture to equal `expected`'s.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &Network) -> Result<Network> {
    let net = load_checkpoint(path)?;
    if net.descriptor() != expected.descriptor() {
        return Err(Error::Architecture(format!(
            "checkpoint architecture differs from the expected one:\n--- checkpoint\n{}--- expected\n{}",
            net.descriptor(),
            expected.descriptor()
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;
    use crate::rng::Rng;

    fn net() -> Network {
        Architecture::Mnist4
            .build_initialized(&[1, 8, 8], 3, &mut Rng::new(11))
            .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let n = net();
        let back = decode(&encode(&n)).unwrap();
        assert_eq!(back.descriptor(), n.descriptor());
        for (a, b) in n.params().zip(back.params()) {
            let x: Vec<_> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let y: Vec<_> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(x, y);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&net());
        assert_eq!(&bytes[..8], b"FLEXTUNE");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize, SCALAR_BYTES);
        let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as usize;
        assert!(std::str::from_utf8(&bytes[20..20 + d]).unwrap().starts_with("arch mnist4\n"));
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode(&net());
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(matches!(decode(b"FLEX"), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let bytes = encode(&net());
        for cut in [bytes.len() - 1, bytes.len() / 2, 30] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = encode(&net());
        bytes[8] = 9;
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn expected_architecture_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ckpt");
        save_checkpoint(&net(), &path).unwrap();
        let other = Architecture::Mnist4.build(&[1, 8, 8], 4).unwrap();
        assert!(matches!(load_checkpoint_for(&path, &other), Err(Error::Architecture(_))));
        assert!(load_checkpoint_for(&path, &net()).is_ok());
    }
}
