//! Versioned binary checkpoint for [`ModelState`].
//!
//! ```text
//! "CDSM" | version: u32
//! descriptor: input_side, kernel, conv1, conv2, conv3, fc, classes (u32 each)
//! tensor count: u32
//! per tensor: name_len u32 | name utf-8 | rank u32 | extents u32* | values f64*
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::model::{ArchDescriptor, ModelState, Param};

pub const MAGIC: &[u8; 4] = b"CDSM";
pub const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(model: &ModelState) -> Result<Vec<u8>> {
    let d = model.descriptor();
    let mut buf = Vec::with_capacity(64 + model.param_count() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        d.input_side,
        d.kernel,
        d.conv_widths[0],
        d.conv_widths[1],
        d.conv_widths[2],
        d.fc_width,
        d.classes,
    ] {
        put_u32(&mut buf, v)?;
    }
    put_u32(&mut buf, model.params().len())?;
    for p in model.params() {
        put_u32(&mut buf, p.name.len())?;
        buf.extend_from_slice(p.name.as_bytes());
        put_u32(&mut buf, p.tensor.shape().len())?;
        for &e in p.tensor.shape() {
            put_u32(&mut buf, e)?;
        }
        for v in p.tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a CDSM checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let descriptor = ArchDescriptor {
        input_side: r.u32()?,
        kernel: r.u32()?,
        conv_widths: [r.u32()?, r.u32()?, r.u32()?],
        fc_width: r.u32()?,
        classes: r.u32()?,
    };
    let count = r.u32()?;
    let mut params = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?
            .to_string();
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        if n.saturating_mul(8) > bytes.len() {
            return Err(Error::Checkpoint(format!("tensor {name} larger than file")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.push(Param {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    ModelState::from_params(descriptor, params)
}

pub fn save(model: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::init_model;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let m = init_model(ArchDescriptor::lenet5(2), 1).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..4], b"CDSM");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 32);
    }

    #[test]
    fn corrupted_inputs_rejected() {
        let m = init_model(ArchDescriptor::lenet5(2), 1).unwrap();
        let bytes = encode(&m).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cdsm");
        let m = init_model(ArchDescriptor::lenet5(3), 9).unwrap();
        save(&m, &path).unwrap();
        assert_eq!(load(&path).unwrap(), m);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), c1 in 1usize..4, fc in 1usize..6, classes in 2usize..5) {
            let d = ArchDescriptor { input_side: 8, kernel: 2, conv_widths: [c1, 2, 3], fc_width: fc, classes };
            let mut m = init_model(d, seed).unwrap();
            // include values whose bit patterns would not survive a text round trip
            m.params_mut()[1].tensor.data_mut()[0] = -0.0;
            m.params_mut()[3].tensor.data_mut()[0] = f64::MIN_POSITIVE / 3.0;
            let back = decode(&encode(&m).unwrap()).unwrap();
            let a: Vec<u64> = m.flat_values().map(f64::to_bits).collect();
            let b: Vec<u64> = back.flat_values().map(f64::to_bits).collect();
            prop_assert_eq!(a, b);
            prop_assert_eq!(back.descriptor(), m.descriptor());
        }
    }
}
