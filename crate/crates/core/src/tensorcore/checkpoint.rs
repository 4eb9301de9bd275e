//! Binary checkpoint format.
//!
//! Layout: the 7-byte magic `EVONAS1`, then per tensor: name length (u64),
//! UTF-8 name, rank (u64), extents (u64 each), payload (f64 each). All integers
//! and floats little-endian. Tensors follow one another until end of file.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensorcore::{ParamSet, Tensor};

pub const MAGIC: &[u8; 7] = b"EVONAS1";

pub fn encode(params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(7 + params.count() * 8);
    out.extend_from_slice(MAGIC);
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u64).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing EVONAS1 magic".into()));
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: MAGIC.len(),
    };
    let mut params = ParamSet::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u64()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("tensor name is not UTF-8: {e}")))?
            .to_string();
        let rank = cur.u64()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let payload = cur.take(numel.checked_mul(8).ok_or_else(|| {
            Error::Checkpoint(format!("tensor `{name}` too large"))
        })?)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))?;
        params.insert(name, t);
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![1], vec![1.0]).unwrap());
        let bytes = encode(&p);
        assert_eq!(&bytes[..7], b"EVONAS1");
        assert_eq!(&bytes[7..15], &1u64.to_le_bytes());
        assert_eq!(bytes[15], b'a');
        assert_eq!(&bytes[16..24], &1u64.to_le_bytes());
        assert_eq!(&bytes[24..32], &1u64.to_le_bytes());
        assert_eq!(&bytes[32..40], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 40);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"EVONAS2").is_err());
        let mut p = ParamSet::new();
        p.insert("w", Tensor::zeros(&[2, 2]));
        let bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            tensors in prop::collection::vec(
                (prop::collection::vec(1usize..4, 1..4), any::<u64>()), 0..5)
        ) {
            let mut p = ParamSet::new();
            for (i, (shape, bits)) in tensors.iter().enumerate() {
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|k| f64::from_bits(bits.wrapping_add(k as u64 * 0x9E37_79B9)))
                    .map(|v| if v.is_nan() { 0.5 } else { v })
                    .collect();
                p.insert(format!("t{i}.weight"), Tensor::new(shape.clone(), data).unwrap());
            }
            let back = decode(&encode(&p)).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for ((na, ta), (nb, tb)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(na, nb);
                prop_assert_eq!(ta.shape(), tb.shape());
                let same = ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits());
                prop_assert!(same);
            }
        }
    }
}
