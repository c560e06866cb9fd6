//! Versioned parameter container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"CASSCKPT"
//! u32     version
//! u32     header length, then that many bytes of `key=value\n` lines
//! u32     parameter count
//! repeat: u32 name length, name bytes, u32 rank, rank × u64 extents,
//!         product(extents) × f64 values
//! u32     CRC-32 of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CASSCKPT";

/// Parameters plus a flat header of architecture/training metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let mut header = String::new();
        for (k, v) in &self.header {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::invalid(format!("header entry `{k}` not representable")));
            }
            header.push_str(&format!("{k}={v}\n"));
        }
        w.str(&header);
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            for &v in t.data() {
                w.f64(v);
            }
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::with_crc(bytes)?;
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        r.verify_crc()?;
        let mut header = BTreeMap::new();
        for line in r.string()?.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header line `{line}`")))?;
            header.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()? as usize;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len.ok_or_else(|| Error::Format("extent overflow".into()))?;
            if len > r.remaining() / 8 {
                return Err(Error::Format(format!("truncated parameter `{name}`")));
            }
            let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Format(format!("parameter `{name}`: {e}")))?;
            params.insert(name, t.with_grad());
        }
        r.expect_end()?;
        Ok(Checkpoint { header, params })
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init_uniform;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a.w", init_uniform("a.w", vec![3, 4], 3, 7));
        params.insert("b", Tensor::new(vec![2], vec![-0.0, 1e-300]).unwrap().with_grad());
        let mut header = BTreeMap::new();
        header.insert("latent_dim".into(), "64".into());
        Checkpoint { header, params }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.header, ck.header);
        for ((na, ta), (nb, tb)) in ck.params.iter().zip(back.params.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.shape(), tb.shape());
            let bits_a: Vec<u64> = ta.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = tb.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn rejects_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes[8] = 9; // version field
        assert!(Checkpoint::from_bytes(&bytes).is_err());
        let good = sample().to_bytes().unwrap();
        let mut flipped = good.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&flipped),
            Err(Error::Checksum { .. })
        ));
        assert!(Checkpoint::from_bytes(&good[..good.len() - 9]).is_err());
    }
}
