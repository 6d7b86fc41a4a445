//! `CFW1` weight container.
//!
//! ```text
//! "CFW1"                     magic
//! u32                        entry count
//! per entry:
//!   u16                      name length in bytes
//!   [u8]                     UTF-8 name
//!   u8                       dtype (0 = f32)
//!   u8                       rank
//!   rank × u64               extents
//!   [f32]                    payload
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::params::{ParamEntry, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CFW1";
pub const DTYPE_F32: u8 = 0;

/// One decoded entry.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(records: &[WeightRecord]) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Weights(format!("name too long: {}", r.name)))?;
        if r.dims.iter().product::<usize>() != r.data.len() {
            return Err(Error::Weights(format!("{}: extents disagree with payload", r.name)));
        }
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(DTYPE_F32);
        out.push(r.dims.len() as u8);
        for &d in &r.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &r.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Weights(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<WeightRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Weights("bad magic, expected CFW1".into()));
    }
    let count = u32::from_le_bytes(r.array("entry count")?);
    let mut out = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array("name length")?) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Weights("entry name is not UTF-8".into()))?
            .to_string();
        let [dtype] = r.array::<1>("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(Error::Weights(format!("{name}: unsupported dtype {dtype}")));
        }
        let [rank] = r.array::<1>("rank")?;
        let mut dims = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            dims.push(u64::from_le_bytes(r.array("extent")?) as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Weights(format!("{name}: extents overflow")))?;
        let payload = r.take(n.saturating_mul(4), "payload")?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        out.push(WeightRecord { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Weights(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn records_of(params: &ParamStore<f32>) -> Vec<WeightRecord> {
    params
        .iter()
        .map(|(name, e)| WeightRecord {
            name: name.to_string(),
            dims: e.dims.clone(),
            data: e.tensor.data().to_vec(),
        })
        .collect()
}

pub fn save_params(params: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(&records_of(params))?)?;
    Ok(())
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<WeightRecord>> {
    decode(&std::fs::read(path)?)
}

/// Replaces every tensor of `template` with the file contents. Names, order
/// and extents must match exactly.
pub fn load_params(template: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let records = load_records(path)?;
    apply_records(template, records)
}

pub fn apply_records(template: &ParamStore<f32>, records: Vec<WeightRecord>) -> Result<ParamStore<f32>> {
    let mut out = ParamStore::new();
    let mut file = records.into_iter();
    for (name, e) in template.iter() {
        let Some(rec) = file.next() else {
            return Err(Error::Weights(format!("file ends before parameter {name}")));
        };
        if rec.name != name || rec.dims != e.dims {
            return Err(Error::Weights(format!(
                "mismatch at {name} {:?}: file has {} {:?}",
                e.dims, rec.name, rec.dims
            )));
        }
        let tensor = Tensor::new(e.tensor.shape(), rec.data)?;
        out.insert(
            name,
            ParamEntry {
                tensor,
                dims: rec.dims,
                trainable: e.trainable,
            },
        )?;
    }
    if let Some(extra) = file.next() {
        return Err(Error::Weights(format!("unexpected extra entry {}", extra.name)));
    }
    Ok(out)
}

/// Dumps a single tensor (for logits) as a one-entry container.
pub fn save_tensor(name: &str, t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    let rec = WeightRecord {
        name: name.to_string(),
        dims: t.shape().to_vec(),
        data: t.data().to_vec(),
    };
    std::fs::write(path, encode(&[rec])?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<WeightRecord> {
        vec![
            WeightRecord {
                name: "a.weight".into(),
                dims: vec![2, 1, 1, 2],
                data: vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25e-7],
            },
            WeightRecord {
                name: "b.bias".into(),
                dims: vec![1],
                data: vec![-2.0],
            },
        ]
    }

    #[test]
    fn layout_is_byte_exact() {
        let bytes = encode(&sample()[1..]).unwrap();
        let mut expect = b"CFW1".to_vec();
        expect.extend_from_slice(&1u32.to_le_bytes());
        expect.extend_from_slice(&6u16.to_le_bytes());
        expect.extend_from_slice(b"b.bias");
        expect.extend_from_slice(&[0, 1]);
        expect.extend_from_slice(&1u64.to_le_bytes());
        expect.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let recs = sample();
        let back = decode(&encode(&recs).unwrap()).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = encode(&sample()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"CFW0\0\0\0\0").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
