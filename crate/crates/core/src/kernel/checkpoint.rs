//! Flat binary parameter container.
//!
//! Layout: the magic bytes `RAAF1`, then one record per parameter:
//! name length (u64), name bytes (UTF-8), rank (u64), each dimension (u64),
//! then the values (f64). All integers and floats are little-endian.

use std::path::Path;

use crate::error::{Error, Result};
use crate::kernel::tensor::{ParamSlot, Tensor};

pub const MAGIC: &[u8; 5] = b"RAAF1";

pub fn encode<'a>(params: impl IntoIterator<Item = &'a ParamSlot>) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for p in params {
        out.extend_from_slice(&(p.name.len() as u64).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value.shape();
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
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
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Data("not a RAAF1 checkpoint".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let name_len = r.u64()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Data("checkpoint parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u64()? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Data(format!("{name}: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Data(format!("{name}: shape overflow")))?;
        let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Data("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name.clone(), Tensor::new(shape, data).map_err(|e| Error::Data(format!("{name}: {e}")))?));
    }
    Ok(records)
}

pub fn write<'a>(path: &Path, params: impl IntoIterator<Item = &'a ParamSlot>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(params)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Copies `records` into `params`, requiring identical names, order and shapes.
pub fn restore(params: &mut [&mut ParamSlot], records: Vec<(String, Tensor)>) -> Result<()> {
    if records.len() != params.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for (p, (name, value)) in params.iter_mut().zip(records) {
        if p.name != name || p.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "checkpoint tensor {name} {:?} does not match model tensor {} {:?}",
                value.shape(),
                p.name,
                p.value.shape()
            )));
        }
        p.value = value;
        p.zero_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_and_first_record_layout() {
        let p = ParamSlot::new("ab", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
        let bytes = encode([&p]);
        assert_eq!(&bytes[..5], b"RAAF1");
        assert_eq!(&bytes[5..13], &2u64.to_le_bytes());
        assert_eq!(&bytes[13..15], b"ab");
        assert_eq!(&bytes[15..23], &2u64.to_le_bytes());
        assert_eq!(&bytes[23..31], &1u64.to_le_bytes());
        assert_eq!(&bytes[31..39], &2u64.to_le_bytes());
        assert_eq!(&bytes[39..47], &1.5f64.to_le_bytes());
        assert_eq!(bytes.len(), 55);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(b"RAAF2").is_err());
        let p = ParamSlot::new("x", Tensor::vector(vec![1.0, 2.0]));
        let bytes = encode([&p]);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn restore_checks_names() {
        let src = ParamSlot::new("a", Tensor::vector(vec![1.0]));
        let records = decode(&encode([&src])).unwrap();
        let mut dst = ParamSlot::new("b", Tensor::vector(vec![0.0]));
        assert!(restore(&mut [&mut dst], records).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            values in prop::collection::vec(prop::num::f64::ANY, 1..40),
            name in "[a-z_.]{1,12}",
        ) {
            let n = values.len();
            let p = ParamSlot::new(name.clone(), Tensor::new(vec![n], values.clone()).unwrap());
            let q = ParamSlot::new("second", Tensor::new(vec![1, n], values.clone()).unwrap());
            let records = decode(&encode([&p, &q])).unwrap();
            prop_assert_eq!(records.len(), 2);
            prop_assert_eq!(&records[0].0, &name);
            prop_assert_eq!(records[1].1.shape(), &[1, n]);
            for (a, b) in records[0].1.data().iter().zip(&values) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
