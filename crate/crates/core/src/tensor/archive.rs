//! Parameter archive: one line of JSON manifest, a `\n`, then the raw
//! little-endian `f64` payload of every tensor back to back.
//!
//! ```text
//! {"version":1,"dtype":"f64le","tensors":[{"name":"w","shape":[2,3],"offset":0}, ...]}\n
//! <payload bytes>
//! ```
//!
//! `offset` counts bytes from the first payload byte.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

const VERSION: u32 = 1;
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    tensors: Vec<ArchiveEntry>,
}

pub fn write_archive<'a, W, I>(mut out: W, tensors: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a str, &'a Tensor)>,
{
    let tensors: Vec<(&str, &Tensor)> = tensors.into_iter().collect();
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in &tensors {
        entries.push(ArchiveEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 8 * t.len() as u64;
    }
    let manifest = Manifest {
        version: VERSION,
        dtype: DTYPE.into(),
        tensors: entries,
    };
    let io = |e| Error::Archive(format!("write failed: {e}"));
    serde_json::to_writer(&mut out, &manifest)?;
    out.write_all(b"\n").map_err(io)?;
    for (_, t) in &tensors {
        for v in t.data() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_archive<R: BufRead>(mut input: R) -> Result<Vec<(String, Tensor)>> {
    let io = |e| Error::Archive(format!("read failed: {e}"));
    let mut header = Vec::new();
    input.read_until(b'\n', &mut header).map_err(io)?;
    if header.last() != Some(&b'\n') {
        return Err(Error::Archive("missing manifest terminator".into()));
    }
    let manifest: Manifest = serde_json::from_slice(&header[..header.len() - 1])?;
    if manifest.version != VERSION || manifest.dtype != DTYPE {
        return Err(Error::Archive(format!(
            "unsupported archive version {} / dtype {}",
            manifest.version, manifest.dtype
        )));
    }
    let mut payload = Vec::new();
    input.read_to_end(&mut payload).map_err(io)?;

    let mut out = Vec::with_capacity(manifest.tensors.len());
    for entry in manifest.tensors {
        let n: usize = entry.shape.iter().product();
        let start = entry.offset as usize;
        let end = start + 8 * n;
        let bytes = payload
            .get(start..end)
            .ok_or_else(|| Error::Archive(format!("tensor {} runs past payload", entry.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((entry.name, Tensor::new(&entry.shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            rows in 1usize..4,
            cols in 1usize..5,
            bits in proptest::collection::vec(any::<u64>(), 20),
        ) {
            let data: Vec<f64> = bits[..rows * cols].iter().map(|b| f64::from_bits(*b)).collect();
            let a = Tensor::new(&[rows, cols], data).unwrap();
            let b = Tensor::new(&[3], vec![1.5, -0.0, f64::MIN_POSITIVE]).unwrap();
            let mut buf = Vec::new();
            write_archive(&mut buf, [("a", &a), ("b", &b)]).unwrap();
            let back = read_archive(&buf[..]).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[0].0, "a");
            prop_assert_eq!(back[0].1.shape(), a.shape());
            for (x, y) in back[0].1.data().iter().zip(a.data()) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back[1].1.data()[1].to_bits(), (-0.0f64).to_bits());
        }
    }

    #[test]
    fn manifest_lists_offsets() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3]);
        let mut buf = Vec::new();
        write_archive(&mut buf, [("a", &a), ("b", &b)]).unwrap();
        let line_end = buf.iter().position(|&c| c == b'\n').unwrap();
        let manifest: Manifest = serde_json::from_slice(&buf[..line_end]).unwrap();
        assert_eq!(manifest.tensors[1].offset, 32);
        assert_eq!(buf.len() - line_end - 1, 8 * 7);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let a = Tensor::zeros(&[4]);
        let mut buf = Vec::new();
        write_archive(&mut buf, [("a", &a)]).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_archive(&buf[..]).is_err());
    }
}
