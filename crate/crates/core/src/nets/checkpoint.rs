//! Named-tensor checkpoint container.
//!
//! Layout: the magic bytes `FGPVAE01`; a little-endian `u64` byte length
//! followed by a UTF-8 manifest with one `name<TAB>shape<TAB>offset` line per
//! tensor (shape as `x`-separated dimensions, offset counted in elements);
//! a little-endian `u64` element count; then every element as a little-endian
//! IEEE-754 `f64`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{read_exact_or_truncated, write_atomic};

pub const MAGIC: &[u8; 8] = b"FGPVAE01";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            name: name.into(),
            shape,
            values,
        }
    }

    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        Self::new(name, vec![1], vec![value])
    }
}

pub fn encode_tensors(tensors: &[NamedTensor]) -> Result<Vec<u8>> {
    let mut manifest = String::new();
    let mut offset = 0usize;
    for t in tensors {
        if t.name.contains(['\t', '\n']) || t.name.is_empty() {
            return Err(Error::Shape(format!("invalid tensor name {:?}", t.name)));
        }
        if t.shape.iter().product::<usize>() != t.values.len() {
            return Err(Error::Shape(format!("tensor {} shape does not match its data", t.name)));
        }
        let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
        manifest.push_str(&format!("{}\t{}\t{}\n", t.name, dims.join("x"), offset));
        offset += t.values.len();
    }
    let mut out = Vec::with_capacity(24 + manifest.len() + 8 * offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    out.extend_from_slice(&(offset as u64).to_le_bytes());
    for t in tensors {
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(mut r: impl Read) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut magic, "checkpoint magic")?;
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC.to_vec(),
            found: magic.to_vec(),
        });
    }
    let mut len = [0u8; 8];
    read_exact_or_truncated(&mut r, &mut len, "manifest length")?;
    let manifest_len = u64::from_le_bytes(len) as usize;
    let mut manifest = vec![0u8; manifest_len];
    read_exact_or_truncated(&mut r, &mut manifest, "manifest")?;
    let manifest = String::from_utf8(manifest).map_err(|e| Error::Shape(format!("manifest is not UTF-8: {e}")))?;
    read_exact_or_truncated(&mut r, &mut len, "value count")?;
    let count = u64::from_le_bytes(len) as usize;
    let mut raw = vec![0u8; count * 8];
    read_exact_or_truncated(&mut r, &mut raw, "tensor values")?;
    let values: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();

    let mut tensors = Vec::new();
    for line in manifest.lines() {
        let bad = || Error::Shape(format!("malformed manifest line {line:?}"));
        let mut parts = line.split('\t');
        let name = parts.next().ok_or_else(bad)?;
        let shape = parts
            .next()
            .ok_or_else(bad)?
            .split('x')
            .map(|d| d.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        let offset: usize = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
        let n: usize = shape.iter().product();
        let data = values.get(offset..offset + n).ok_or_else(bad)?;
        tensors.push(NamedTensor::new(name, shape, data.to_vec()));
    }
    Ok(tensors)
}

pub fn save_tensors(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    let bytes = encode_tensors(tensors)?;
    write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_tensors(path: &Path) -> Result<Vec<NamedTensor>> {
    let file = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
    decode_tensors(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let tensors = vec![
            NamedTensor::new("enc.conv1.weight", vec![2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 3.0]),
            NamedTensor::scalar("geco.multiplier", 1.0 / 3.0),
        ];
        let bytes = encode_tensors(&tensors).unwrap();
        assert_eq!(&bytes[..8], b"FGPVAE01");
        let back = decode_tensors(&bytes[..]).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in tensors.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = encode_tensors(&[NamedTensor::scalar("a", 2.0)]).unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_tensors(&wrong[..]), Err(Error::BadMagic { .. })));
        assert!(matches!(decode_tensors(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))));
    }
}
