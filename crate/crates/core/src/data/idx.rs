//! MNIST IDX reader. Gzip-compressed files are detected by their header and
//! inflated transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::nets::Image;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub struct RawDigit {
    pub pixels: Image,
    pub label: u8,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::at_path(path, e))?;
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&bytes[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::at_path(path, e))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated(what.to_string()))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<()> {
    let found = be_u32(bytes, 0, "IDX header")?;
    if found != expected {
        return Err(Error::BadMagic {
            expected: expected.to_be_bytes().to_vec(),
            found: found.to_be_bytes().to_vec(),
        });
    }
    Ok(())
}

/// Parses an IDX3 image file, scaling bytes to `[0, 1]`.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<Image>> {
    check_magic(bytes, IMAGES_MAGIC)?;
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() < n * size {
        return Err(Error::Truncated(format!(
            "expected {} pixel bytes, found {}",
            n * size,
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(size)
        .take(n)
        .map(|c| Image {
            height: rows,
            width: cols,
            pixels: c.iter().map(|&b| b as f64 / 255.0).collect(),
        })
        .collect())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC)?;
    let n = be_u32(bytes, 4, "label count")? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Truncated(format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body[..n].to_vec())
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Vec<RawDigit>> {
    let images = parse_images(&read_file(images_path)?)?;
    let labels = parse_labels(&read_file(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::CountMismatch {
            images: images.len(),
            labels: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Shape(format!("label {bad} is outside 0-9")));
    }
    Ok(images
        .into_iter()
        .zip(labels)
        .map(|(pixels, label)| RawDigit { pixels, label })
        .collect())
}

/// Serializes images and labels in IDX layout (used by tests and tooling).
pub fn encode_idx(images: &[Image], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let (rows, cols) = images.first().map(|i| (i.height, i.width)).unwrap_or((0, 0));
    let mut img = Vec::with_capacity(16 + images.len() * rows * cols);
    for v in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    for im in images {
        img.extend(im.pixels.iter().map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
