//! Rotated-digit datasets: ingestion, synthesis, splits and persistence.

mod idx;
mod rotate;

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gp::AuxPoint;
use crate::io_util::{read_exact_or_truncated, write_atomic};
use crate::nets::Image;

pub use idx::{encode_idx, load_idx, parse_images, parse_labels, RawDigit, IMAGES_MAGIC, LABELS_MAGIC};
pub use rotate::rotate_image;

pub const DATASET_MAGIC: &[u8; 8] = b"FGPDATA1";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
    Extrapolation,
}

impl Split {
    fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
            Split::Extrapolation => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            2 => Ok(Split::Extrapolation),
            other => Err(Error::Shape(format!("unknown split tag {other}"))),
        }
    }
}

/// All rotations of one digit instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitRecord {
    pub id: usize,
    /// Position of the source image in the raw corpus.
    pub source_index: usize,
    /// One image per grid angle.
    pub images: Vec<Image>,
    pub splits: Vec<Split>,
}

/// Images, auxiliary points and global indices of one digit subset.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitSubset {
    pub digit: usize,
    pub points: Vec<AuxPoint>,
    pub images: Vec<Image>,
    pub indices: Vec<usize>,
}

impl DigitSubset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Sub-subset holding the given positions, in the given order.
    pub fn select(&self, positions: &[usize]) -> DigitSubset {
        DigitSubset {
            digit: self.digit,
            points: positions.iter().map(|&i| self.points[i]).collect(),
            images: positions.iter().map(|&i| self.images[i].clone()).collect(),
            indices: positions.iter().map(|&i| self.indices[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotatedDataset {
    pub seed: u64,
    pub label: u8,
    pub height: usize,
    pub width: usize,
    /// Shared angle grid, strictly increasing in `[0, 2π)`.
    pub angles: Vec<f64>,
    pub digits: Vec<DigitRecord>,
}

/// How many of the selected digits are used for training; the rest are held
/// out entirely for extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitPolicy {
    pub train_digits: usize,
}

impl SplitPolicy {
    /// 270 of 400 digits, scaled proportionally for other sizes.
    pub fn default_for(num_digits: usize) -> Self {
        Self {
            train_digits: (num_digits * 27).div_ceil(40).min(num_digits),
        }
    }

    pub fn all_train(num_digits: usize) -> Self {
        Self {
            train_digits: num_digits,
        }
    }
}

pub fn angle_grid(q: usize) -> Vec<f64> {
    (0..q).map(|i| 2.0 * PI * i as f64 / q as f64).collect()
}

pub fn build_rotated_dataset(
    raws: &[RawDigit],
    label: u8,
    num_digits: usize,
    num_angles: usize,
    seed: u64,
) -> Result<RotatedDataset> {
    build_rotated_dataset_with(raws, label, num_digits, num_angles, seed, SplitPolicy::default_for(num_digits))
}

/// Selects `num_digits` instances of `label` in seed-shuffled order, renders
/// every grid rotation and tags splits: each training digit holds out one
/// seed-chosen angle as its test image; non-training digits are extrapolation.
pub fn build_rotated_dataset_with(
    raws: &[RawDigit],
    label: u8,
    num_digits: usize,
    num_angles: usize,
    seed: u64,
    policy: SplitPolicy,
) -> Result<RotatedDataset> {
    if num_angles == 0 || num_digits == 0 {
        return Err(Error::Config("need at least one digit and one angle".into()));
    }
    if policy.train_digits > num_digits {
        return Err(Error::Config(format!(
            "{} training digits requested out of {num_digits}",
            policy.train_digits
        )));
    }
    let mut candidates: Vec<usize> = raws
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label == label)
        .map(|(i, _)| i)
        .collect();
    if candidates.len() < num_digits {
        return Err(Error::InsufficientDigits {
            label,
            wanted: num_digits,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    let angles = angle_grid(num_angles);
    let (height, width) = (raws[candidates[0]].pixels.height, raws[candidates[0]].pixels.width);
    let mut digits = Vec::with_capacity(num_digits);
    for (id, &src) in candidates.iter().take(num_digits).enumerate() {
        let raw = &raws[src].pixels;
        let images: Vec<Image> = angles.iter().map(|&w| rotate_image(raw, w)).collect();
        let splits = if id < policy.train_digits {
            let held_out = rng.gen_range(0..num_angles);
            (0..num_angles)
                .map(|q| if q == held_out { Split::Test } else { Split::Train })
                .collect()
        } else {
            vec![Split::Extrapolation; num_angles]
        };
        digits.push(DigitRecord {
            id,
            source_index: src,
            images,
            splits,
        });
    }
    Ok(RotatedDataset {
        seed,
        label,
        height,
        width,
        angles,
        digits,
    })
}

impl RotatedDataset {
    /// Rescales the auxiliary angles seen by the kernels. Images keep their
    /// rotations. With `0.5` a full turn spans one period of the local kernel,
    /// so rotations half a turn apart are no longer perfectly correlated.
    pub fn scale_angles(&mut self, factor: f64) -> Result<()> {
        if !(factor > 0.0 && factor <= 1.0) {
            return Err(Error::Config(format!("angle scale must lie in (0, 1], got {factor}")));
        }
        for w in &mut self.angles {
            *w *= factor;
        }
        Ok(())
    }

    pub fn num_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn num_images(&self) -> usize {
        self.digits.iter().map(|d| d.images.len()).sum()
    }

    pub fn count(&self, split: Split) -> usize {
        self.digits
            .iter()
            .flat_map(|d| &d.splits)
            .filter(|&&s| s == split)
            .count()
    }

    pub fn digit(&self, id: usize) -> Option<&DigitRecord> {
        self.digits.iter().find(|d| d.id == id)
    }

    fn subset_of(&self, pos: usize, keep: impl Fn(Split) -> bool) -> DigitSubset {
        let d = &self.digits[pos];
        let q = self.num_angles();
        let mut s = DigitSubset {
            digit: d.id,
            points: Vec::new(),
            images: Vec::new(),
            indices: Vec::new(),
        };
        for (a, (&w, img)) in self.angles.iter().zip(&d.images).enumerate() {
            if keep(d.splits[a]) {
                s.points.push(AuxPoint::new(d.id, w));
                s.images.push(img.clone());
                s.indices.push(pos * q + a);
            }
        }
        s
    }

    /// Subsets restricted to images carrying `split`, skipping digits with none.
    pub fn subsets(&self, split: Split) -> Vec<DigitSubset> {
        (0..self.digits.len())
            .map(|p| self.subset_of(p, |s| s == split))
            .filter(|s| !s.is_empty())
            .collect()
    }

    pub fn train_subsets(&self) -> Vec<DigitSubset> {
        self.subsets(Split::Train)
    }

    /// Subset holding every image of digit `id`, regardless of split.
    pub fn full_subset(&self, id: usize) -> Option<DigitSubset> {
        let pos = self.digits.iter().position(|d| d.id == id)?;
        Some(self.subset_of(pos, |_| true))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_to(w))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&DATASET_VERSION.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&[self.label])?;
        for v in [self.digits.len(), self.angles.len(), self.height, self.width] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for a in &self.angles {
            w.write_all(&a.to_le_bytes())?;
        }
        for d in &self.digits {
            w.write_all(&(d.id as u32).to_le_bytes())?;
            w.write_all(&(d.source_index as u32).to_le_bytes())?;
            let tags: Vec<u8> = d.splits.iter().map(|s| s.tag()).collect();
            w.write_all(&tags)?;
            for img in &d.images {
                for p in &img.pixels {
                    w.write_all(&p.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::at_path(path, e))?;
        Self::read_from(&mut std::io::BufReader::new(file))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact_or_truncated(r, &mut magic, "dataset magic")?;
        if &magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: DATASET_MAGIC.to_vec(),
                found: magic.to_vec(),
            });
        }
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let mut seed = [0u8; 8];
        read_exact_or_truncated(r, &mut seed, "seed")?;
        let mut label = [0u8; 1];
        read_exact_or_truncated(r, &mut label, "label")?;
        let num_digits = read_u32(r)? as usize;
        let num_angles = read_u32(r)? as usize;
        let height = read_u32(r)? as usize;
        let width = read_u32(r)? as usize;
        let angles = (0..num_angles).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let mut digits = Vec::with_capacity(num_digits);
        let mut buf = vec![0u8; height * width * 8];
        for _ in 0..num_digits {
            let id = read_u32(r)? as usize;
            let source_index = read_u32(r)? as usize;
            let mut tags = vec![0u8; num_angles];
            read_exact_or_truncated(r, &mut tags, "split tags")?;
            let splits = tags.into_iter().map(Split::from_tag).collect::<Result<Vec<_>>>()?;
            let mut images = Vec::with_capacity(num_angles);
            for _ in 0..num_angles {
                read_exact_or_truncated(r, &mut buf, "pixels")?;
                let pixels = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                images.push(Image {
                    height,
                    width,
                    pixels,
                });
            }
            digits.push(DigitRecord {
                id,
                source_index,
                images,
                splits,
            });
        }
        Ok(Self {
            seed: u64::from_le_bytes(seed),
            label: label[0],
            height,
            width,
            angles,
            digits,
        })
    }
}

/// One subset per digit instance covering all of its images.
pub fn partition_by_digit(dataset: &RotatedDataset) -> Vec<DigitSubset> {
    (0..dataset.digits.len())
        .map(|p| dataset.subset_of(p, |_| true))
        .collect()
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_truncated(r, &mut b, "u32 field")?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact_or_truncated(r, &mut b, "f64 field")?;
    Ok(f64::from_le_bytes(b))
}
