//! IDX image/label files (the MNIST container format) and their split into
//! label-skewed per-device datasets.

use std::path::Path;

use oadfl_core::linalg::RMatrix;
use oadfl_core::rng::SimRng;
use oadfl_core::task::LabelledData;
use rand::Rng;

use crate::error::{format_err, io_err, Result};

const IMAGES_MAGIC: u32 = 0x0803;
const LABELS_MAGIC: u32 = 0x0801;

/// Images flattened to rows scaled into `[0, 1]`, and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxDataset {
    pub images: RMatrix,
    pub labels: Vec<usize>,
}

impl IdxDataset {
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&l| l + 1)
    }
}

fn parse_header(bytes: &[u8], magic: u32, path: &Path) -> Result<(Vec<usize>, usize)> {
    let word = |k: usize| -> Result<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
            .ok_or_else(|| format_err(path, "truncated IDX header"))
    };
    let found = word(0)?;
    if found != magic {
        return Err(format_err(path, format!("IDX magic {found:#06x}, expected {magic:#06x}")));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (1..=ndims).map(|k| word(k).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let offset = 4 * (ndims + 1);
    let expected = dims.iter().product::<usize>();
    if bytes.len() - offset.min(bytes.len()) != expected {
        return Err(format_err(path, format!("IDX body has {} bytes, header promises {expected}", bytes.len().saturating_sub(offset))));
    }
    Ok((dims, offset))
}

pub fn parse_idx(images: &[u8], labels: &[u8], images_path: &Path, labels_path: &Path) -> Result<IdxDataset> {
    let (idims, ioff) = parse_header(images, IMAGES_MAGIC, images_path)?;
    let (ldims, loff) = parse_header(labels, LABELS_MAGIC, labels_path)?;
    let n = idims[0];
    if ldims[0] != n {
        return Err(format_err(labels_path, format!("{} labels for {n} images", ldims[0])));
    }
    let width = idims[1] * idims[2];
    let body = &images[ioff..];
    Ok(IdxDataset {
        images: RMatrix::from_fn(n, width, |r, c| body[r * width + c] as f64 / 255.0),
        labels: labels[loff..].iter().map(|&b| b as usize).collect(),
    })
}

pub fn read_idx(images: &Path, labels: &Path) -> Result<IdxDataset> {
    let ib = std::fs::read(images).map_err(io_err(images))?;
    let lb = std::fs::read(labels).map_err(io_err(labels))?;
    parse_idx(&ib, &lb, images, labels)
}

/// Draws `samples` examples (with replacement) for each device. With
/// probability `skew` an example comes from the device's own class
/// `i mod classes`, otherwise from the whole set.
pub fn split_by_class(data: &IdxDataset, devices: usize, samples: usize, skew: f64, rng: &mut SimRng) -> Vec<LabelledData> {
    let classes = data.classes();
    let by_class: Vec<Vec<usize>> = (0..classes)
        .map(|c| (0..data.labels.len()).filter(|&r| data.labels[r] == c).collect())
        .collect();
    let n = data.labels.len();
    (0..devices)
        .map(|i| {
            let own = &by_class[i % classes];
            let rows: Vec<usize> = (0..samples)
                .map(|_| {
                    if !own.is_empty() && rng.random::<f64>() < skew {
                        own[rng.random_range(0..own.len())]
                    } else {
                        rng.random_range(0..n)
                    }
                })
                .collect();
            LabelledData {
                features: RMatrix::from_fn(samples, data.images.ncols(), |r, c| data.images[(rows[r], c)]),
                labels: rows.iter().map(|&r| data.labels[r]).collect(),
            }
        })
        .collect()
}

/// Serializes images and labels back into IDX bytes; used to build fixtures.
pub fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut ib = Vec::new();
    for w in [IMAGES_MAGIC, images.len() as u32, rows as u32, cols as u32] {
        ib.extend_from_slice(&w.to_be_bytes());
    }
    images.iter().for_each(|im| ib.extend_from_slice(im));
    let mut lb = Vec::new();
    for w in [LABELS_MAGIC, labels.len() as u32] {
        lb.extend_from_slice(&w.to_be_bytes());
    }
    lb.extend_from_slice(labels);
    (ib, lb)
}
