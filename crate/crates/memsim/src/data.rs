//! Dataset ingestion and batching: big-endian IDX image/label files,
//! normalization to [0, 1], deterministic epoch shuffles, and small
//! synthetic datasets for fast tests.

use crate::error::{Error, Result};
use crate::rng::{permutation, StreamKey};
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// An in-memory dataset: images normalized to [0, 1], class labels, and a
/// split tag.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// n x (h*w), every entry in [0, 1].
    pub images: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub split: String,
    /// Original image shape (rows, cols); (1, dim) for synthetic data.
    pub image_shape: (usize, usize),
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Keep only the first `n` samples (0 means keep everything).
    pub fn truncate(&mut self, n: usize) {
        if n == 0 || n >= self.len() {
            return;
        }
        self.images = self.images.slice(ndarray::s![..n, ..]).to_owned();
        self.labels.truncate(n);
    }
}

fn read_u32_be(r: &mut impl Read, path: &Path, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::Truncated {
        path: path.to_path_buf(),
        context: format!("while reading {what}"),
    })?;
    Ok(u32::from_be_bytes(buf))
}

/// Parse a big-endian IDX image/label pair. Pixels are divided by 255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    // images: magic, count, rows, cols, raw bytes
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img, images_path, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::BadMagic {
            path: images_path.to_path_buf(),
            got: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = read_u32_be(&mut img, images_path, "image count")? as usize;
    let h = read_u32_be(&mut img, images_path, "image rows")? as usize;
    let w = read_u32_be(&mut img, images_path, "image cols")? as usize;
    let mut raw = vec![0u8; n * h * w];
    img.read_exact(&mut raw).map_err(|_| Error::Truncated {
        path: images_path.to_path_buf(),
        context: format!("expected {} pixel bytes", n * h * w),
    })?;

    // labels: magic, count, raw bytes
    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lab, labels_path, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::BadMagic {
            path: labels_path.to_path_buf(),
            got: magic,
            expected: LABEL_MAGIC,
        });
    }
    let n_lab = read_u32_be(&mut lab, labels_path, "label count")? as usize;
    if n_lab != n {
        return Err(Error::CountMismatch { images: n, labels: n_lab });
    }
    let mut labels_raw = vec![0u8; n];
    lab.read_exact(&mut labels_raw).map_err(|_| Error::Truncated {
        path: labels_path.to_path_buf(),
        context: format!("expected {n} label bytes"),
    })?;

    let images = Array2::from_shape_vec(
        (n, h * w),
        raw.iter().map(|&b| b as f64 / 255.0).collect(),
    )
    .expect("shape matches raw length");
    let labels: Vec<usize> = labels_raw.iter().map(|&b| b as usize).collect();
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        images,
        labels,
        n_classes,
        split: String::new(),
        image_shape: (h, w),
    })
}

/// Write a dataset back to an IDX pair. Pixels are scaled by 255 and
/// rounded, which inverts the loader's normalization exactly.
pub fn save_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let (h, w) = ds.image_shape;
    let mut img = BufWriter::new(File::create(images_path)?);
    img.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    img.write_all(&(ds.len() as u32).to_be_bytes())?;
    img.write_all(&(h as u32).to_be_bytes())?;
    img.write_all(&(w as u32).to_be_bytes())?;
    for v in ds.images.iter() {
        img.write_all(&[(v * 255.0).round() as u8])?;
    }
    let mut lab = BufWriter::new(File::create(labels_path)?);
    lab.write_all(&LABEL_MAGIC.to_be_bytes())?;
    lab.write_all(&(ds.len() as u32).to_be_bytes())?;
    for &l in &ds.labels {
        lab.write_all(&[l as u8])?;
    }
    Ok(())
}

/// Resolve the conventional four-file layout under one directory.
pub fn mnist_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )
}

/// Deterministic batch index sequence for one epoch: a Fisher-Yates
/// permutation keyed by (seed, epoch), chunked into batches. The last
/// partial batch is kept.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1);
    let perm = permutation(seed, epoch, n);
    perm.chunks(batch_size).map(|c| c.to_vec()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToyKind {
    /// Four Gaussian blobs in 16 dimensions; linearly separable with margin.
    GaussianBlobs,
    /// 8-bit parity; not linearly separable, exercises the hidden layer.
    Parity,
}

/// Deterministic synthetic dataset generator for desk-scale tests.
pub fn synthetic_toy(kind: ToyKind, n: usize, seed: u64) -> Dataset {
    let key = StreamKey::new(seed, u32::MAX - 1, 0, 0);
    match kind {
        ToyKind::GaussianBlobs => {
            let dim = 16;
            let classes = 4;
            // orthogonal-ish binary sign patterns keep the blobs separated
            let mut images = Array2::zeros((n, dim));
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let c = i % classes;
                for d in 0..dim {
                    let sign = if (d >> (c % 4)) & 1 == 0 { 1.0 } else { -1.0 };
                    let center = 0.5 + 0.3 * sign;
                    let v = center + 0.07 * key.normal((i * dim + d) as u64, 0);
                    images[[i, d]] = v.clamp(0.0, 1.0);
                }
                labels.push(c);
            }
            Dataset {
                images,
                labels,
                n_classes: classes,
                split: "synthetic-blobs".into(),
                image_shape: (1, dim),
            }
        }
        ToyKind::Parity => {
            let dim = 8;
            let mut images = Array2::zeros((n, dim));
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let bits = key.draw_u64(i as u64, 0);
                let mut parity = 0usize;
                for d in 0..dim {
                    let bit = (bits >> d) & 1;
                    parity ^= bit as usize;
                    let v = if bit == 1 { 0.9 } else { 0.1 }
                        + 0.03 * key.normal(i as u64, 1 + d as u64);
                    images[[i, d]] = v.clamp(0.0, 1.0);
                }
                labels.push(parity);
            }
            Dataset {
                images,
                labels,
                n_classes: 2,
                split: "synthetic-parity".into(),
                image_shape: (1, dim),
            }
        }
    }
}
