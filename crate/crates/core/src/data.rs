//! Dataset loading and batching.
//!
//! # MNIST (IDX)
//!
//! Images: big-endian `u32` magic `0x00000803` (2051), then count, rows and
//! cols as big-endian `u32`, then `count * rows * cols` pixel bytes.
//! Labels: magic `0x00000801` (2049), count, then `count` label bytes.
//! Files are read uncompressed from `train-images-idx3-ubyte`,
//! `train-labels-idx1-ubyte`, `t10k-images-idx3-ubyte` and
//! `t10k-labels-idx1-ubyte`.
//!
//! # CIFAR (binary version)
//!
//! CIFAR-10 records are 1 label byte + 3072 pixel bytes (1024 R, 1024 G,
//! 1024 B), in `data_batch_{1..5}.bin` and `test_batch.bin`. CIFAR-100
//! records are a coarse and a fine label byte + 3072 pixel bytes, in
//! `train.bin` and `test.bin`; the fine label is used.
//!
//! Pixels are scaled by 1/255 into `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::routing::Batch;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MNIST_IMAGE_MAGIC: u32 = 2051;
pub const MNIST_LABEL_MAGIC: u32 = 2049;
pub const CIFAR_PIXELS: usize = 3 * 32 * 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        features: Tensor<T>,
        labels: Vec<usize>,
        num_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        if features.shape().len() != 2 || features.rows() != labels.len() {
            return Err(Error::dim("dataset", features.shape(), &[labels.len()]));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
            return Err(Error::Data {
                index: i,
                reason: format!("label {y} out of range for {num_classes} classes"),
            });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, index: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(index),
            labels: index.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }

    /// Carves a seeded random validation split of `val_size` samples off the
    /// dataset; both parts keep their original relative order.
    pub fn split_validation(&self, val_size: usize, seed: u64) -> Result<(Self, Self)> {
        if val_size >= self.len() {
            return Err(Error::Config(format!(
                "validation size {val_size} leaves no training data out of {}",
                self.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut val_idx = order[..val_size].to_vec();
        let mut train_idx = order[val_size..].to_vec();
        val_idx.sort_unstable();
        train_idx.sort_unstable();
        Ok((self.subset(&train_idx), self.subset(&val_idx)))
    }

    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        Dataset {
            features: self.features.cast(),
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        }
    }
}

/// Maps a byte to `[0, 1]`; `0 -> 0.0` and `255 -> 1.0` exactly.
pub fn normalize_byte<T: Scalar>(b: u8) -> T {
    T::lit(f64::from(b) / 255.0)
}

fn pixels<T: Scalar>(bytes: &[u8]) -> Vec<T> {
    let table: Vec<T> = (0..=255u8).map(normalize_byte).collect();
    bytes.iter().map(|&b| table[usize::from(b)]).collect()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_owned(),
            offset: offset as u64,
            reason: "truncated header".into(),
        })
}

/// Parses an IDX image file into `(count, rows * cols, pixel bytes)`.
pub fn parse_idx_images<'a>(bytes: &'a [u8], path: &Path) -> Result<(usize, usize, &'a [u8])> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::Format {
            path: path.to_owned(),
            offset: 0,
            reason: format!("image magic {magic:#010x}, expected {MNIST_IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() != need {
        return Err(Error::Format {
            path: path.to_owned(),
            offset: bytes.len().min(need) as u64,
            reason: format!("expected {need} bytes for {count} images of {rows}x{cols}, found {}", bytes.len()),
        });
    }
    Ok((count, rows * cols, &bytes[16..]))
}

pub fn parse_idx_labels<'a>(bytes: &'a [u8], path: &Path) -> Result<&'a [u8]> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::Format {
            path: path.to_owned(),
            offset: 0,
            reason: format!("label magic {magic:#010x}, expected {MNIST_LABEL_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4, path)? as usize;
    if bytes.len() != 8 + count {
        return Err(Error::Format {
            path: path.to_owned(),
            offset: bytes.len().min(8 + count) as u64,
            reason: format!("expected {} bytes for {count} labels, found {}", 8 + count, bytes.len()),
        });
    }
    Ok(&bytes[8..])
}

fn load_mnist_split<T: Scalar>(dir: &Path, prefix: &str) -> Result<Dataset<T>> {
    let img_path = dir.join(format!("{prefix}-images-idx3-ubyte"));
    let lbl_path = dir.join(format!("{prefix}-labels-idx1-ubyte"));
    let img_bytes = read_file(&img_path)?;
    let lbl_bytes = read_file(&lbl_path)?;
    let (count, dim, px) = parse_idx_images(&img_bytes, &img_path)?;
    let labels = parse_idx_labels(&lbl_bytes, &lbl_path)?;
    if labels.len() != count {
        return Err(Error::Format {
            path: lbl_path,
            offset: 4,
            reason: format!("{} labels for {count} images", labels.len()),
        });
    }
    let features = Tensor::from_vec(vec![count, dim], pixels(px))?;
    let labels = labels.iter().map(|&l| usize::from(l)).collect();
    Dataset::new(features, labels, 10, format!("mnist-{prefix}"))
}

pub fn load_mnist<T: Scalar>(dir: &Path) -> Result<(Dataset<T>, Dataset<T>)> {
    Ok((load_mnist_split(dir, "train")?, load_mnist_split(dir, "t10k")?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    C10,
    C100,
}

impl CifarVariant {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::C10 => 1,
            CifarVariant::C100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::C10 => 10,
            CifarVariant::C100 => 100,
        }
    }

    fn files(self) -> (Vec<&'static str>, &'static str, &'static str) {
        match self {
            CifarVariant::C10 => (
                vec![
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ],
                "test_batch.bin",
                "cifar-10-batches-bin",
            ),
            CifarVariant::C100 => (vec!["train.bin"], "test.bin", "cifar-100-binary"),
        }
    }
}

/// Parses concatenated CIFAR records into `(labels, pixel bytes)`.
pub fn parse_cifar_records(
    bytes: &[u8],
    variant: CifarVariant,
    path: &Path,
) -> Result<(Vec<usize>, Vec<u8>)> {
    let rec = variant.record_len();
    if bytes.len() % rec != 0 {
        return Err(Error::Format {
            path: path.to_owned(),
            offset: (bytes.len() - bytes.len() % rec) as u64,
            reason: format!("size {} is not a multiple of the {rec}-byte record", bytes.len()),
        });
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut px = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        // fine label is the last label byte
        let y = usize::from(r[variant.label_bytes() - 1]);
        if y >= variant.num_classes() {
            return Err(Error::Format {
                path: path.to_owned(),
                offset: (i * rec + variant.label_bytes() - 1) as u64,
                reason: format!("label {y} out of range"),
            });
        }
        labels.push(y);
        px.extend_from_slice(&r[variant.label_bytes()..]);
    }
    Ok((labels, px))
}

fn cifar_dir(dir: &Path, variant: CifarVariant) -> PathBuf {
    let (_, test, sub) = variant.files();
    if !dir.join(test).exists() && dir.join(sub).join(test).exists() {
        dir.join(sub)
    } else {
        dir.to_owned()
    }
}

fn load_cifar_files<T: Scalar>(
    dir: &Path,
    files: &[&str],
    variant: CifarVariant,
    name: String,
) -> Result<Dataset<T>> {
    let mut labels = Vec::new();
    let mut px = Vec::new();
    for f in files {
        let path = dir.join(f);
        let bytes = read_file(&path)?;
        let (l, p) = parse_cifar_records(&bytes, variant, &path)?;
        labels.extend(l);
        px.extend(p);
    }
    let features = Tensor::from_vec(vec![labels.len(), CIFAR_PIXELS], pixels(&px))?;
    Dataset::new(features, labels, variant.num_classes(), name)
}

pub fn load_cifar<T: Scalar>(
    dir: &Path,
    variant: CifarVariant,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let root = cifar_dir(dir, variant);
    let (train, test, _) = variant.files();
    let tag = match variant {
        CifarVariant::C10 => "cifar10",
        CifarVariant::C100 => "cifar100",
    };
    Ok((
        load_cifar_files(&root, &train, variant, format!("{tag}-train"))?,
        load_cifar_files(&root, &[test], variant, format!("{tag}-test"))?,
    ))
}

/// Mini-batches over one epoch. With `shuffle`, the order is a permutation
/// drawn from `seed`; the last batch may be short.
pub fn batch_iter<T: Scalar>(
    dataset: &Dataset<T>,
    batch_size: usize,
    seed: u64,
    shuffle: bool,
) -> impl Iterator<Item = Batch<T>> + '_ {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter().map(move |idx| Batch {
        features: dataset.features.select_rows(&idx),
        labels: idx.iter().map(|&i| dataset.labels[i]).collect(),
        positions: idx,
    })
}
