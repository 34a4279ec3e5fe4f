//! Dynamic batch routing.
//!
//! `sub_batch` splits a batch by a boolean mask into two order-preserving
//! sub-batches and returns a [`PartitionRecord`]; `join_batch` uses that
//! record to put per-row results back in the parent order. In backward the
//! roles swap: `split_gradients` is the adjoint of the join, and
//! `join_batch` is the adjoint of the split.
//!
//! `allocate_batch` is the general form: a gather along recorded
//! `(source, destination)` links, whose adjoint scatters gradients back along
//! the same links.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub features: Tensor<T>,
    pub labels: Vec<usize>,
    /// Row index of each sample in the batch this one was cut from.
    pub positions: Vec<usize>,
}

impl<T: Scalar> Batch<T> {
    pub fn new(features: Tensor<T>, labels: Vec<usize>) -> Result<Self> {
        let positions = (0..labels.len()).collect();
        Self::with_positions(features, labels, positions)
    }

    pub fn with_positions(
        features: Tensor<T>,
        labels: Vec<usize>,
        positions: Vec<usize>,
    ) -> Result<Self> {
        if features.rows() != labels.len() || positions.len() != labels.len() {
            return Err(Error::dim(
                "batch",
                features.shape(),
                &[labels.len(), positions.len()],
            ));
        }
        let mut seen = positions.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Value("batch positions must be distinct".into()));
        }
        Ok(Self {
            features,
            labels,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// How one batch was split: `mask[i]` is true iff row `i` went left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionRecord {
    mask: Vec<bool>,
    left_index: Vec<usize>,
    right_index: Vec<usize>,
}

impl PartitionRecord {
    pub fn from_mask(mask: &[bool]) -> Self {
        let (left_index, right_index) = (0..mask.len()).partition(|&i| mask[i]);
        Self {
            mask: mask.to_vec(),
            left_index,
            right_index,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn left_index(&self) -> &[usize] {
        &self.left_index
    }

    pub fn right_index(&self) -> &[usize] {
        &self.right_index
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

pub fn sub_batch<T: Scalar>(
    batch: &Batch<T>,
    mask: &[bool],
) -> Result<(Batch<T>, Batch<T>, PartitionRecord)> {
    if mask.len() != batch.len() {
        return Err(Error::dim("sub_batch", &[batch.len()], &[mask.len()]));
    }
    let rec = PartitionRecord::from_mask(mask);
    let take = |index: &[usize]| Batch {
        features: batch.features.select_rows(index),
        labels: index.iter().map(|&i| batch.labels[i]).collect(),
        positions: index.iter().map(|&i| batch.positions[i]).collect(),
    };
    let left = take(&rec.left_index);
    let right = take(&rec.right_index);
    Ok((left, right, rec))
}

/// Splits a tensor's rows along an existing record.
pub fn split_rows<T: Scalar>(
    t: &Tensor<T>,
    rec: &PartitionRecord,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if t.rows() != rec.len() {
        return Err(Error::dim("split_rows", t.shape(), &[rec.len()]));
    }
    Ok((t.select_rows(&rec.left_index), t.select_rows(&rec.right_index)))
}

pub fn join_batch<T: Scalar>(
    left: &Tensor<T>,
    right: &Tensor<T>,
    rec: &PartitionRecord,
) -> Result<Tensor<T>> {
    if left.rows() != rec.left_index.len() || right.rows() != rec.right_index.len() {
        return Err(Error::dim(
            "join_batch",
            &[left.rows(), right.rows()],
            &[rec.left_index.len(), rec.right_index.len()],
        ));
    }
    // Either side may be an empty tensor of arbitrary width.
    let cols = if !rec.left_index.is_empty() {
        left.cols()
    } else {
        right.cols()
    };
    if (!rec.left_index.is_empty() && left.cols() != cols)
        || (!rec.right_index.is_empty() && right.cols() != cols)
    {
        return Err(Error::dim("join_batch", left.shape(), right.shape()));
    }
    let template = if !rec.left_index.is_empty() { left } else { right };
    let mut out = Tensor::zeros(&template.row_shape(rec.len()));
    for (k, &i) in rec.left_index.iter().enumerate() {
        out.row_mut(i).copy_from_slice(left.row(k));
    }
    for (k, &i) in rec.right_index.iter().enumerate() {
        out.row_mut(i).copy_from_slice(right.row(k));
    }
    Ok(out)
}

/// Backward of [`join_batch`]: routes each gradient row to the sub-batch
/// that produced it.
pub fn split_gradients<T: Scalar>(
    djoined: &Tensor<T>,
    rec: &PartitionRecord,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if djoined.rows() != rec.len() {
        return Err(Error::dim("split_gradients", djoined.shape(), &[rec.len()]));
    }
    split_rows(djoined, rec)
}

/// Recorded `(source row, destination row)` links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkRecord {
    links: Vec<(usize, usize)>,
}

impl LinkRecord {
    pub fn new(links: Vec<(usize, usize)>) -> Result<Self> {
        let mut dests: Vec<usize> = links.iter().map(|&(_, d)| d).collect();
        dests.sort_unstable();
        if let Some(w) = dests.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Value(format!(
                "destination row {} linked more than once",
                w[0]
            )));
        }
        Ok(Self { links })
    }

    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    fn check(&self, source_rows: usize, dest_rows: usize) -> Result<()> {
        for &(s, d) in &self.links {
            if s >= source_rows || d >= dest_rows {
                return Err(Error::Link {
                    source_row: s,
                    dest_row: d,
                    source_rows,
                    dest_rows,
                });
            }
        }
        Ok(())
    }
}

/// Gathers `source` rows into an `out_rows`-row tensor along `links`.
/// Destinations without a link stay zero.
pub fn allocate_batch<T: Scalar>(
    source: &Tensor<T>,
    links: &LinkRecord,
    out_rows: usize,
) -> Result<Tensor<T>> {
    links.check(source.rows(), out_rows)?;
    let mut out = Tensor::zeros(&source.row_shape(out_rows));
    for &(s, d) in &links.links {
        out.row_mut(d).copy_from_slice(source.row(s));
    }
    Ok(out)
}

/// Adjoint of [`allocate_batch`]: scatter-adds each output gradient row onto
/// the source row it came from.
pub fn allocate_batch_backward<T: Scalar>(
    dout: &Tensor<T>,
    links: &LinkRecord,
    source_rows: usize,
) -> Result<Tensor<T>> {
    links.check(source_rows, dout.rows())?;
    let mut dsrc = Tensor::zeros(&dout.row_shape(source_rows));
    for &(s, d) in &links.links {
        for (a, &g) in dsrc.row_mut(s).iter_mut().zip(dout.row(d)) {
            *a += g;
        }
    }
    Ok(dsrc)
}
