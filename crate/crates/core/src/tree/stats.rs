use serde::{Deserialize, Serialize};

use super::{num_leaves, NdtModel};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Leaf-by-class routing tallies of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafStats {
    /// `counts[leaf][class]`.
    pub counts: Vec<Vec<u64>>,
}

impl LeafStats {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let width = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != width) {
            return Err(Error::Value("ragged leaf count matrix".into()));
        }
        Ok(Self { counts })
    }

    pub fn num_leaves(&self) -> usize {
        self.counts.len()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn class_totals(&self) -> Vec<u64> {
        (0..self.num_classes())
            .map(|c| self.counts.iter().map(|r| r[c]).sum())
            .collect()
    }

    pub fn leaf_totals(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// Leaf holding most samples of each class (lowest leaf on ties);
    /// `None` for classes absent from the data.
    pub fn modal_leaf(&self) -> Vec<Option<usize>> {
        (0..self.num_classes())
            .map(|c| {
                let mut best: Option<usize> = None;
                for (leaf, row) in self.counts.iter().enumerate() {
                    if row[c] > 0 && best.map_or(true, |b| row[c] > self.counts[b][c]) {
                        best = Some(leaf);
                    }
                }
                best
            })
            .collect()
    }

    /// Share of samples that sit in their class's modal leaf.
    pub fn purity(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let main: u64 = (0..self.num_classes())
            .map(|c| self.counts.iter().map(|r| r[c]).max().unwrap_or(0))
            .sum();
        main as f64 / total as f64
    }
}

pub fn leaf_statistics<T: Scalar>(model: &NdtModel<T>, data: &Dataset<T>) -> Result<LeafStats> {
    let classes = model.num_classes().max(data.num_classes);
    let mut counts = vec![vec![0u64; classes]; num_leaves(model.depth())];
    for (leaf, &y) in model.route(&data.features)?.into_iter().zip(&data.labels) {
        counts[leaf][y] += 1;
    }
    LeafStats::from_counts(counts)
}
