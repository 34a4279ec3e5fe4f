//! Node-splitting objective.
//!
//! For a node that sends `N_L` of its `N` samples left and `N_R` right,
//!
//! ```text
//! IG = (N_L / N) Σ_j p_j^L ln p_j^L + (N_R / N) Σ_j p_j^R ln p_j^R
//! ```
//!
//! with `0 ln 0 = 0` and an empty child contributing 0. `IG <= 0`, with 0
//! exactly when every non-empty child is single-class.
//!
//! Treating the two indicators `1[cn > 0]` and `1[cn <= 0]` as separate
//! variables, the partial of IG w.r.t. sample `i`'s own indicator is
//! `ln(p_{y_i}^{child}) / N`. Chaining that through the surrogate derivative
//! gives the condition-output gradient.

use crate::error::{Error, Result};
use crate::gate::{surrogate_derivative, Branch, RightBranchSign, SurrogateConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Counts and class distributions of both children of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitStats<T> {
    pub n_left: usize,
    pub n_right: usize,
    pub p_left: Vec<T>,
    pub p_right: Vec<T>,
    /// One-hot label rows, `N x |classes|`.
    pub labels_onehot: Tensor<T>,
}

fn validate(labels: &[usize], len: usize, num_classes: usize) -> Result<()> {
    if labels.len() != len {
        return Err(Error::dim("info_gain", &[labels.len()], &[len]));
    }
    if labels.is_empty() {
        return Err(Error::Value("information gain of an empty batch".into()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
        return Err(Error::Data {
            index: i,
            reason: format!("label {y} out of range for {num_classes} classes"),
        });
    }
    Ok(())
}

impl<T: Scalar> SplitStats<T> {
    pub fn compute(labels: &[usize], mask: &[bool], num_classes: usize) -> Result<Self> {
        validate(labels, mask.len(), num_classes)?;
        let mut left = vec![0usize; num_classes];
        let mut right = vec![0usize; num_classes];
        let mut onehot = Tensor::zeros(&[labels.len(), num_classes]);
        for (i, (&y, &m)) in labels.iter().zip(mask).enumerate() {
            if m {
                left[y] += 1;
            } else {
                right[y] += 1;
            }
            onehot.set(i, y, T::one());
        }
        let n_left: usize = left.iter().sum();
        let n_right: usize = right.iter().sum();
        let dist = |counts: &[usize], n: usize| -> Vec<T> {
            if n == 0 {
                vec![T::zero(); counts.len()]
            } else {
                let n = T::lit(n as f64);
                counts.iter().map(|&c| T::lit(c as f64) / n).collect()
            }
        };
        Ok(Self {
            n_left,
            n_right,
            p_left: dist(&left, n_left),
            p_right: dist(&right, n_right),
            labels_onehot: onehot,
        })
    }

    pub fn n_total(&self) -> usize {
        self.n_left + self.n_right
    }

    pub fn info_gain(&self) -> T {
        let n = T::lit(self.n_total() as f64);
        let neg_entropy = |p: &[T]| -> T { p.iter().map(|&v| xlnx(v)).sum() };
        T::lit(self.n_left as f64) / n * neg_entropy(&self.p_left)
            + T::lit(self.n_right as f64) / n * neg_entropy(&self.p_right)
    }
}

/// `x ln x` with the `0 ln 0 = 0` convention.
fn xlnx<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x * x.ln()
    } else {
        T::zero()
    }
}

pub fn info_gain<T: Scalar>(labels: &[usize], mask: &[bool], num_classes: usize) -> Result<T> {
    Ok(SplitStats::<T>::compute(labels, mask, num_classes)?.info_gain())
}

/// `∂IG/∂1[own branch]` for every sample: `ln(p_{y_i}^{child}) / N`.
pub fn indicator_gradient<T: Scalar>(
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
) -> Result<Vec<T>> {
    let stats = SplitStats::<T>::compute(labels, mask, num_classes)?;
    let n = T::lit(stats.n_total() as f64);
    Ok(labels
        .iter()
        .zip(mask)
        .map(|(&y, &m)| {
            // a member's own class always has p > 0
            let p = if m { stats.p_left[y] } else { stats.p_right[y] };
            p.ln() / n
        })
        .collect())
}

/// `∂IG/∂cn` per sample: indicator gradient times the surrogate derivative,
/// with the right-branch sign convention applied to samples routed right.
pub fn condition_gradient<T: Scalar>(
    cn: &Tensor<T>,
    labels: &[usize],
    mask: &[bool],
    num_classes: usize,
    cfg: &SurrogateConfig<T>,
    sign: RightBranchSign,
) -> Result<Tensor<T>> {
    if cn.rows() != mask.len() || cn.cols() != 1 {
        return Err(Error::dim("condition_gradient", cn.shape(), &[mask.len(), 1]));
    }
    let values = cn.as_slice();
    if let Some(i) = (0..mask.len()).find(|&i| mask[i] != (values[i] > T::zero())) {
        return Err(Error::Contract(format!(
            "condition_gradient: mask[{i}] = {} but cn = {}",
            mask[i], values[i]
        )));
    }
    let ind = indicator_gradient::<T>(labels, mask, num_classes)?;
    let data = ind
        .iter()
        .zip(values)
        .zip(mask)
        .map(|((&g, &c), &m)| {
            let branch = if m { Branch::Left } else { Branch::Right };
            g * surrogate_derivative(c, cfg) * sign.factor(branch)
        })
        .collect();
    Tensor::from_vec(vec![mask.len(), 1], data)
}

/// Objective with fractional left memberships `m_i` (right membership
/// `1 - m_i`). Agrees with [`info_gain`] at 0/1 memberships.
pub fn relaxed_info_gain_oracle(
    labels: &[usize],
    memberships: &[f64],
    num_classes: usize,
) -> Result<f64> {
    let right: Vec<f64> = memberships.iter().map(|m| 1.0 - m).collect();
    relaxed_info_gain_split(labels, memberships, &right, num_classes)
}

/// Objective with independent left and right memberships per sample.
///
/// `N` is the number of samples; each child's weight is its membership mass.
pub fn relaxed_info_gain_split(
    labels: &[usize],
    left: &[f64],
    right: &[f64],
    num_classes: usize,
) -> Result<f64> {
    validate(labels, left.len(), num_classes)?;
    if right.len() != left.len() {
        return Err(Error::dim("relaxed_info_gain", &[left.len()], &[right.len()]));
    }
    if left.iter().chain(right).any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::Value("memberships must lie in [0, 1]".into()));
    }
    let n = labels.len() as f64;
    let child = |m: &[f64]| -> f64 {
        let mut mass = vec![0.0; num_classes];
        for (&y, &w) in labels.iter().zip(m) {
            mass[y] += w;
        }
        let total: f64 = mass.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let h: f64 = mass
            .iter()
            .filter(|&&s| s > 0.0)
            .map(|&s| (s / total) * (s / total).ln())
            .sum();
        total / n * h
    };
    Ok(child(left) + child(right))
}
