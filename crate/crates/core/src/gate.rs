//! Hard indicator forward, smooth surrogate backward.
//!
//! Forward routing always uses the step `1[x > 0]`. Backward replaces its
//! derivative with that of `1 - exp(-alpha |x|)`, i.e.
//! `alpha * exp(-alpha |x|) * sign(x)` with `sign(0) = 0`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig<T> {
    alpha: T,
}

impl<T: Scalar> SurrogateConfig<T> {
    pub fn new(alpha: T) -> Result<Self> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    /// Half-width of the band where the surrogate derivative is non-negligible.
    pub fn live_band(&self) -> T {
        T::lit(5.0) / self.alpha
    }
}

/// Sign convention used for samples routed right (`cn <= 0`).
///
/// `Same` applies the factor `alpha e^{-alpha|cn|} s(cn)` to both
/// branches; `Negated` flips it for the right branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RightBranchSign {
    #[default]
    Same,
    Negated,
}

impl RightBranchSign {
    pub fn factor<T: Scalar>(self, branch: Branch) -> T {
        match (self, branch) {
            (RightBranchSign::Negated, Branch::Right) => -T::one(),
            _ => T::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    pub fn of<T: Scalar>(cn: T) -> Self {
        if dirac_forward(cn) {
            Branch::Left
        } else {
            Branch::Right
        }
    }
}

/// `1[x > 0]`; zero goes to the right (`else`) branch.
pub fn dirac_forward<T: Scalar>(x: T) -> bool {
    x > T::zero()
}

pub fn sign<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub fn surrogate_derivative<T: Scalar>(x: T, cfg: &SurrogateConfig<T>) -> T {
    let a = cfg.alpha;
    a * (-a * x.abs()).exp() * sign(x)
}

/// The smooth stand-in itself, `1 - exp(-alpha |x|)`.
pub fn surrogate<T: Scalar>(x: T, cfg: &SurrogateConfig<T>) -> T {
    T::one() - (-cfg.alpha * x.abs()).exp()
}

/// Multiplies a branch's input by its indicator.
///
/// Forward is the identity (every row is on `branch` by precondition).
/// [`GatedBranch::backward`] passes `dh` through and returns the per-sample
/// condition-output gradient `<dh_i, h_i> * surrogate'(cn_i)`.
#[derive(Debug, Clone)]
pub struct GatedBranch<'a, T> {
    h: &'a Tensor<T>,
    cn: &'a Tensor<T>,
    branch: Branch,
    cfg: SurrogateConfig<T>,
    sign: RightBranchSign,
}

pub fn gate_apply<'a, T: Scalar>(
    h: &'a Tensor<T>,
    cn: &'a Tensor<T>,
    branch: Branch,
    cfg: SurrogateConfig<T>,
    sign: RightBranchSign,
) -> Result<(Tensor<T>, GatedBranch<'a, T>)> {
    if cn.rows() != h.rows() || cn.cols() != 1 {
        return Err(Error::dim("gate_apply", h.shape(), cn.shape()));
    }
    if let Some(i) = cn.as_slice().iter().position(|&c| Branch::of(c) != branch) {
        return Err(Error::Contract(format!(
            "gate_apply: sample {i} (cn = {}) is not routed to the {branch:?} branch",
            cn.as_slice()[i]
        )));
    }
    let gate = GatedBranch {
        h,
        cn,
        branch,
        cfg,
        sign,
    };
    Ok((h.clone(), gate))
}

impl<T: Scalar> GatedBranch<'_, T> {
    /// Returns `(dh, dcn)` with `dh` passed through unchanged.
    pub fn backward(&self, dh: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let dcn = gate_condition_grad(self.h, dh, self.cn, self.branch, &self.cfg, self.sign)?;
        Ok((dh.clone(), dcn))
    }
}

/// Per-sample `<dh_i, h_i> * surrogate'(cn_i)`, as an `n x 1` tensor.
pub fn gate_condition_grad<T: Scalar>(
    h: &Tensor<T>,
    dh: &Tensor<T>,
    cn: &Tensor<T>,
    branch: Branch,
    cfg: &SurrogateConfig<T>,
    sign: RightBranchSign,
) -> Result<Tensor<T>> {
    if dh.shape() != h.shape() || cn.rows() != h.rows() {
        return Err(Error::dim("gate backward", dh.shape(), h.shape()));
    }
    let factor: T = sign.factor(branch);
    let data = (0..h.rows())
        .map(|i| {
            let dot: T = h.row(i).iter().zip(dh.row(i)).map(|(&a, &b)| a * b).sum();
            dot * surrogate_derivative(cn.as_slice()[i], cfg) * factor
        })
        .collect();
    Tensor::from_vec(vec![h.rows(), 1], data)
}
