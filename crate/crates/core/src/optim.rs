//! AdaDelta.
//!
//! ```text
//! E[g²]  <- rho * E[g²] + (1 - rho) * g²
//! delta  =  -sqrt(E[Δ²] + eps) / sqrt(E[g²] + eps) * g
//! E[Δ²]  <- rho * E[Δ²] + (1 - rho) * delta²
//! param  <- param + delta
//! ```

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaDelta<T> {
    pub rho: T,
    pub epsilon: T,
}

impl<T: Scalar> AdaDelta<T> {
    pub fn new(rho: T, epsilon: T) -> Result<Self> {
        if !(rho > T::zero() && rho < T::one()) {
            return Err(Error::Config(format!("rho must lie in (0, 1), got {rho}")));
        }
        if !(epsilon > T::zero()) || !epsilon.is_finite() {
            return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { rho, epsilon })
    }

    /// Applies one update to `params` in place.
    ///
    /// Gradients are checked for finiteness before anything is touched, so a
    /// failed step leaves both parameters and state unchanged.
    pub fn step(
        &self,
        state: &mut AdaDeltaState<T>,
        params: &mut Tensor<T>,
        grads: &Tensor<T>,
        block: &str,
    ) -> Result<()> {
        if params.shape() != grads.shape() || state.sq_grad.shape() != params.shape() {
            return Err(Error::Optimizer {
                block: block.to_owned(),
                reason: format!(
                    "shape mismatch: params {:?}, grads {:?}, state {:?}",
                    params.shape(),
                    grads.shape(),
                    state.sq_grad.shape()
                ),
            });
        }
        if let Some(i) = grads.as_slice().iter().position(|g| !g.is_finite()) {
            return Err(Error::Optimizer {
                block: block.to_owned(),
                reason: format!("non-finite gradient at flat index {i}"),
            });
        }
        let (rho, eps) = (self.rho, self.epsilon);
        let keep = T::one() - rho;
        let p = params.as_mut_slice();
        let eg = state.sq_grad.as_mut_slice();
        let ed = state.sq_delta.as_mut_slice();
        for (((p, &g), eg), ed) in p.iter_mut().zip(grads.as_slice()).zip(eg).zip(ed) {
            *eg = rho * *eg + keep * g * g;
            let delta = -((*ed + eps).sqrt() / (*eg + eps).sqrt()) * g;
            *ed = rho * *ed + keep * delta * delta;
            *p += delta;
        }
        Ok(())
    }
}

/// Running averages for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaDeltaState<T> {
    pub sq_grad: Tensor<T>,
    pub sq_delta: Tensor<T>,
}

impl<T: Scalar> AdaDeltaState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            sq_grad: Tensor::zeros(shape),
            sq_delta: Tensor::zeros(shape),
        }
    }
}
