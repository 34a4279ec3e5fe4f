//! Fully connected layers with explicit forward/backward contracts.
//!
//! A [`DenseLayer`] computes `y = act(x·W + b)` for a batch `x: n x fan_in`.
//! Forward returns a cache that backward consumes; every parameter mutation
//! bumps the layer's version, so a cache taken before an update is rejected.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_LAYER_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_LAYER_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Stamp {
    id: u64,
    version: u64,
}

#[derive(Debug)]
pub struct DenseLayer<T> {
    weights: Tensor<T>,
    bias: Tensor<T>,
    activation: Activation,
    stamp: Stamp,
}

impl<T: Clone> Clone for DenseLayer<T> {
    fn clone(&self) -> Self {
        Self {
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            activation: self.activation,
            stamp: Stamp {
                id: fresh_id(),
                version: 0,
            },
        }
    }
}

impl<T: PartialEq> PartialEq for DenseLayer<T> {
    fn eq(&self, other: &Self) -> bool {
        self.activation == other.activation
            && self.weights == other.weights
            && self.bias == other.bias
    }
}

/// Everything backward needs from one forward call.
#[derive(Debug, Clone)]
pub struct DenseCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
    stamp: Stamp,
}

impl<T> DenseCache<T> {
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    pub fn output(&self) -> &Tensor<T> {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.cols()] {
            return Err(Error::dim("dense layer", weights.shape(), bias.shape()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
            stamp: Stamp {
                id: fresh_id(),
                version: 0,
            },
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if fan_in == 0 || fan_out == 0 {
            return Err(Error::Config(format!(
                "layer dims must be positive, got {fan_in} x {fan_out}"
            )));
        }
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::lit(rng.gen_range(-limit..limit)))
            .collect();
        Self::new(
            Tensor::from_vec(vec![fan_in, fan_out], data)?,
            Tensor::zeros(&[fan_out]),
            activation,
        )
    }

    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Tensor<T> {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    /// Mutable access to `(weights, bias)`; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        self.stamp.version += 1;
        (&mut self.weights, &mut self.bias)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
        if x.shape().len() != 2 || x.cols() != self.fan_in() {
            return Err(Error::dim("dense_forward", x.shape(), self.weights.shape()));
        }
        let mut y = x.matmul(&self.weights)?;
        let b = self.bias.as_slice();
        let cols = self.fan_out();
        for row in y.as_mut_slice().chunks_exact_mut(cols) {
            for (v, &bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
        if self.activation == Activation::Tanh {
            for v in y.as_mut_slice() {
                *v = v.tanh();
            }
        }
        let cache = DenseCache {
            input: x.clone(),
            output: y.clone(),
            stamp: self.stamp,
        };
        Ok((y, cache))
    }

    /// Returns `(dx, grads)`; `dx` is skipped (None) when `need_dx` is false.
    pub fn backward_opt(
        &self,
        cache: &DenseCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, DenseGrads<T>)> {
        if cache.stamp != self.stamp {
            return Err(Error::Contract(
                "dense_backward called with a cache from a different layer or a stale parameter version"
                    .into(),
            ));
        }
        if dy.shape() != cache.output.shape() {
            return Err(Error::dim("dense_backward", dy.shape(), cache.output.shape()));
        }
        let dz = match self.activation {
            Activation::Identity => dy.clone(),
            Activation::Tanh => {
                let mut dz = dy.clone();
                for (g, &y) in dz.as_mut_slice().iter_mut().zip(cache.output.as_slice()) {
                    *g *= T::one() - y * y;
                }
                dz
            }
        };
        let dw = cache.input.t_matmul(&dz)?;
        let db = dz.sum_rows();
        let dx = if need_dx {
            Some(dz.matmul_t(&self.weights)?)
        } else {
            None
        };
        Ok((dx, DenseGrads { weights: dw, bias: db }))
    }

    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        dy: &Tensor<T>,
    ) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let (dx, g) = self.backward_opt(cache, dy, true)?;
        Ok((dx.expect("dx requested"), g.weights, g.bias))
    }

    pub fn cast<U: Scalar>(&self) -> DenseLayer<U> {
        DenseLayer::new(self.weights.cast(), self.bias.cast(), self.activation)
            .expect("cast preserves shapes")
    }
}

/// Stack of dense layers applied in order. An empty stack is the identity map.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    layers: Vec<DenseLayer<T>>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    caches: Vec<DenseCache<T>>,
}

impl<T> MlpCache<T> {
    pub fn layers(&self) -> &[DenseCache<T>] {
        &self.caches
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub layers: Vec<DenseGrads<T>>,
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| DenseGrads {
                    weights: Tensor::zeros(l.weights.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Mlp<T> {
    pub fn identity() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn from_layers(layers: Vec<DenseLayer<T>>) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::dim(
                    "mlp layer chain",
                    pair[0].weights.shape(),
                    pair[1].weights.shape(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// `dims = [in, h1, ..., out]`; hidden layers use `hidden`, the last `output`.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "a network needs at least input and output dims, got {dims:?}"
            )));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                DenseLayer::init(w[0], w[1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output width given an input width (identity nets pass it through).
    pub fn output_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, DenseLayer::fan_out)
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(DenseLayer::fan_in)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, MlpCache<T>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (y, c) = layer.forward(&h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, MlpCache { caches }))
    }

    /// Forward without keeping caches.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?.0;
        }
        Ok(h)
    }

    /// Backpropagates `dy`; the input gradient is only computed if `need_dx`.
    pub fn backward(
        &self,
        cache: &MlpCache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, MlpGrads<T>)> {
        if cache.caches.len() != self.layers.len() {
            return Err(Error::Contract(format!(
                "network cache has {} layers, network has {}",
                cache.caches.len(),
                self.layers.len()
            )));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dy.clone();
        let mut dx = None;
        for (i, (layer, c)) in self.layers.iter().zip(&cache.caches).enumerate().rev() {
            let want = need_dx || i > 0;
            let (d, lg) = layer.backward_opt(c, &g, want)?;
            grads.push(lg);
            match d {
                Some(d) if i > 0 => g = d,
                other => dx = other,
            }
        }
        grads.reverse();
        if self.layers.is_empty() && need_dx {
            dx = Some(dy.clone());
        }
        Ok((dx, MlpGrads { layers: grads }))
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(DenseLayer::cast).collect(),
        }
    }
}
