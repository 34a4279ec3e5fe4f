//! Neural decision tree.
//!
//! A shared feature network feeds a complete binary tree of depth `d`.
//! Internal node `k` (heap order, children `2k+1` and `2k+2`) holds a
//! condition network ending in one tanh unit; a sample goes left iff that
//! output is `> 0`. Each of the `2^d` leaves holds a target network
//! producing class logits. Forward splits the batch at every node with
//! [`sub_batch`] and joins leaf logits back into input order with
//! [`join_batch`].
//!
//! The loss is `cross_entropy - lambda * Σ_nodes IG(node)`. Feature and target
//! parameters get exact cross-entropy gradients through the routing
//! permutations. Condition parameters get the surrogate information-gain
//! gradient and, when enabled, the gate term that pulls the downstream loss
//! into the condition output.

mod stats;
mod train;

pub use stats::{leaf_statistics, LeafStats};
pub use train::{accuracy, train, EpochRecord, SplitInit, TrainConfig, TrainOutcome};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gate::{gate_condition_grad, Branch, RightBranchSign, SurrogateConfig};
use crate::infogain::{condition_gradient, info_gain};
use crate::layer::{Activation, DenseGrads, DenseLayer, Mlp, MlpCache, MlpGrads};
use crate::loss::softmax_cross_entropy;
use crate::routing::{join_batch, split_gradients, split_rows, sub_batch, Batch};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Layer widths of the three network kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetDims {
    pub input_dim: usize,
    pub num_classes: usize,
    /// Empty means the identity feature network.
    pub feature_hidden: Vec<usize>,
    pub condition_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
}

impl NetDims {
    /// MNIST setup: condition `784-300-1`, target `784-300-100-10`.
    pub fn mnist() -> Self {
        Self {
            input_dim: 784,
            num_classes: 10,
            feature_hidden: vec![],
            condition_hidden: vec![300],
            target_hidden: vec![300, 100],
        }
    }

    /// CIFAR setup: condition `3072-3000-1`, target `3072-3000-1000-C`.
    pub fn cifar(num_classes: usize) -> Self {
        Self {
            input_dim: 3072,
            num_classes,
            feature_hidden: vec![],
            condition_hidden: vec![3000],
            target_hidden: vec![3000, 1000],
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_hidden.last().copied().unwrap_or(self.input_dim)
    }

    fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.input_dim)
            .chain(&self.feature_hidden)
            .chain(&self.condition_hidden)
            .chain(&self.target_hidden);
        if self.num_classes < 2 || all.into_iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("invalid network dims: {self:?}")));
        }
        Ok(())
    }
}

pub fn num_internal(depth: usize) -> usize {
    (1usize << depth) - 1
}

pub fn num_leaves(depth: usize) -> usize {
    1usize << depth
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtModel<T> {
    depth: usize,
    dims: NetDims,
    feature_net: Mlp<T>,
    condition_nets: Vec<Mlp<T>>,
    target_nets: Vec<Mlp<T>>,
}

/// Per-node record of one forward pass.
#[derive(Debug, Clone)]
pub struct NodeTrace<T> {
    pub input: Tensor<T>,
    pub labels: Vec<usize>,
    pub cn: Tensor<T>,
    pub mask: Vec<bool>,
    cache: MlpCache<T>,
    rec: crate::routing::PartitionRecord,
}

#[derive(Debug, Clone)]
struct LeafTrace<T> {
    cache: MlpCache<T>,
}

/// Everything backward needs from a forward pass, plus routing outcomes.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    labels: Vec<usize>,
    feature_cache: MlpCache<T>,
    nodes: Vec<NodeTrace<T>>,
    leaves: Vec<LeafTrace<T>>,
    leaf_of: Vec<usize>,
}

impl<T> Trace<T> {
    pub fn nodes(&self) -> &[NodeTrace<T>] {
        &self.nodes
    }

    /// Leaf reached by each input row.
    pub fn leaf_of(&self) -> &[usize] {
        &self.leaf_of
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossParts<T> {
    pub total: T,
    pub cross_entropy: T,
    /// Info gain at each internal node; `None` where fewer than 2 samples arrived.
    pub info_gain: Vec<Option<T>>,
}

impl<T: Scalar> LossParts<T> {
    pub fn info_gain_sum(&self) -> T {
        self.info_gain.iter().flatten().copied().sum()
    }
}

/// Backward-relevant knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradConfig<T> {
    pub surrogate: SurrogateConfig<T>,
    pub lambda_ig: T,
    pub gate_downstream_grad: bool,
    pub right_branch_sign: RightBranchSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NdtGrads<T> {
    pub feature: MlpGrads<T>,
    pub conditions: Vec<MlpGrads<T>>,
    pub targets: Vec<MlpGrads<T>>,
}

impl<T> NdtGrads<T> {
    /// Layer gradients in [`NdtModel::layers_mut`] order.
    pub fn layers(&self) -> impl Iterator<Item = &DenseGrads<T>> {
        self.feature
            .layers
            .iter()
            .chain(self.conditions.iter().flat_map(|g| &g.layers))
            .chain(self.targets.iter().flat_map(|g| &g.layers))
    }
}

impl<T: Scalar> NdtModel<T> {
    pub fn build(depth: usize, dims: NetDims, seed: u64) -> Result<Self> {
        dims.validate()?;
        if depth > 16 {
            return Err(Error::Config(format!("depth {depth} is unreasonably large")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feature_net = if dims.feature_hidden.is_empty() {
            Mlp::identity()
        } else {
            let mut d = vec![dims.input_dim];
            d.extend(&dims.feature_hidden);
            Mlp::init(&d, Activation::Tanh, Activation::Tanh, &mut rng)?
        };
        let f = dims.feature_dim();
        let mut cond_dims = vec![f];
        cond_dims.extend(&dims.condition_hidden);
        cond_dims.push(1);
        let mut target_dims = vec![f];
        target_dims.extend(&dims.target_hidden);
        target_dims.push(dims.num_classes);
        let condition_nets = (0..num_internal(depth))
            .map(|_| Mlp::init(&cond_dims, Activation::Tanh, Activation::Tanh, &mut rng))
            .collect::<Result<_>>()?;
        let target_nets = (0..num_leaves(depth))
            .map(|_| Mlp::init(&target_dims, Activation::Tanh, Activation::Identity, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            depth,
            dims,
            feature_net,
            condition_nets,
            target_nets,
        })
    }

    /// Assembles a model from explicit networks, checking the tree shape.
    pub fn from_parts(
        depth: usize,
        input_dim: usize,
        num_classes: usize,
        feature_net: Mlp<T>,
        condition_nets: Vec<Mlp<T>>,
        target_nets: Vec<Mlp<T>>,
    ) -> Result<Self> {
        let hidden = |net: &Mlp<T>| -> Vec<usize> {
            let l = net.layers();
            l[..l.len().saturating_sub(1)].iter().map(DenseLayer::fan_out).collect()
        };
        if condition_nets.len() != num_internal(depth) || target_nets.len() != num_leaves(depth) {
            return Err(Error::Config(format!(
                "depth {depth} needs {} condition and {} target networks, got {} and {}",
                num_internal(depth),
                num_leaves(depth),
                condition_nets.len(),
                target_nets.len()
            )));
        }
        if feature_net.input_dim().is_some_and(|d| d != input_dim) {
            return Err(Error::Config("feature network input width mismatch".into()));
        }
        let f = feature_net.output_dim(input_dim);
        for c in &condition_nets {
            if c.input_dim() != Some(f) || c.output_dim(f) != 1 {
                return Err(Error::Config("condition networks must map features to 1 output".into()));
            }
        }
        for t in &target_nets {
            if t.input_dim() != Some(f) || t.output_dim(f) != num_classes {
                return Err(Error::Config(format!(
                    "target networks must map features to {num_classes} logits"
                )));
            }
        }
        let dims = NetDims {
            input_dim,
            num_classes,
            feature_hidden: feature_net.layers().iter().map(DenseLayer::fan_out).collect(),
            condition_hidden: condition_nets.first().map(hidden).unwrap_or_default(),
            target_hidden: hidden(&target_nets[0]),
        };
        Ok(Self {
            depth,
            dims,
            feature_net,
            condition_nets,
            target_nets,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dims(&self) -> &NetDims {
        &self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.dims.input_dim
    }

    pub fn feature_net(&self) -> &Mlp<T> {
        &self.feature_net
    }

    pub fn condition_nets(&self) -> &[Mlp<T>] {
        &self.condition_nets
    }

    pub fn target_nets(&self) -> &[Mlp<T>] {
        &self.target_nets
    }

    /// All networks in storage order: feature, conditions, targets.
    pub fn networks(&self) -> impl Iterator<Item = &Mlp<T>> {
        std::iter::once(&self.feature_net)
            .chain(&self.condition_nets)
            .chain(&self.target_nets)
    }

    pub fn num_params(&self) -> usize {
        self.networks().map(Mlp::num_params).sum()
    }

    /// Every dense layer with a stable block name, in storage order.
    pub fn layers_mut(&mut self) -> Vec<(String, &mut DenseLayer<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.feature_net.layers_mut().iter_mut().enumerate() {
            out.push((format!("feature.{i}"), l));
        }
        for (k, net) in self.condition_nets.iter_mut().enumerate() {
            for (i, l) in net.layers_mut().iter_mut().enumerate() {
                out.push((format!("condition[{k}].{i}"), l));
            }
        }
        for (k, net) in self.target_nets.iter_mut().enumerate() {
            for (i, l) in net.layers_mut().iter_mut().enumerate() {
                out.push((format!("target[{k}].{i}"), l));
            }
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> NdtModel<U> {
        NdtModel {
            depth: self.depth,
            dims: self.dims.clone(),
            feature_net: self.feature_net.cast(),
            condition_nets: self.condition_nets.iter().map(Mlp::cast).collect(),
            target_nets: self.target_nets.iter().map(Mlp::cast).collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dims.input_dim {
            return Err(Error::dim("ndt forward", x.shape(), &[self.dims.input_dim]));
        }
        Ok(())
    }

    /// Hard-routed forward pass. Output rows follow input row order.
    pub fn forward(&self, batch: &Batch<T>) -> Result<(Tensor<T>, Trace<T>)> {
        self.check_input(&batch.features)?;
        let n = batch.len();
        let (features, feature_cache) = self.feature_net.forward(&batch.features)?;
        let local = Batch {
            features,
            labels: batch.labels.clone(),
            positions: (0..n).collect(),
        };
        let mut nodes = Vec::with_capacity(num_internal(self.depth));
        nodes.resize_with(num_internal(self.depth), || None);
        let mut leaves = Vec::with_capacity(num_leaves(self.depth));
        leaves.resize_with(num_leaves(self.depth), || None);
        let mut leaf_of = vec![0; n];
        let logits = self.forward_node(0, local, &mut nodes, &mut leaves, &mut leaf_of)?;
        let trace = Trace {
            labels: batch.labels.clone(),
            feature_cache,
            nodes: nodes.into_iter().map(|t| t.expect("every node visited")).collect(),
            leaves: leaves.into_iter().map(|t| t.expect("every leaf visited")).collect(),
            leaf_of,
        };
        Ok((logits, trace))
    }

    fn forward_node(
        &self,
        node: usize,
        batch: Batch<T>,
        nodes: &mut [Option<NodeTrace<T>>],
        leaves: &mut [Option<LeafTrace<T>>],
        leaf_of: &mut [usize],
    ) -> Result<Tensor<T>> {
        let internal = num_internal(self.depth);
        if node >= internal {
            let leaf = node - internal;
            let (logits, cache) = self.target_nets[leaf].forward(&batch.features)?;
            for &p in &batch.positions {
                leaf_of[p] = leaf;
            }
            leaves[leaf] = Some(LeafTrace { cache });
            return Ok(logits);
        }
        let (cn, cache) = self.condition_nets[node].forward(&batch.features)?;
        let mask: Vec<bool> = cn.as_slice().iter().map(|&c| Branch::of(c) == Branch::Left).collect();
        let (left, right, rec) = sub_batch(&batch, &mask)?;
        // Gating multiplies each branch by its indicator, which is 1 on the
        // branch, so forward passes the sub-batches through untouched.
        let out_l = self.forward_node(2 * node + 1, left, nodes, leaves, leaf_of)?;
        let out_r = self.forward_node(2 * node + 2, right, nodes, leaves, leaf_of)?;
        let logits = join_batch(&out_l, &out_r, &rec)?;
        nodes[node] = Some(NodeTrace {
            input: batch.features,
            labels: batch.labels,
            cn,
            mask,
            cache,
            rec,
        });
        Ok(logits)
    }

    /// Logits without keeping caches.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let batch = Batch::new(x.clone(), vec![0; x.rows()])?;
        Ok(self.forward(&batch)?.0)
    }

    /// Cross-entropy plus weighted info-gain terms, and `dLoss/dlogits`.
    pub fn loss(
        &self,
        logits: &Tensor<T>,
        trace: &Trace<T>,
        lambda_ig: T,
    ) -> Result<(LossParts<T>, Tensor<T>)> {
        let (ce, dlogits) = softmax_cross_entropy(logits, &trace.labels)?;
        let c = self.dims.num_classes;
        let info_gain = trace
            .nodes
            .iter()
            .map(|nt| {
                if nt.labels.len() < 2 {
                    Ok(None)
                } else {
                    info_gain::<T>(&nt.labels, &nt.mask, c).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let ig_sum: T = info_gain.iter().flatten().copied().sum();
        Ok((
            LossParts {
                total: ce - lambda_ig * ig_sum,
                cross_entropy: ce,
                info_gain,
            },
            dlogits,
        ))
    }

    pub fn backward(
        &self,
        trace: &Trace<T>,
        dlogits: &Tensor<T>,
        cfg: &GradConfig<T>,
    ) -> Result<NdtGrads<T>> {
        if trace.nodes.len() != self.condition_nets.len()
            || trace.leaves.len() != self.target_nets.len()
            || dlogits.rows() != trace.labels.len()
        {
            return Err(Error::Contract("trace does not match this model".into()));
        }
        let need_dx = cfg.gate_downstream_grad || !self.feature_net.is_identity();
        // every node is visited below, so the placeholders are all replaced
        let empty = || MlpGrads { layers: Vec::new() };
        let mut grads = NdtGrads {
            feature: MlpGrads::zeros_like(&self.feature_net),
            conditions: self.condition_nets.iter().map(|_| empty()).collect(),
            targets: self.target_nets.iter().map(|_| empty()).collect(),
        };
        let dx = self.backward_node(0, trace, dlogits, cfg, need_dx, &mut grads)?;
        if !self.feature_net.is_identity() {
            let dx = dx.expect("input gradient requested");
            grads.feature = self.feature_net.backward(&trace.feature_cache, &dx, false)?.1;
        }
        Ok(grads)
    }

    fn backward_node(
        &self,
        node: usize,
        trace: &Trace<T>,
        dout: &Tensor<T>,
        cfg: &GradConfig<T>,
        need_dx: bool,
        grads: &mut NdtGrads<T>,
    ) -> Result<Option<Tensor<T>>> {
        let internal = num_internal(self.depth);
        if node >= internal {
            let leaf = node - internal;
            let (dx, g) =
                self.target_nets[leaf].backward(&trace.leaves[leaf].cache, dout, need_dx)?;
            grads.targets[leaf] = g;
            return Ok(dx);
        }
        let nt = &trace.nodes[node];
        let (d_left, d_right) = split_gradients(dout, &nt.rec)?;
        let dx_left = self.backward_node(2 * node + 1, trace, &d_left, cfg, need_dx, grads)?;
        let dx_right = self.backward_node(2 * node + 2, trace, &d_right, cfg, need_dx, grads)?;

        let n = nt.labels.len();
        let mut dcn = Tensor::zeros(&[n, 1]);
        if cfg.gate_downstream_grad {
            let (x_l, x_r) = split_rows(&nt.input, &nt.rec)?;
            let (cn_l, cn_r) = split_rows(&nt.cn, &nt.rec)?;
            let dx_l = dx_left.as_ref().expect("input gradient requested");
            let dx_r = dx_right.as_ref().expect("input gradient requested");
            let g_l = gate_condition_grad(&x_l, dx_l, &cn_l, Branch::Left, &cfg.surrogate, cfg.right_branch_sign)?;
            let g_r = gate_condition_grad(&x_r, dx_r, &cn_r, Branch::Right, &cfg.surrogate, cfg.right_branch_sign)?;
            dcn.add_assign(&join_batch(&g_l, &g_r, &nt.rec)?)?;
        }
        if n >= 2 && cfg.lambda_ig != T::zero() {
            let mut g = condition_gradient(
                &nt.cn,
                &nt.labels,
                &nt.mask,
                self.dims.num_classes,
                &cfg.surrogate,
                cfg.right_branch_sign,
            )?;
            // loss = ce - lambda * IG
            g.scale(-cfg.lambda_ig);
            dcn.add_assign(&g)?;
        }
        grads.conditions[node] = self.condition_nets[node].backward(&nt.cache, &dcn, false)?.1;

        if !need_dx {
            return Ok(None);
        }
        let dx_l = dx_left.expect("input gradient requested");
        let dx_r = dx_right.expect("input gradient requested");
        Ok(Some(join_batch(&dx_l, &dx_r, &nt.rec)?))
    }

    /// Argmax class per row; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        const CHUNK: usize = 2048;
        self.check_input(x)?;
        let mut out = Vec::with_capacity(x.rows());
        let idx: Vec<usize> = (0..x.rows()).collect();
        for chunk in idx.chunks(CHUNK) {
            let logits = self.logits(&x.select_rows(chunk))?;
            out.extend((0..logits.rows()).map(|i| argmax(logits.row(i))));
        }
        Ok(out)
    }

    /// Shifts each condition network's output bias so that the median
    /// pre-activation over the rows reaching it is zero, root first.
    /// Nodes no row reaches are left alone.
    pub fn calibrate_splits(&mut self, x: &Tensor<T>) -> Result<()> {
        self.check_input(x)?;
        let features = self.feature_net.infer(x)?;
        let mut rows_at: Vec<Vec<usize>> = vec![Vec::new(); num_internal(self.depth)];
        if let Some(root) = rows_at.first_mut() {
            *root = (0..x.rows()).collect();
        }
        for node in 0..rows_at.len() {
            let rows = std::mem::take(&mut rows_at[node]);
            if rows.is_empty() {
                continue;
            }
            let net = &mut self.condition_nets[node];
            let (last, hidden) = net.layers_mut().split_last_mut().expect("condition net has layers");
            let mut h = features.select_rows(&rows);
            for layer in hidden.iter() {
                h = layer.forward(&h)?.0;
            }
            let mut pre: Vec<T> = h
                .matmul(last.weights())?
                .as_slice()
                .iter()
                .map(|&v| v + last.bias().as_slice()[0])
                .collect();
            pre.sort_by(|a, b| a.partial_cmp(b).expect("finite pre-activations"));
            let median = pre[pre.len() / 2];
            last.params_mut().1.as_mut_slice()[0] -= median;

            let cn = net.infer(&features.select_rows(&rows))?;
            if 2 * node + 1 < rows_at.len() {
                for (&r, &c) in rows.iter().zip(cn.as_slice()) {
                    let child = match Branch::of(c) {
                        Branch::Left => 2 * node + 1,
                        Branch::Right => 2 * node + 2,
                    };
                    rows_at[child].push(r);
                }
            }
        }
        Ok(())
    }

    /// Leaf index reached by every row.
    pub fn route(&self, x: &Tensor<T>) -> Result<Vec<usize>> {
        self.check_input(x)?;
        let features = self.feature_net.infer(x)?;
        let mut leaf_of = vec![0; x.rows()];
        let idx: Vec<usize> = (0..x.rows()).collect();
        self.route_node(0, &features, idx, &mut leaf_of)?;
        Ok(leaf_of)
    }

    fn route_node(
        &self,
        node: usize,
        features: &Tensor<T>,
        rows: Vec<usize>,
        leaf_of: &mut [usize],
    ) -> Result<()> {
        let internal = num_internal(self.depth);
        if node >= internal {
            for r in rows {
                leaf_of[r] = node - internal;
            }
            return Ok(());
        }
        let cn = self.condition_nets[node].infer(&features.select_rows(&rows))?;
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (&r, &c) in rows.iter().zip(cn.as_slice()) {
            match Branch::of(c) {
                Branch::Left => left.push(r),
                Branch::Right => right.push(r),
            }
        }
        self.route_node(2 * node + 1, features, left, leaf_of)?;
        self.route_node(2 * node + 2, features, right, leaf_of)
    }
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(depth: usize, seed: u64) -> NdtModel<f64> {
        let dims = NetDims {
            input_dim: 4,
            num_classes: 3,
            feature_hidden: vec![],
            condition_hidden: vec![5],
            target_hidden: vec![6],
        };
        NdtModel::build(depth, dims, seed).unwrap()
    }

    #[test]
    fn node_counts() {
        let m = tiny(0, 1);
        assert!(m.condition_nets().is_empty());
        assert_eq!(m.target_nets().len(), 1);
        let m = tiny(2, 1);
        assert_eq!(m.condition_nets().len(), 3);
        assert_eq!(m.target_nets().len(), 4);
        assert!(m.condition_nets().iter().all(|c| c.output_dim(4) == 1));
        assert!(m.target_nets().iter().all(|t| t.output_dim(4) == 3));
    }

    #[test]
    fn seeded_build_is_deterministic() {
        assert_eq!(tiny(2, 7), tiny(2, 7));
        assert_ne!(tiny(2, 7), tiny(2, 8));
    }

    #[test]
    fn invalid_dims_rejected() {
        let mut dims = NetDims::mnist();
        dims.condition_hidden = vec![0];
        assert!(matches!(NdtModel::<f64>::build(1, dims, 0), Err(Error::Config(_))));
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[0.1, 0.9]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn depth_zero_is_plain_classifier() {
        let m = tiny(0, 3);
        let x = Tensor::from_f64(vec![3, 4], &(0..12).map(|v| v as f64 * 0.1 - 0.5).collect::<Vec<_>>()).unwrap();
        let b = Batch::new(x.clone(), vec![0, 2, 1]).unwrap();
        let (logits, trace) = m.forward(&b).unwrap();
        let (direct, cache) = m.target_nets()[0].forward(&x).unwrap();
        assert_eq!(logits, direct);
        let (parts, d) = m.loss(&logits, &trace, 1.0).unwrap();
        assert_eq!(parts.total, parts.cross_entropy);
        let cfg = GradConfig {
            surrogate: SurrogateConfig::new(1000.0).unwrap(),
            lambda_ig: 1.0,
            gate_downstream_grad: true,
            right_branch_sign: RightBranchSign::Same,
        };
        let g = m.backward(&trace, &d, &cfg).unwrap();
        let plain = m.target_nets()[0].backward(&cache, &d, true).unwrap().1;
        assert_eq!(g.targets[0], plain);
    }

    #[test]
    fn routes_agree_with_forward_trace() {
        let m = tiny(2, 11);
        let x = Tensor::from_f64(vec![6, 4], &(0..24).map(|v| ((v * 7 % 11) as f64 - 5.0) * 0.3).collect::<Vec<_>>()).unwrap();
        let b = Batch::new(x.clone(), vec![0; 6]).unwrap();
        let (_, trace) = m.forward(&b).unwrap();
        assert_eq!(m.route(&x).unwrap(), trace.leaf_of());
    }

    #[test]
    fn wrong_input_width() {
        let m = tiny(1, 1);
        assert!(matches!(
            m.predict(&Tensor::zeros(&[2, 5])),
            Err(Error::Dimension { .. })
        ));
    }
}
