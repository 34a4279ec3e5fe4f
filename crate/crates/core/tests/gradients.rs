//! Gradient checks against finite differences and hand-chained formulas.

use approx::assert_relative_eq;
use ndt::gate::{surrogate, surrogate_derivative, RightBranchSign, SurrogateConfig};
use ndt::infogain::{condition_gradient, indicator_gradient, info_gain, relaxed_info_gain_split};
use ndt::layer::{Activation, DenseLayer, Mlp};
use ndt::routing::Batch;
use ndt::tree::{GradConfig, NdtModel, NetDims};
use ndt::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dense_layer_matches_finite_differences(
        seed in any::<u64>(),
        n in 1usize..5,
        fan_in in 1usize..6,
        fan_out in 1usize..6,
        tanh in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if tanh { Activation::Tanh } else { Activation::Identity };
        let layer = DenseLayer::new(
            random_tensor(&mut rng, &[fan_in, fan_out], 1.0),
            random_tensor(&mut rng, &[fan_out], 1.0),
            act,
        ).unwrap();
        let x = random_tensor(&mut rng, &[n, fan_in], 1.0);
        let dy = random_tensor(&mut rng, &[n, fan_out], 1.0);
        let f = |l: &DenseLayer<f64>, x: &Tensor<f64>| dot(&l.forward(x).unwrap().0, &dy);
        let (_, cache) = layer.forward(&x).unwrap();
        let (dx, dw, db) = layer.backward(&cache, &dy).unwrap();
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (f(&layer, &p) - f(&layer, &m)) / (2.0 * h);
            prop_assert!(rel(fd, dx.as_slice()[i]) < 1e-5, "dx[{}]: {} vs {}", i, fd, dx.as_slice()[i]);
        }
        for (which, grad) in [(0, &dw), (1, &db)] {
            for i in 0..grad.len() {
                let (mut p, mut m) = (layer.clone(), layer.clone());
                let bump = |l: &mut DenseLayer<f64>, d: f64| {
                    let (w, b) = l.params_mut();
                    let t = if which == 0 { w } else { b };
                    t.as_mut_slice()[i] += d;
                };
                bump(&mut p, h);
                bump(&mut m, -h);
                let fd = (f(&p, &x) - f(&m, &x)) / (2.0 * h);
                prop_assert!(rel(fd, grad.as_slice()[i]) < 1e-5);
            }
        }
    }

    #[test]
    fn surrogate_matches_finite_differences(mag in 0.2f64..1.0, negative in any::<bool>()) {
        let cfg = SurrogateConfig::new(10.0).unwrap();
        let x = if negative { -mag } else { mag };
        let h = 1e-5;
        let fd = (surrogate(x + h, &cfg) - surrogate(x - h, &cfg)) / (2.0 * h);
        prop_assert!(rel(fd, surrogate_derivative(x, &cfg)) < 1e-5);
    }

    #[test]
    fn indicator_gradient_matches_relaxed_objective(
        labels in prop::collection::vec(0usize..4, 2..16),
        mask_bits in any::<u64>(),
    ) {
        let n = labels.len();
        let mask: Vec<bool> = (0..n).map(|i| mask_bits >> i & 1 == 1).collect();
        let grad = indicator_gradient::<f64>(&labels, &mask, 4).unwrap();
        let left: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let right: Vec<f64> = left.iter().map(|m| 1.0 - m).collect();
        let base = relaxed_info_gain_split(&labels, &left, &right, 4).unwrap();
        prop_assert!((base - info_gain::<f64>(&labels, &mask, 4).unwrap()).abs() < 1e-12);
        let h = 1e-8;
        for i in 0..n {
            let (mut l, mut r) = (left.clone(), right.clone());
            if mask[i] { l[i] -= h } else { r[i] -= h }
            let fd = (base - relaxed_info_gain_split(&labels, &l, &r, 4).unwrap()) / h;
            prop_assert!((fd - grad[i]).abs() < 1e-6, "sample {}: {} vs {}", i, fd, grad[i]);
        }
    }

    #[test]
    fn matmul_matches_naive(seed in any::<u64>(), m in 0usize..65, k in 0usize..65, n in 0usize..65) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[m, k], 1.0);
        let b = random_tensor(&mut rng, &[k, n], 1.0);
        let c = a.matmul(&b).unwrap();
        for i in 0..m {
            for j in 0..n {
                let want: f64 = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
                prop_assert!((c.get(i, j) - want).abs() <= 1e-12 * (k as f64).max(1.0));
            }
        }
    }
}

fn tiny_dims() -> NetDims {
    NetDims {
        input_dim: 4,
        num_classes: 3,
        feature_hidden: vec![5],
        condition_hidden: vec![3],
        target_hidden: vec![4],
    }
}

fn total_loss(model: &NdtModel<f64>, batch: &Batch<f64>, lambda: f64) -> (f64, Vec<usize>) {
    let (logits, trace) = model.forward(batch).unwrap();
    let (parts, _) = model.loss(&logits, &trace, lambda).unwrap();
    (parts.total, trace.leaf_of().to_vec())
}

/// With gating off, feature and target gradients are the exact gradients of
/// the total loss for perturbations that do not change routing.
#[test]
fn tiny_model_end_to_end_gradients() {
    let mut checked = 0;
    for seed in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let model = NdtModel::<f64>::build(1, tiny_dims(), seed).unwrap();
        let x = random_tensor(&mut rng, &[6, 4], 1.0);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let batch = Batch::new(x, labels).unwrap();
        let (logits, trace) = model.forward(&batch).unwrap();
        if trace.nodes()[0].cn.as_slice().iter().any(|c| c.abs() < 0.05) {
            continue; // too close to a routing boundary
        }
        let lambda = 1.0;
        let (_, dlogits) = model.loss(&logits, &trace, lambda).unwrap();
        let cfg = GradConfig {
            surrogate: SurrogateConfig::new(1000.0).unwrap(),
            lambda_ig: lambda,
            gate_downstream_grad: false,
            right_branch_sign: RightBranchSign::Same,
        };
        let grads = model.backward(&trace, &dlogits, &cfg).unwrap();
        let (_, base_route) = total_loss(&model, &batch, lambda);
        let analytic: Vec<(String, Tensor<f64>, Tensor<f64>)> = {
            let mut probe = model.clone();
            probe
                .layers_mut()
                .into_iter()
                .zip(grads.layers())
                .map(|((name, _), g)| (name, g.weights.clone(), g.bias.clone()))
                .collect()
        };
        let h = 1e-6;
        for (li, (name, gw, gb)) in analytic.iter().enumerate() {
            if name.starts_with("condition") {
                continue;
            }
            for (which, grad) in [(0, gw), (1, gb)] {
                for i in 0..grad.len() {
                    let eval = |d: f64| {
                        let mut m = model.clone();
                        {
                            let mut layers = m.layers_mut();
                            let (w, b) = layers[li].1.params_mut();
                            let t = if which == 0 { w } else { b };
                            t.as_mut_slice()[i] += d;
                        }
                        total_loss(&m, &batch, lambda)
                    };
                    let ((fp, rp), (fm, rm)) = (eval(h), eval(-h));
                    assert_eq!((rp, rm), (base_route.clone(), base_route.clone()));
                    let fd = (fp - fm) / (2.0 * h);
                    let an = grad.as_slice()[i];
                    assert!(
                        (fd - an).abs() <= 1e-4 * fd.abs().max(an.abs()).max(1e-3),
                        "{name} param {i}: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} instances away from boundaries");
}

/// Condition-network gradient with gating off equals the hand-chained
/// composition `-lambda * indicator * surrogate' * sign` pushed through the
/// condition network's own backward pass.
#[test]
fn condition_gradient_matches_hand_chain() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = NetDims {
            input_dim: 3,
            num_classes: 2,
            feature_hidden: vec![],
            condition_hidden: vec![],
            target_hidden: vec![],
        };
        let model = NdtModel::<f64>::build(1, dims, seed).unwrap();
        let x = random_tensor(&mut rng, &[8, 3], 0.01);
        let labels: Vec<usize> = (0..8).map(|_| rng.gen_range(0..2)).collect();
        let batch = Batch::new(x.clone(), labels.clone()).unwrap();
        let (logits, trace) = model.forward(&batch).unwrap();
        let lambda = 0.7;
        let (_, dlogits) = model.loss(&logits, &trace, lambda).unwrap();
        for sign in [RightBranchSign::Same, RightBranchSign::Negated] {
            let surrogate = SurrogateConfig::new(20.0).unwrap();
            let cfg = GradConfig {
                surrogate,
                lambda_ig: lambda,
                gate_downstream_grad: false,
                right_branch_sign: sign,
            };
            let grads = model.backward(&trace, &dlogits, &cfg).unwrap();

            // hand chain: single tanh layer, cn = tanh(x w + b)
            let layer = &model.condition_nets()[0].layers()[0];
            let (cn, _) = layer.forward(&x).unwrap();
            let mask: Vec<bool> = cn.as_slice().iter().map(|&c| c > 0.0).collect();
            let ind = indicator_gradient::<f64>(&labels, &mask, 2).unwrap();
            let mut dw = vec![0.0; 3];
            let mut db = 0.0;
            for i in 0..8 {
                let c = cn.as_slice()[i];
                let s = match (sign, mask[i]) {
                    (RightBranchSign::Negated, false) => -1.0,
                    _ => 1.0,
                };
                let dcn = -lambda * ind[i] * surrogate_derivative(c, &surrogate) * s;
                let dz = dcn * (1.0 - c * c);
                for j in 0..3 {
                    dw[j] += x.get(i, j) * dz;
                }
                db += dz;
            }
            let g = &grads.conditions[0].layers[0];
            for j in 0..3 {
                assert!((g.weights.as_slice()[j] - dw[j]).abs() <= 1e-10 * dw[j].abs().max(1.0));
            }
            assert!((g.bias.as_slice()[0] - db).abs() <= 1e-10 * db.abs().max(1.0));

            // the same composition via the public helper
            let via = condition_gradient(&cn, &labels, &mask, 2, &surrogate, sign).unwrap();
            for i in 0..8 {
                let c = cn.as_slice()[i];
                let s = if sign == RightBranchSign::Negated && !mask[i] { -1.0 } else { 1.0 };
                assert_relative_eq!(
                    via.as_slice()[i],
                    ind[i] * surrogate_derivative(c, &surrogate) * s,
                    max_relative = 1e-12
                );
            }
        }
    }
}

/// Depth 0 is a plain classifier: its target gradients match a direct
/// backward pass through the same network.
#[test]
fn depth_zero_matches_plain_network() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = NetDims { feature_hidden: vec![], ..tiny_dims() };
    let model = NdtModel::<f64>::build(0, dims, 9).unwrap();
    let x = random_tensor(&mut rng, &[5, 4], 1.0);
    let labels = vec![0, 2, 1, 1, 0];
    let batch = Batch::new(x.clone(), labels.clone()).unwrap();
    let (logits, trace) = model.forward(&batch).unwrap();
    let (_, dlogits) = model.loss(&logits, &trace, 1.0).unwrap();
    let cfg = GradConfig {
        surrogate: SurrogateConfig::new(1000.0).unwrap(),
        lambda_ig: 1.0,
        gate_downstream_grad: true,
        right_branch_sign: RightBranchSign::Same,
    };
    let grads = model.backward(&trace, &dlogits, &cfg).unwrap();
    let net: &Mlp<f64> = &model.target_nets()[0];
    let (y, cache) = net.forward(&x).unwrap();
    assert_eq!(y, logits);
    let (_, direct) = net.backward(&cache, &dlogits, false).unwrap();
    assert_eq!(grads.targets[0], direct);
}
