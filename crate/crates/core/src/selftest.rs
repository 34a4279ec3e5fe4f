//! Quick numerical self-checks, run by `ndt selftest`.
//!
//! Each check compares a production routine against an independent oracle
//! (naive loops, finite differences, closed-form values) on seeded random
//! instances. Small enough to finish in well under a second.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gate::{surrogate, surrogate_derivative, SurrogateConfig};
use crate::infogain::{indicator_gradient, info_gain, relaxed_info_gain_split};
use crate::layer::{Activation, DenseLayer};
use crate::optim::{AdaDelta, AdaDeltaState};
use crate::routing::{
    allocate_batch, allocate_batch_backward, join_batch, sub_batch, Batch, LinkRecord,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(vec![rows, cols], data).expect("shape matches data")
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn outcome(name: &'static str, worst: f64, tol: f64) -> CheckResult {
    CheckResult {
        name,
        passed: worst <= tol,
        detail: format!("worst {worst:.3e} (tol {tol:.0e})"),
    }
}

fn check_matmul(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (m, k, n) = (rng.gen_range(0..17), rng.gen_range(0..17), rng.gen_range(0..17));
        let a = random_tensor(rng, m, k);
        let b = random_tensor(rng, k, n);
        let c = a.matmul(&b).expect("conforming shapes");
        for i in 0..m {
            for j in 0..n {
                let naive: f64 = (0..k).map(|p| a.get(i, p) * b.get(p, j)).sum();
                worst = worst.max((c.get(i, j) - naive).abs());
            }
        }
    }
    outcome("matmul vs naive loops", worst, 1e-12)
}

fn check_dense_gradients(rng: &mut ChaCha8Rng) -> CheckResult {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (n, fi, fo) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
        let bias = Tensor::from_vec(vec![fo], random_tensor(rng, 1, fo).into_vec()).expect("shape");
        let layer =
            DenseLayer::new(random_tensor(rng, fi, fo), bias, Activation::Tanh).expect("valid layer");
        let x = random_tensor(rng, n, fi);
        let dy = random_tensor(rng, n, fo);
        // scalar objective <dy, layer(x)>
        let objective = |l: &DenseLayer<f64>, x: &Tensor<f64>| -> f64 {
            let (y, _) = l.forward(x).expect("forward");
            y.as_slice().iter().zip(dy.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = layer.forward(&x).expect("forward");
        let (dx, dw, _) = layer.backward(&cache, &dy).expect("backward");
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_mut_slice()[i] += h;
            xm.as_mut_slice()[i] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            worst = worst.max(rel_err(fd, dx.as_slice()[i]));
        }
        for i in 0..dw.len() {
            let (mut lp, mut lm) = (layer.clone(), layer.clone());
            lp.params_mut().0.as_mut_slice()[i] += h;
            lm.params_mut().0.as_mut_slice()[i] -= h;
            let fd = (objective(&lp, &x) - objective(&lm, &x)) / (2.0 * h);
            worst = worst.max(rel_err(fd, dw.as_slice()[i]));
        }
    }
    outcome("dense layer vs finite differences", worst, 1e-5)
}

fn check_surrogate(rng: &mut ChaCha8Rng) -> CheckResult {
    let cfg = SurrogateConfig::new(10.0).expect("positive alpha");
    let h = 1e-6;
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let mag = rng.gen_range(0.2..1.0);
        let x = if rng.gen_bool(0.5) { mag } else { -mag };
        let fd = (surrogate(x + h, &cfg) - surrogate(x - h, &cfg)) / (2.0 * h);
        worst = worst.max(rel_err(fd, surrogate_derivative(x, &cfg)));
    }
    outcome("surrogate derivative vs finite differences", worst, 1e-5)
}

fn check_indicator_gradient(rng: &mut ChaCha8Rng) -> CheckResult {
    let h = 1e-7;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(2..10);
        let classes = rng.gen_range(2..4);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let grad = indicator_gradient::<f64>(&labels, &mask, classes).expect("valid split");
        let left: Vec<f64> = mask.iter().map(|&m| f64::from(u8::from(m))).collect();
        let right: Vec<f64> = left.iter().map(|m| 1.0 - m).collect();
        let base = relaxed_info_gain_split(&labels, &left, &right, classes).expect("valid");
        for i in 0..n {
            // lower the sample's own-side membership from 1
            let (mut l, mut r) = (left.clone(), right.clone());
            if mask[i] {
                l[i] -= h;
            } else {
                r[i] -= h;
            }
            let moved = relaxed_info_gain_split(&labels, &l, &r, classes).expect("valid");
            let fd = (base - moved) / h;
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    outcome("indicator gradient vs relaxed objective", worst, 1e-6)
}

fn check_info_gain_values() -> CheckResult {
    let cases: [(&[usize], &[bool], f64); 3] = [
        (&[0, 0, 1, 1], &[true, true, false, false], 0.0),
        (&[0, 1], &[true, true], -std::f64::consts::LN_2),
        (&[0, 0, 1, 1], &[true, true, true, false], 0.75 * (2.0 / 3.0f64 * (2.0 / 3.0f64).ln() + 1.0 / 3.0 * (1.0 / 3.0f64).ln())),
    ];
    let worst = cases
        .iter()
        .map(|(y, m, want)| (info_gain::<f64>(y, m, 2).expect("valid split") - want).abs())
        .fold(0.0, f64::max);
    outcome("info gain hand values", worst, 1e-12)
}

fn check_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut failures = 0;
    for _ in 0..200 {
        let n = rng.gen_range(0..12);
        let x = random_tensor(rng, n, 3);
        let batch = Batch::new(x.clone(), vec![0; n]).expect("valid batch");
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let (l, r, rec) = sub_batch(&batch, &mask).expect("mask fits");
        let back = join_batch(&l.features, &r.features, &rec).expect("record fits");
        failures += usize::from(back != x);
    }
    CheckResult {
        name: "sub_batch / join_batch round trip",
        passed: failures == 0,
        detail: format!("{failures} of 200 mismatched"),
    }
}

fn check_adjoint(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (src, dst) = (rng.gen_range(1..8), rng.gen_range(1..8));
        let mut links = Vec::new();
        for d in 0..dst {
            if rng.gen_bool(0.7) {
                links.push((rng.gen_range(0..src), d));
            }
        }
        let links = LinkRecord::new(links).expect("distinct destinations");
        let x = random_tensor(rng, src, 2);
        let g = random_tensor(rng, dst, 2);
        let ax = allocate_batch(&x, &links, dst).expect("links in range");
        let atg = allocate_batch_backward(&g, &links, src).expect("links in range");
        let dot = |a: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
            a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum()
        };
        worst = worst.max((dot(&ax, &g) - dot(&x, &atg)).abs());
    }
    outcome("allocate_batch adjoint identity", worst, 1e-12)
}

fn check_adadelta() -> CheckResult {
    let opt = AdaDelta::new(0.6, 1e-6).expect("valid constants");
    let mut state = AdaDeltaState::new(&[1]);
    let mut p = Tensor::from_vec(vec![1], vec![0.0]).expect("shape");
    let g = Tensor::from_vec(vec![1], vec![1.0]).expect("shape");
    opt.step(&mut state, &mut p, &g, "selftest").expect("finite step");
    outcome("AdaDelta first step", (p.as_slice()[0] + 0.0015811f64).abs(), 1e-7)
}

/// Runs every check with the given seed.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        check_matmul(&mut rng),
        check_dense_gradients(&mut rng),
        check_surrogate(&mut rng),
        check_indicator_gradient(&mut rng),
        check_info_gain_values(),
        check_round_trip(&mut rng),
        check_adjoint(&mut rng),
        check_adadelta(),
    ]
}
