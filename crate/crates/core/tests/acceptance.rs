//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria 5-8 gate the exit status. The training criteria 1-4 are
//! reported with their measured values but do not affect it.
//!
//! MNIST is looked up in `$NDT_DATA_DIR/mnist`, then `<workspace>/data/mnist`.
//! The CIFAR-100 criterion only runs with `NDT_ACCEPTANCE_LONG=1`.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ndt::data::{load_cifar, load_mnist, CifarVariant, Dataset};
use ndt::gate::{surrogate, surrogate_derivative, RightBranchSign, SurrogateConfig};
use ndt::infogain::{indicator_gradient, relaxed_info_gain_oracle, relaxed_info_gain_split};
use ndt::layer::{Activation, DenseLayer};
use ndt::optim::{AdaDelta, AdaDeltaState};
use ndt::routing::{allocate_batch, allocate_batch_backward, join_batch, sub_batch, Batch, LinkRecord};
use ndt::tree::{accuracy, leaf_statistics, train, EpochRecord, GradConfig, NdtModel, NetDims, TrainConfig};
use ndt::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Unrun(String),
}

#[derive(Default)]
struct Report {
    gate_failed: usize,
    reported_failed: usize,
}

impl Report {
    fn record(&mut self, id: &str, title: &str, v: Verdict) {
        let gating = matches!(id, "5" | "6" | "7" | "8");
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                if gating {
                    self.gate_failed += 1;
                } else {
                    self.reported_failed += 1;
                }
                ("FAIL", d)
            }
            Verdict::Unrun(d) => ("UNRUN", d),
        };
        println!("{tag:<5} criterion {id}: {title} -- {detail}");
    }
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn data_root() -> PathBuf {
    match std::env::var("NDT_DATA_DIR") {
        Ok(d) if !d.is_empty() => PathBuf::from(d),
        _ => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// ---------------------------------------------------------------------------
// MNIST runs (criteria 1-3)

struct MnistRun {
    test_acc: f64,
    best_epoch: usize,
    epochs: usize,
    model: NdtModel<f32>,
    secs: f64,
}

fn mnist_run(depth: usize, train_set: &Dataset<f32>, val: &Dataset<f32>, test: &Dataset<f32>, seed: u64) -> MnistRun {
    let cfg = TrainConfig {
        depth,
        seed,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let model = NdtModel::<f32>::build(depth, NetDims::mnist(), seed).expect("model builds");
    let out = train(model, train_set, val, &cfg, |r: &EpochRecord| {
        eprintln!(
            "  depth {depth} epoch {:>3}: train_ce {:.5} val {:.2}%",
            r.epoch,
            r.train_ce,
            r.val_acc * 100.0
        );
    })
    .expect("training runs");
    MnistRun {
        test_acc: accuracy(&out.model, test).expect("evaluates") * 100.0,
        best_epoch: out.best_epoch,
        epochs: out.log.len(),
        model: out.model,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn mnist_criteria(report: &mut Report) {
    let dir = data_root().join("mnist");
    let loaded = load_mnist::<f32>(&dir);
    let (full, test) = match loaded {
        Ok(d) => d,
        Err(e) => {
            let why = format!("MNIST not available at {} ({e}); see README", dir.display());
            report.record("1", "MNIST depth 2 test accuracy >= 97.0%", Verdict::Unrun(why.clone()));
            report.record("2", "MNIST depth 0 >= 96.0% and depth 2 - depth 0 >= 0.3", Verdict::Unrun(why.clone()));
            report.record("3", "MNIST depth 2 split purity >= 85%, 4x10 matrix of 10000", Verdict::Unrun(why));
            return;
        }
    };
    let seed = 0;
    let (train_set, val) = full.split_validation(5000, seed).expect("split");
    let d2 = mnist_run(2, &train_set, &val, &test, seed);
    let d0 = mnist_run(0, &train_set, &val, &test, seed);

    report.record(
        "1",
        "MNIST depth 2 test accuracy >= 97.0%",
        verdict(
            d2.test_acc >= 97.0,
            format!(
                "{:.2}% (best epoch {} of {}, {:.0}s)",
                d2.test_acc, d2.best_epoch, d2.epochs, d2.secs
            ),
        ),
    );
    let gap = d2.test_acc - d0.test_acc;
    report.record(
        "2",
        "MNIST depth 0 >= 96.0% and depth 2 - depth 0 >= 0.3",
        verdict(
            d0.test_acc >= 96.0 && gap >= 0.3,
            format!(
                "depth 0 {:.2}% (best epoch {} of {}), gap {gap:+.2} points",
                d0.test_acc, d0.best_epoch, d0.epochs
            ),
        ),
    );
    let stats = leaf_statistics(&d2.model, &test).expect("routes");
    let shape_ok = stats.num_leaves() == 4 && stats.num_classes() == 10 && stats.total() == 10000;
    let purity = stats.purity() * 100.0;
    report.record(
        "3",
        "MNIST depth 2 split purity >= 85%, 4x10 matrix of 10000",
        verdict(
            shape_ok && purity >= 85.0,
            format!(
                "purity {purity:.2}%, matrix {}x{} total {}, leaf sizes {:?}",
                stats.num_leaves(),
                stats.num_classes(),
                stats.total(),
                stats.counts.iter().map(|r| r.iter().sum::<u64>()).collect::<Vec<_>>()
            ),
        ),
    );
}

// ---------------------------------------------------------------------------
// CIFAR-100 (criterion 4, long)

fn cifar_criterion(report: &mut Report) {
    let title = "CIFAR-100 depth 4 test error <= 88% and >= 2 points better than depth 0";
    if std::env::var("NDT_ACCEPTANCE_LONG").as_deref() != Ok("1") {
        report.record("4", title, Verdict::Unrun("long-running; set NDT_ACCEPTANCE_LONG=1".into()));
        return;
    }
    let dir = data_root().join("cifar100");
    let (full, test) = match load_cifar::<f32>(&dir, CifarVariant::C100) {
        Ok(d) => d,
        Err(e) => {
            report.record("4", title, Verdict::Unrun(format!("CIFAR-100 not available at {} ({e})", dir.display())));
            return;
        }
    };
    let (train_set, val) = full.split_validation(5000, 0).expect("split");
    let run = |depth: usize| {
        let cfg = TrainConfig { depth, ..TrainConfig::default() };
        let model = NdtModel::<f32>::build(depth, NetDims::cifar(100), 0).expect("model builds");
        let out = train(model, &train_set, &val, &cfg, |r: &EpochRecord| {
            eprintln!("  cifar depth {depth} epoch {:>3}: val {:.2}%", r.epoch, r.val_acc * 100.0);
        })
        .expect("training runs");
        100.0 - accuracy(&out.model, &test).expect("evaluates") * 100.0
    };
    let (e4, e0) = (run(4), run(0));
    report.record(
        "4",
        title,
        verdict(e4 <= 88.0 && e0 - e4 >= 2.0, format!("error depth 4 {e4:.2}%, depth 0 {e0:.2}%")),
    );
}

// ---------------------------------------------------------------------------
// Gradient suites (criterion 5)

fn dense_fd_worst(rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-6;
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let (n, fi, fo) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6));
        let act = if inst % 2 == 0 { Activation::Tanh } else { Activation::Identity };
        let layer = DenseLayer::new(random_tensor(rng, &[fi, fo], 1.0), random_tensor(rng, &[fo], 1.0), act).unwrap();
        let x = random_tensor(rng, &[n, fi], 1.0);
        let dy = random_tensor(rng, &[n, fo], 1.0);
        let f = |l: &DenseLayer<f64>, x: &Tensor<f64>| dot(&l.forward(x).unwrap().0, &dy);
        let (_, cache) = layer.forward(&x).unwrap();
        let (dx, dw, db) = layer.backward(&cache, &dy).unwrap();
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            worst = worst.max(rel((f(&layer, &p) - f(&layer, &m)) / (2.0 * h), dx.as_slice()[i]));
        }
        for (which, g) in [(0, &dw), (1, &db)] {
            for i in 0..g.len() {
                let bumped = |d: f64| {
                    let mut l = layer.clone();
                    let (w, b) = l.params_mut();
                    (if which == 0 { w } else { b }).as_mut_slice()[i] += d;
                    f(&l, &x)
                };
                worst = worst.max(rel((bumped(h) - bumped(-h)) / (2.0 * h), g.as_slice()[i]));
            }
        }
    }
    worst
}

fn surrogate_fd_worst(rng: &mut ChaCha8Rng) -> f64 {
    let cfg = SurrogateConfig::new(10.0).unwrap();
    let h = 1e-5;
    (0..1000)
        .map(|_| {
            let x = rng.gen_range(0.2..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let fd = (surrogate(x + h, &cfg) - surrogate(x - h, &cfg)) / (2.0 * h);
            rel(fd, surrogate_derivative(x, &cfg))
        })
        .fold(0.0, f64::max)
}

/// Finite differences of the relaxed objective, lowering each sample's
/// own-side membership from 1.
fn indicator_fd_worst(rng: &mut ChaCha8Rng) -> f64 {
    let h = 1e-8;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..20);
        let c = rng.gen_range(2..6);
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let grad = indicator_gradient::<f64>(&labels, &mask, c).unwrap();
        let left: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let right: Vec<f64> = left.iter().map(|m| 1.0 - m).collect();
        let base = relaxed_info_gain_oracle(&labels, &left, c).unwrap();
        for i in 0..n {
            let (mut l, mut r) = (left.clone(), right.clone());
            if mask[i] {
                l[i] -= h;
            } else {
                r[i] -= h;
            }
            let fd = (base - relaxed_info_gain_split(&labels, &l, &r, c).unwrap()) / h;
            worst = worst.max((fd - grad[i]).abs());
        }
    }
    worst
}

/// Feature and target gradients of a depth-1 model with gating off vs
/// central differences of the total loss, skipping boundary instances.
fn tiny_model_worst() -> (f64, usize) {
    let dims = NetDims {
        input_dim: 4,
        num_classes: 3,
        feature_hidden: vec![5],
        condition_hidden: vec![3],
        target_hidden: vec![4],
    };
    let lambda = 1.0;
    let cfg = GradConfig {
        surrogate: SurrogateConfig::new(1000.0).unwrap(),
        lambda_ig: lambda,
        gate_downstream_grad: false,
        right_branch_sign: RightBranchSign::Same,
    };
    let total = |m: &NdtModel<f64>, b: &Batch<f64>| {
        let (logits, trace) = m.forward(b).unwrap();
        (m.loss(&logits, &trace, lambda).unwrap().0.total, trace.leaf_of().to_vec())
    };
    let mut worst = 0.0f64;
    let mut used = 0;
    for seed in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let model = NdtModel::<f64>::build(1, dims.clone(), seed).unwrap();
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let batch = Batch::new(random_tensor(&mut rng, &[6, 4], 1.0), labels).unwrap();
        let (logits, trace) = model.forward(&batch).unwrap();
        if trace.nodes()[0].cn.as_slice().iter().any(|c| c.abs() < 1e-2) {
            continue;
        }
        let (_, dlogits) = model.loss(&logits, &trace, lambda).unwrap();
        let grads = model.backward(&trace, &dlogits, &cfg).unwrap();
        let route = trace.leaf_of().to_vec();
        let names: Vec<String> = model.clone().layers_mut().into_iter().map(|(n, _)| n).collect();
        for (li, g) in grads.layers().enumerate() {
            if names[li].starts_with("condition") {
                continue;
            }
            for (which, t) in [(0, &g.weights), (1, &g.bias)] {
                for i in 0..t.len() {
                    let eval = |d: f64| {
                        let mut m = model.clone();
                        {
                            let mut layers = m.layers_mut();
                            let (w, b) = layers[li].1.params_mut();
                            (if which == 0 { w } else { b }).as_mut_slice()[i] += d;
                        }
                        total(&m, &batch)
                    };
                    let h = 1e-6;
                    let ((fp, rp), (fm, rm)) = (eval(h), eval(-h));
                    assert!(rp == route && rm == route, "perturbation crossed a routing boundary");
                    let fd = (fp - fm) / (2.0 * h);
                    let an = t.as_slice()[i];
                    worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
                }
            }
        }
        used += 1;
    }
    (worst, used)
}

fn gradient_criterion(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let dense = dense_fd_worst(&mut rng);
    let sur = surrogate_fd_worst(&mut rng);
    let ind = indicator_fd_worst(&mut rng);
    let (tiny, used) = tiny_model_worst();
    let ok = dense <= 1e-5 && sur <= 1e-4 && ind <= 1e-6 && tiny <= 1e-4 && used >= 10;
    report.record(
        "5",
        "gradient suites vs finite differences",
        verdict(
            ok,
            format!(
                "dense {dense:.1e} (<=1e-5), surrogate {sur:.1e} (<=1e-4), indicator {ind:.1e} (<=1e-6), tiny model {tiny:.1e} over {used} instances (<=1e-4)"
            ),
        ),
    );
}

// ---------------------------------------------------------------------------
// Routing suite (criterion 6)

fn routing_criterion(report: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..50);
        let d = rng.gen_range(1..8);
        let x = random_tensor(&mut rng, &[n, d], 1.0);
        let batch = Batch::new(x.clone(), vec![0; n]).unwrap();
        let mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let (l, r, rec) = sub_batch(&batch, &mask).unwrap();
        let back = join_batch(&l.features, &r.features, &rec).unwrap();
        mismatches += usize::from(back.as_slice().iter().zip(x.as_slice()).any(|(a, b)| a.to_bits() != b.to_bits()));
    }
    let mut adjoint = 0.0f64;
    for _ in 0..200 {
        let (src, dst) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let mut links = Vec::new();
        for dd in 0..dst {
            if rng.gen_bool(0.8) {
                links.push((rng.gen_range(0..src), dd));
            }
        }
        let links = LinkRecord::new(links).unwrap();
        let x = random_tensor(&mut rng, &[src, 3], 1.0);
        let g = random_tensor(&mut rng, &[dst, 3], 1.0);
        let lhs = dot(&allocate_batch(&x, &links, dst).unwrap(), &g);
        let rhs = dot(&x, &allocate_batch_backward(&g, &links, src).unwrap());
        adjoint = adjoint.max((lhs - rhs).abs());
    }
    let mut invariance = 0.0f64;
    for depth in 0..4 {
        let dims = NetDims {
            input_dim: 8,
            num_classes: 4,
            feature_hidden: vec![],
            condition_hidden: vec![6],
            target_hidden: vec![7],
        };
        let model = NdtModel::<f64>::build(depth, dims, depth as u64).unwrap();
        let x = random_tensor(&mut rng, &[64, 8], 1.0);
        let all = model.logits(&x).unwrap();
        for i in 0..64 {
            let one = model.logits(&x.select_rows(&[i])).unwrap();
            for (a, b) in one.row(0).iter().zip(all.row(i)) {
                invariance = invariance.max((a - b).abs());
            }
        }
    }
    report.record(
        "6",
        "routing property suite",
        verdict(
            mismatches == 0 && adjoint <= 1e-12 && invariance <= 1e-12,
            format!("{mismatches} of 1000 round trips differ, adjoint gap {adjoint:.1e} (<=1e-12), batch invariance {invariance:.1e} (<=1e-12)"),
        ),
    );
}

// ---------------------------------------------------------------------------
// AdaDelta (criterion 7)

fn adadelta_criterion(report: &mut Report) {
    let opt = AdaDelta::new(0.6f64, 1e-6).unwrap();
    let mut state = AdaDeltaState::new(&[1]);
    let mut p = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
    opt.step(&mut state, &mut p, &Tensor::from_vec(vec![1], vec![1.0]).unwrap(), "w").unwrap();
    let delta = p.as_slice()[0];
    report.record(
        "7",
        "AdaDelta first step = -0.0015811 +- 1e-7",
        verdict((delta + 0.0015811).abs() <= 1e-7, format!("delta {delta:.7}")),
    );
}

// ---------------------------------------------------------------------------
// Determinism (criterion 8)

fn determinism_criterion(report: &mut Report) {
    let dir = data_root().join("mnist");
    let (data, source) = match load_mnist::<f32>(&dir) {
        Ok((train_set, _)) => (train_set.subset(&(0..3000).collect::<Vec<_>>()), "3000 MNIST samples"),
        Err(_) => {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let x: Vec<f64> = (0..3000 * 20).map(|_| rng.gen_range(0.0..1.0)).collect();
            let labels = (0..3000).map(|i| i % 10).collect();
            let ds = Dataset::<f64>::new(Tensor::from_f64(vec![3000, 20], &x).unwrap(), labels, 10, "synthetic").unwrap();
            (ds.cast::<f32>(), "3000 synthetic samples")
        }
    };
    let (train_set, val) = data.split_validation(500, 3).unwrap();
    let dims = NetDims {
        input_dim: data.dim(),
        num_classes: 10,
        feature_hidden: vec![],
        condition_hidden: vec![32],
        target_hidden: vec![32, 16],
    };
    let cfg = TrainConfig {
        depth: 2,
        max_rounds: 3,
        seed: 3,
        ..TrainConfig::default()
    };
    let run = || {
        let model = NdtModel::<f32>::build(2, dims.clone(), 3).unwrap();
        let out = train(model, &train_set, &val, &cfg, |_| {}).unwrap();
        out.log.iter().map(|r| serde_json::to_string(r).unwrap()).collect::<Vec<_>>()
    };
    let (a, b) = (run(), run());
    report.record(
        "8",
        "identical configs give identical epoch logs",
        verdict(a == b && a.len() == 3, format!("{} epochs on {source}, logs {}", a.len(), if a == b { "identical" } else { "differ" })),
    );
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags; only `--list` needs an answer.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut report = Report::default();
    gradient_criterion(&mut report);
    routing_criterion(&mut report);
    adadelta_criterion(&mut report);
    determinism_criterion(&mut report);
    mnist_criteria(&mut report);
    cifar_criterion(&mut report);
    println!(
        "gating criteria failed: {}; training criteria failed: {}",
        report.gate_failed, report.reported_failed
    );
    if report.gate_failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
