use serde::{Deserialize, Serialize};

use super::{GradConfig, NdtModel};
use crate::data::{batch_iter, Dataset};
use crate::error::{Error, Result};
use crate::gate::{RightBranchSign, SurrogateConfig};
use crate::optim::{AdaDelta, AdaDeltaState};
use crate::scalar::Scalar;

/// Every training knob. Defaults follow the MNIST depth-2 setup.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lambda_ig: f64,
    pub depth: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_rounds: usize,
    pub patience: usize,
    pub seed: u64,
    pub gate_downstream_grad: bool,
    pub right_branch_sign: RightBranchSign,
    pub split_init: SplitInit,
    pub precision: u32,
}

/// Condition-network output bias before the first epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitInit {
    /// Bias stays at its initial zero.
    #[default]
    Zero,
    /// Bias shifted so each node splits the training rows it receives at
    /// their median pre-activation, root first.
    Median,
}

impl SplitInit {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitInit::Zero => "zero",
            SplitInit::Median => "median",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "zero" => Some(SplitInit::Zero),
            "median" => Some(SplitInit::Median),
            _ => None,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 1000.0,
            lambda_ig: 1.0,
            depth: 2,
            rho: 0.6,
            epsilon: 1e-6,
            batch_size: 128,
            max_rounds: 1000,
            patience: 20,
            seed: 0,
            gate_downstream_grad: true,
            right_branch_sign: RightBranchSign::Same,
            split_init: SplitInit::Zero,
            precision: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_owned()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.lambda_ig >= 0.0 && self.lambda_ig.is_finite()) {
            return bad("lambda_ig must be >= 0");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.precision != 32 && self.precision != 64 {
            return bad("precision must be 32 or 64");
        }
        Ok(())
    }

    pub fn grad_config<T: Scalar>(&self) -> Result<GradConfig<T>> {
        Ok(GradConfig {
            surrogate: SurrogateConfig::new(T::lit(self.alpha))?,
            lambda_ig: T::lit(self.lambda_ig),
            gate_downstream_grad: self.gate_downstream_grad,
            right_branch_sign: self.right_branch_sign,
        })
    }

    fn epoch_seed(&self, epoch: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(epoch as u64)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sample-weighted mean cross-entropy over the epoch.
    pub train_ce: f64,
    /// Mean over batches of the summed per-node info gain.
    pub train_ig: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Share of node visits with `|cn| < 5 / alpha`.
    pub live_grad_fraction: f64,
    /// Share of samples sent left at each internal node (null if none arrived).
    pub node_left_fraction: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Parameters from the epoch with the best validation accuracy.
    pub model: NdtModel<T>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

pub fn accuracy<T: Scalar>(model: &NdtModel<T>, data: &Dataset<T>) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(&data.features)?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / data.len() as f64)
}

fn check_data<T: Scalar>(model: &NdtModel<T>, data: &Dataset<T>, what: &str) -> Result<()> {
    if data.dim() != model.input_dim() || data.num_classes > model.num_classes() {
        return Err(Error::Config(format!(
            "{what} data ({} features, {} classes) does not fit the model ({} inputs, {} classes)",
            data.dim(),
            data.num_classes,
            model.input_dim(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Mini-batch AdaDelta training with early stopping on validation accuracy.
///
/// Stops after `max_rounds` epochs or once validation accuracy has not
/// improved for `patience` epochs. An empty validation set disables early
/// stopping and the final parameters are returned.
pub fn train<T: Scalar>(
    mut model: NdtModel<T>,
    train_set: &Dataset<T>,
    val_set: &Dataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    check_data(&model, train_set, "training")?;
    check_data(&model, val_set, "validation")?;

    if cfg.split_init == SplitInit::Median {
        model.calibrate_splits(&train_set.features)?;
    }
    let grad_cfg = cfg.grad_config::<T>()?;
    let opt = AdaDelta::new(T::lit(cfg.rho), T::lit(cfg.epsilon))?;
    let mut states: Vec<(AdaDeltaState<T>, AdaDeltaState<T>)> = model
        .layers_mut()
        .into_iter()
        .map(|(_, l)| {
            (
                AdaDeltaState::new(l.weights().shape()),
                AdaDeltaState::new(l.bias().shape()),
            )
        })
        .collect();
    let band = grad_cfg.surrogate.live_band();
    let internal = model.condition_nets().len();

    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.max_rounds {
        let mut ce_sum = 0.0;
        let mut ig_sum = 0.0;
        let mut batches = 0usize;
        let mut hits = 0usize;
        let mut live = 0usize;
        let mut visits = 0usize;
        let mut left = vec![0usize; internal];
        let mut arrived = vec![0usize; internal];

        for batch in batch_iter(train_set, cfg.batch_size, cfg.epoch_seed(epoch), true) {
            let (logits, trace) = model.forward(&batch)?;
            let (parts, dlogits) = model.loss(&logits, &trace, grad_cfg.lambda_ig)?;
            let grads = model.backward(&trace, &dlogits, &grad_cfg)?;

            ce_sum += parts.cross_entropy.as_f64() * batch.len() as f64;
            ig_sum += parts.info_gain_sum().as_f64();
            batches += 1;
            hits += (0..logits.rows())
                .filter(|&i| super::argmax(logits.row(i)) == batch.labels[i])
                .count();
            for (k, nt) in trace.nodes().iter().enumerate() {
                arrived[k] += nt.mask.len();
                left[k] += nt.mask.iter().filter(|&&m| m).count();
                visits += nt.mask.len();
                live += nt.cn.as_slice().iter().filter(|c| c.abs() < band).count();
            }

            for (((name, layer), g), (sw, sb)) in model
                .layers_mut()
                .into_iter()
                .zip(grads.layers())
                .zip(states.iter_mut())
            {
                let (w, b) = layer.params_mut();
                opt.step(sw, w, &g.weights, &format!("{name}.weights"))?;
                opt.step(sb, b, &g.bias, &format!("{name}.bias"))?;
            }
        }

        let val_acc = accuracy(&model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_ce: ce_sum / train_set.len() as f64,
            train_ig: ig_sum / batches.max(1) as f64,
            train_acc: hits as f64 / train_set.len() as f64,
            val_acc,
            live_grad_fraction: if visits == 0 { 0.0 } else { live as f64 / visits as f64 },
            node_left_fraction: left
                .iter()
                .zip(&arrived)
                .map(|(&l, &a)| (a > 0).then(|| l as f64 / a as f64))
                .collect(),
        };
        on_epoch(&record);
        log.push(record);

        if val_set.is_empty() {
            best = model.clone();
            best_epoch = epoch;
            continue;
        }
        if val_acc > best_val {
            best_val = val_acc;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        log,
        best_epoch,
        best_val_acc: if best_val.is_finite() { best_val } else { 0.0 },
    })
}
