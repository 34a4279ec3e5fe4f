//! Command-line front end: config resolution and the `train`, `eval`,
//! `report` and `selftest` commands.
//!
//! Settings are resolved in layers, later layers winning:
//! built-in defaults < config file (`key = value` lines) < `NDT_DATA_DIR`
//! (data root only) < command-line flags. Unknown keys are rejected.
//!
//! Exit codes: 0 success, 2 config or model error, 3 data error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{load_cifar, load_mnist, CifarVariant, Dataset};
use crate::error::Error;
use crate::gate::RightBranchSign;
use crate::model_io;
use crate::scalar::Scalar;
use crate::tree::{accuracy, leaf_statistics, train, LeafStats, NdtModel, NetDims, SplitInit, TrainConfig};

pub const DATA_DIR_ENV: &str = "NDT_DATA_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// A command failure, carrying its exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Selftest(usize),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Data(_) => EXIT_DATA,
            Failure::Selftest(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Data(m) => write!(f, "data error: {m}"),
            Failure::Selftest(n) => write!(f, "{n} selftest check(s) failed"),
        }
    }
}

fn config_err(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn data_err(e: impl ToString) -> Failure {
    Failure::Data(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    Mnist,
    Cifar10,
    Cifar100,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::Cifar10 => "cifar10",
            DatasetName::Cifar100 => "cifar100",
        }
    }

    fn parse(s: &str) -> Result<Self, String> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "cifar10" => Ok(DatasetName::Cifar10),
            "cifar100" => Ok(DatasetName::Cifar100),
            _ => Err(format!("unknown dataset `{s}` (mnist, cifar10, cifar100)")),
        }
    }

    pub fn dims(self) -> NetDims {
        match self {
            DatasetName::Mnist => NetDims::mnist(),
            DatasetName::Cifar10 => NetDims::cifar(10),
            DatasetName::Cifar100 => NetDims::cifar(100),
        }
    }

    /// Depth of the reference setup for this dataset.
    pub fn default_depth(self) -> usize {
        match self {
            DatasetName::Mnist => 2,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Machine,
}

/// Fully resolved run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub dataset: DatasetName,
    /// Root holding `mnist/`, `cifar10/` and `cifar100/`.
    pub data_dir: PathBuf,
    pub out: PathBuf,
    pub log: PathBuf,
    pub format: ReportFormat,
    pub val_size: usize,
    pub condition_hidden: Vec<usize>,
    pub target_hidden: Vec<usize>,
    /// Train on only the first N training samples (0 = all).
    pub train_subset: usize,
}

pub const KEYS: &[&str] = &[
    "dataset",
    "data_dir",
    "out",
    "log",
    "format",
    "val_size",
    "train_subset",
    "condition_hidden",
    "target_hidden",
    "depth",
    "alpha",
    "lambda_ig",
    "rho",
    "epsilon",
    "batch_size",
    "max_rounds",
    "patience",
    "seed",
    "gate_downstream_grad",
    "right_branch_sign",
    "split_init",
    "precision",
];

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N, String> {
    v.trim()
        .parse()
        .map_err(|_| format!("`{key}`: cannot parse `{v}`"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(format!("`{key}`: expected true/false, got `{v}`")),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, String> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn join_list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Raw `key -> value` settings, before defaults are filled in.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> Result<(), String> {
        if !KEYS.contains(&key) {
            return Err(format!("unknown config key `{key}`"));
        }
        self.0.insert(key.to_owned(), value.into());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_file_text(text: &str) -> Result<Self, String> {
        let mut s = Settings::default();
        s.merge_text(text)?;
        Ok(s)
    }

    pub fn merge_text(&mut self, text: &str) -> Result<(), String> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", n + 1))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| format!("line {}: {e}", n + 1))?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Settings) {
        for (k, v) in &other.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn resolve(&self) -> Result<RunConfig, String> {
        let dataset = match self.get("dataset") {
            Some(v) => DatasetName::parse(v)?,
            None => DatasetName::Mnist,
        };
        let dims = dataset.dims();
        let mut t = TrainConfig {
            depth: dataset.default_depth(),
            ..TrainConfig::default()
        };
        for (k, v) in &self.0 {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "depth" => t.depth = parse_num(k, v)?,
                "alpha" => t.alpha = parse_num(k, v)?,
                "lambda_ig" => t.lambda_ig = parse_num(k, v)?,
                "rho" => t.rho = parse_num(k, v)?,
                "epsilon" => t.epsilon = parse_num(k, v)?,
                "batch_size" => t.batch_size = parse_num(k, v)?,
                "max_rounds" => t.max_rounds = parse_num(k, v)?,
                "patience" => t.patience = parse_num(k, v)?,
                "seed" => t.seed = parse_num(k, v)?,
                "gate_downstream_grad" => t.gate_downstream_grad = parse_bool(k, v)?,
                "right_branch_sign" => {
                    t.right_branch_sign = match v {
                        "paper" => RightBranchSign::Same,
                        "negated" => RightBranchSign::Negated,
                        _ => return Err(format!("`{k}`: expected paper or negated, got `{v}`")),
                    }
                }
                "split_init" => {
                    t.split_init = SplitInit::parse(v)
                        .ok_or_else(|| format!("`{k}`: expected zero or median, got `{v}`"))?
                }
                "precision" => t.precision = parse_num(k, v)?,
                _ => {}
            }
        }
        t.validate().map_err(|e| e.to_string())?;
        let out = PathBuf::from(self.get("out").unwrap_or("model.ndt"));
        let log = match self.get("log") {
            Some(l) => PathBuf::from(l),
            None => out.with_extension("log.jsonl"),
        };
        let format = match self.get("format").unwrap_or("table") {
            "table" => ReportFormat::Table,
            "machine" => ReportFormat::Machine,
            other => return Err(format!("`format`: expected table or machine, got `{other}`")),
        };
        let list_or = |key: &str, default: Vec<usize>| -> Result<Vec<usize>, String> {
            match self.get(key) {
                Some(v) => {
                    let l = parse_list(key, v)?;
                    if l.contains(&0) {
                        return Err(format!("`{key}`: layer widths must be positive"));
                    }
                    Ok(l)
                }
                None => Ok(default),
            }
        };
        Ok(RunConfig {
            train: t,
            dataset,
            data_dir: PathBuf::from(self.get("data_dir").unwrap_or("data")),
            out,
            log,
            format,
            val_size: match self.get("val_size") {
                Some(v) => parse_num("val_size", v)?,
                None => 5000,
            },
            condition_hidden: list_or("condition_hidden", dims.condition_hidden)?,
            target_hidden: list_or("target_hidden", dims.target_hidden)?,
            train_subset: match self.get("train_subset") {
                Some(v) => parse_num("train_subset", v)?,
                None => 0,
            },
        })
    }
}

impl RunConfig {
    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let t = &self.train;
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "dataset" => self.dataset.as_str().to_owned(),
                    "data_dir" => self.data_dir.display().to_string(),
                    "out" => self.out.display().to_string(),
                    "log" => self.log.display().to_string(),
                    "format" => match self.format {
                        ReportFormat::Table => "table".into(),
                        ReportFormat::Machine => "machine".into(),
                    },
                    "val_size" => self.val_size.to_string(),
                    "train_subset" => self.train_subset.to_string(),
                    "condition_hidden" => join_list(&self.condition_hidden),
                    "target_hidden" => join_list(&self.target_hidden),
                    "depth" => t.depth.to_string(),
                    "alpha" => t.alpha.to_string(),
                    "lambda_ig" => t.lambda_ig.to_string(),
                    "rho" => t.rho.to_string(),
                    "epsilon" => t.epsilon.to_string(),
                    "batch_size" => t.batch_size.to_string(),
                    "max_rounds" => t.max_rounds.to_string(),
                    "patience" => t.patience.to_string(),
                    "seed" => t.seed.to_string(),
                    "gate_downstream_grad" => t.gate_downstream_grad.to_string(),
                    "right_branch_sign" => match t.right_branch_sign {
                        RightBranchSign::Same => "paper".into(),
                        RightBranchSign::Negated => "negated".into(),
                    },
                    "split_init" => t.split_init.as_str().into(),
                    "precision" => t.precision.to_string(),
                    _ => unreachable!("key list is exhaustive"),
                };
                (k, v)
            })
            .collect()
    }

    /// The resolved config as `key = value` text, parseable as a config file.
    pub fn to_config_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .fold(String::new(), |mut s, (k, v)| {
                let _ = writeln!(s, "{k} = {v}");
                s
            })
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.data_dir.join(self.dataset.as_str())
    }

    pub fn net_dims(&self, input_dim: usize, num_classes: usize) -> NetDims {
        NetDims {
            input_dim,
            num_classes,
            feature_hidden: vec![],
            condition_hidden: self.condition_hidden.clone(),
            target_hidden: self.target_hidden.clone(),
        }
    }

    /// Rebuilds a config from the first line of a training log.
    pub fn from_log_header(line: &str) -> Result<Self, String> {
        let header: LogHeader = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let mut s = Settings::default();
        for (k, v) in header.config {
            s.set(&k, v)?;
        }
        s.resolve()
    }
}

/// First line of every training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub config: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub samples: usize,
    /// Percent.
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub samples: usize,
    /// Percent; null for classes absent from the data.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafReport {
    pub dataset: String,
    pub depth: usize,
    pub counts: Vec<Vec<u64>>,
    pub modal_leaf: Vec<Option<usize>>,
    /// Percent.
    pub purity: f64,
}

impl LeafReport {
    pub fn new(dataset: &str, depth: usize, stats: &LeafStats) -> Self {
        Self {
            dataset: dataset.to_owned(),
            depth,
            counts: stats.counts.clone(),
            modal_leaf: stats.modal_leaf(),
            purity: stats.purity() * 100.0,
        }
    }
}

/// Leaf names A, B, ..., Z, AA, AB, ...
pub fn leaf_name(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

pub fn format_eval_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "dataset: {} ({} samples)", r.dataset, r.samples);
    let _ = writeln!(s, "accuracy: {:.2}", r.accuracy);
    let _ = writeln!(s, "{:>5}  {:>7}  {:>8}", "class", "samples", "accuracy");
    for c in &r.per_class {
        let acc = c.accuracy.map_or("-".to_owned(), |a| format!("{a:.2}"));
        let _ = writeln!(s, "{:>5}  {:>7}  {:>8}", c.class, c.samples, acc);
    }
    s
}

pub fn format_leaf_table(r: &LeafReport) -> String {
    let mut s = String::new();
    let classes = r.counts.first().map_or(0, Vec::len);
    let _ = writeln!(s, "dataset: {}  depth: {}", r.dataset, r.depth);
    let _ = write!(s, "{:>5}", "leaf");
    for c in 0..classes {
        let _ = write!(s, " {c:>6}");
    }
    let _ = writeln!(s, " {:>7}", "total");
    for (i, row) in r.counts.iter().enumerate() {
        let _ = write!(s, "{:>5}", leaf_name(i));
        for v in row {
            let _ = write!(s, " {v:>6}");
        }
        let _ = writeln!(s, " {:>7}", row.iter().sum::<u64>());
    }
    let _ = write!(s, "{:>5}", "modal");
    for m in &r.modal_leaf {
        let name = m.map_or("X".to_owned(), leaf_name);
        let _ = write!(s, " {name:>6}");
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "purity: {:.2}", r.purity);
    s
}

/// Parses the count matrix and purity back out of [`format_leaf_table`] output.
pub fn parse_leaf_table(text: &str) -> Option<(Vec<Vec<u64>>, f64)> {
    let mut counts = Vec::new();
    let mut purity = None;
    for line in text.lines().skip(2) {
        let mut it = line.split_whitespace();
        let head = it.next()?;
        if head == "purity:" {
            purity = it.next()?.parse().ok();
        } else if head != "modal" {
            let mut row: Vec<u64> = it.map(|v| v.parse().ok()).collect::<Option<_>>()?;
            row.pop(); // total column
            counts.push(row);
        }
    }
    Some((counts, purity?))
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Debug, Parser)]
#[command(name = "ndt", version, about = "Neural decision tree training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it with its epoch log.
    Train(TrainArgs),
    /// Report test accuracy of a saved model.
    Eval(EvalArgs),
    /// Report how test samples of each class spread over the leaves.
    Report(EvalArgs),
    /// Run the built-in numerical property checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Default)]
pub struct CommonArgs {
    /// `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<String>,
    /// Root directory containing one subdirectory per dataset.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// `table` or `machine`.
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda_ig: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_rounds: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub gate_downstream_grad: Option<bool>,
    /// `paper` or `negated`.
    #[arg(long)]
    pub right_branch_sign: Option<String>,
    /// `zero` or `median`.
    #[arg(long)]
    pub split_init: Option<String>,
    /// 32 or 64.
    #[arg(long)]
    pub precision: Option<u32>,
    #[arg(long)]
    pub val_size: Option<usize>,
    #[arg(long)]
    pub train_subset: Option<usize>,
    /// Comma-separated hidden widths of the condition networks.
    #[arg(long)]
    pub condition_hidden: Option<String>,
    /// Comma-separated hidden widths of the target networks.
    #[arg(long)]
    pub target_hidden: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn layered_settings(
    common: &CommonArgs,
    flags: &[(&str, Option<String>)],
    env_data_dir: Option<String>,
) -> Result<Settings, Failure> {
    let mut s = Settings::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        s.merge_text(&text)
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    }
    if let Some(d) = env_data_dir.filter(|d| !d.is_empty()) {
        s.set("data_dir", d).map_err(config_err)?;
    }
    let common_flags = [
        ("dataset", common.dataset.clone()),
        ("data_dir", common.data_dir.as_ref().map(|p| p.display().to_string())),
        ("format", common.format.clone()),
    ];
    for (k, v) in common_flags.iter().chain(flags) {
        if let Some(v) = v {
            s.set(k, v.clone()).map_err(config_err)?;
        }
    }
    Ok(s)
}

impl TrainArgs {
    pub fn settings(&self, env_data_dir: Option<String>) -> Result<Settings, Failure> {
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        let f = |v: Option<String>| v;
        let flags = [
            ("out", p(&self.out)),
            ("log", p(&self.log)),
            ("depth", self.depth.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("lambda_ig", self.lambda_ig.map(|v| v.to_string())),
            ("rho", self.rho.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("batch_size", self.batch_size.map(|v| v.to_string())),
            ("max_rounds", self.max_rounds.map(|v| v.to_string())),
            ("patience", self.patience.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("gate_downstream_grad", self.gate_downstream_grad.map(|v| v.to_string())),
            ("right_branch_sign", f(self.right_branch_sign.clone())),
            ("split_init", f(self.split_init.clone())),
            ("precision", self.precision.map(|v| v.to_string())),
            ("val_size", self.val_size.map(|v| v.to_string())),
            ("train_subset", self.train_subset.map(|v| v.to_string())),
            ("condition_hidden", f(self.condition_hidden.clone())),
            ("target_hidden", f(self.target_hidden.clone())),
        ];
        layered_settings(&self.common, &flags, env_data_dir)
    }
}

impl EvalArgs {
    pub fn settings(&self, env_data_dir: Option<String>) -> Result<Settings, Failure> {
        layered_settings(&self.common, &[], env_data_dir)
    }
}

// ---------------------------------------------------------------------------
// commands

fn load_dataset<T: Scalar>(cfg: &RunConfig) -> Result<(Dataset<T>, Dataset<T>), Failure> {
    let dir = cfg.dataset_dir();
    if !dir.is_dir() {
        return Err(Failure::Data(format!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    let loaded = match cfg.dataset {
        DatasetName::Mnist => load_mnist(&dir),
        DatasetName::Cifar10 => load_cifar(&dir, CifarVariant::C10),
        DatasetName::Cifar100 => load_cifar(&dir, CifarVariant::C100),
    };
    loaded.map_err(data_err)
}

/// Outcome of a finished training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    /// Percent.
    pub best_val_acc: f64,
    /// Percent.
    pub test_acc: f64,
}

pub fn run_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, Failure> {
    match cfg.train.precision {
        32 => train_with::<f32>(cfg, out),
        _ => train_with::<f64>(cfg, out),
    }
}

fn train_with<T: Scalar>(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, Failure> {
    let (full_train, test) = load_dataset::<T>(cfg)?;
    let full_train = if cfg.train_subset > 0 && cfg.train_subset < full_train.len() {
        full_train.subset(&(0..cfg.train_subset).collect::<Vec<_>>())
    } else {
        full_train
    };
    let (train_set, val_set) = full_train
        .split_validation(cfg.val_size, cfg.train.seed)
        .map_err(config_err)?;
    let dims = cfg.net_dims(train_set.dim(), full_train.num_classes);
    let model = NdtModel::<T>::build(cfg.train.depth, dims, cfg.train.seed).map_err(config_err)?;

    let log_file = fs::File::create(&cfg.log)
        .map_err(|e| Failure::Config(format!("{}: {e}", cfg.log.display())))?;
    let mut log = BufWriter::new(log_file);
    let header = LogHeader {
        config: cfg
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
    };
    let io_err = |e: std::io::Error| Failure::Config(format!("{}: {e}", cfg.log.display()));
    writeln!(log, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err)?;
    log.flush().map_err(io_err)?;

    let table = cfg.format == ReportFormat::Table;
    if table {
        let _ = write!(out, "{}", cfg.to_config_text());
        let _ = writeln!(
            out,
            "training {} on {} samples ({} validation), {} parameters",
            cfg.dataset.as_str(),
            train_set.len(),
            val_set.len(),
            model.num_params()
        );
        let _ = writeln!(out, "{:>5}  {:>9}  {:>9}  {:>8}  {:>8}  {:>6}", "epoch", "train_ce", "train_ig", "train%", "val%", "live");
    }
    let mut write_failure = None;
    let outcome = train(model, &train_set, &val_set, &cfg.train, |rec| {
        let line = serde_json::to_string(rec).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            write_failure.get_or_insert(e);
        }
        if table {
            let _ = writeln!(
                out,
                "{:>5}  {:>9.5}  {:>9.5}  {:>8.2}  {:>8.2}  {:>6.3}",
                rec.epoch,
                rec.train_ce,
                rec.train_ig,
                rec.train_acc * 100.0,
                rec.val_acc * 100.0,
                rec.live_grad_fraction
            );
        }
    })
    .map_err(config_err)?;
    if let Some(e) = write_failure {
        return Err(io_err(e));
    }

    model_io::save(&outcome.model, T::BITS, &cfg.out).map_err(config_err)?;
    let test_acc = accuracy(&outcome.model, &test).map_err(config_err)? * 100.0;
    let summary = TrainSummary {
        epochs: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        best_val_acc: outcome.best_val_acc * 100.0,
        test_acc,
    };
    if table {
        let _ = writeln!(
            out,
            "best epoch {} (val {:.2}); test accuracy: {:.2}; model written to {}",
            summary.best_epoch,
            summary.best_val_acc,
            summary.test_acc,
            cfg.out.display()
        );
    } else {
        let _ = writeln!(out, "{}", serde_json::to_string(&summary).expect("summary serializes"));
    }
    Ok(summary)
}

fn load_model_header(path: &Path) -> Result<u32, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    if bytes.len() < 8 || &bytes[..4] != model_io::MAGIC {
        return Err(Failure::Config(format!(
            "{}: not an NDT1 model file (bad magic)",
            path.display()
        )));
    }
    Ok(u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]))
}

fn model_for<T: Scalar>(path: &Path, test: &Dataset<T>) -> Result<NdtModel<T>, Failure> {
    let (model, _) = model_io::load::<T>(path).map_err(config_err)?;
    if model.input_dim() != test.dim() || model.num_classes() < test.num_classes {
        return Err(Failure::Config(format!(
            "{}: model expects {} inputs / {} classes, dataset has {} / {}",
            path.display(),
            model.input_dim(),
            model.num_classes(),
            test.dim(),
            test.num_classes
        )));
    }
    Ok(model)
}

pub fn run_eval(cfg: &RunConfig, model_path: &Path) -> Result<EvalReport, Failure> {
    match load_model_header(model_path)? {
        32 => eval_with::<f32>(cfg, model_path),
        _ => eval_with::<f64>(cfg, model_path),
    }
}

fn eval_with<T: Scalar>(cfg: &RunConfig, model_path: &Path) -> Result<EvalReport, Failure> {
    // validate the model file before touching data
    model_io::load::<T>(model_path).map_err(config_err)?;
    let (_, test) = load_dataset::<T>(cfg)?;
    let model = model_for(model_path, &test)?;
    let pred = model.predict(&test.features).map_err(config_err)?;
    let mut hits = vec![0usize; test.num_classes];
    let mut seen = vec![0usize; test.num_classes];
    for (&p, &y) in pred.iter().zip(&test.labels) {
        seen[y] += 1;
        if p == y {
            hits[y] += 1;
        }
    }
    let total_hits: usize = hits.iter().sum();
    Ok(EvalReport {
        dataset: test.name.clone(),
        samples: test.len(),
        accuracy: if test.is_empty() { 0.0 } else { total_hits as f64 * 100.0 / test.len() as f64 },
        per_class: (0..test.num_classes)
            .map(|c| ClassAccuracy {
                class: c,
                samples: seen[c],
                accuracy: (seen[c] > 0).then(|| hits[c] as f64 * 100.0 / seen[c] as f64),
            })
            .collect(),
    })
}

pub fn run_report(cfg: &RunConfig, model_path: &Path) -> Result<LeafReport, Failure> {
    match load_model_header(model_path)? {
        32 => report_with::<f32>(cfg, model_path),
        _ => report_with::<f64>(cfg, model_path),
    }
}

fn report_with<T: Scalar>(cfg: &RunConfig, model_path: &Path) -> Result<LeafReport, Failure> {
    model_io::load::<T>(model_path).map_err(config_err)?;
    let (_, test) = load_dataset::<T>(cfg)?;
    let model = model_for(model_path, &test)?;
    let stats = leaf_statistics(&model, &test).map_err(config_err)?;
    Ok(LeafReport::new(&test.name, model.depth(), &stats))
}

/// Runs a parsed command line, writing user output to `out`.
pub fn run(cli: Cli, env_data_dir: Option<String>, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Train(args) => {
            let cfg = args.settings(env_data_dir)?.resolve().map_err(Failure::Config)?;
            run_train(&cfg, out).map(|_| ())
        }
        Command::Eval(args) => {
            let cfg = args.settings(env_data_dir)?.resolve().map_err(Failure::Config)?;
            let report = run_eval(&cfg, &args.model)?;
            let text = match cfg.format {
                ReportFormat::Table => format_eval_table(&report),
                ReportFormat::Machine => {
                    serde_json::to_string(&report).expect("report serializes") + "\n"
                }
            };
            let _ = write!(out, "{text}");
            Ok(())
        }
        Command::Report(args) => {
            let cfg = args.settings(env_data_dir)?.resolve().map_err(Failure::Config)?;
            let report = run_report(&cfg, &args.model)?;
            let text = match cfg.format {
                ReportFormat::Table => format_leaf_table(&report),
                ReportFormat::Machine => {
                    serde_json::to_string(&report).expect("report serializes") + "\n"
                }
            };
            let _ = write!(out, "{text}");
            Ok(())
        }
        Command::Selftest(args) => {
            let results = crate::selftest::run_all(args.seed);
            let mut failed = 0;
            for r in &results {
                let _ = writeln!(
                    out,
                    "{} {:<40} {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                Err(Failure::Selftest(failed))
            } else {
                Ok(())
            }
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Data { .. } | Error::Format { .. } => Failure::Data(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}
