//! Experiment configuration as flat `section.key=value` text.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. Keys that are absent keep their defaults, and
//! [`ExperimentConfig::to_text`] writes every key so a snapshot fully
//! specifies a run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::counting::SplitSizes;
use crate::credit::{AlphaSchedule, StrategyConfig, StrategyKind};
use crate::error::{Error, Result};
use crate::nn::{ModelDims, DEFAULT_MAX_LEN};
use crate::optim::OptimizerKind;

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    /// Directory written by `gen-data`; when absent the dataset is generated
    /// in memory from `seed`, `sizes` and `max_input_len`.
    pub dir: Option<PathBuf>,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub max_input_len: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: None,
            seed: 0,
            sizes: SplitSizes::default(),
            max_input_len: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub dims: ModelDims,
    /// Longest response in symbols; EOS is emitted on top of these.
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: ModelDims::default(),
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Teacher-forced pretraining with early stopping on validation loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Iterations between validation checks; 0 means once per epoch.
    pub eval_every: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub clip_norm: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::RmsProp,
            learning_rate: 1e-3,
            batch_size: 64,
            eval_every: 0,
            patience: 3,
            max_epochs: 30,
            clip_norm: 5.0,
        }
    }
}

/// Adversarial fine-tuning hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub d_iterations: usize,
    pub g_iterations: usize,
    pub batch_size: usize,
    pub total_iterations: usize,
    pub d_pretrain_steps: usize,
    pub clip_norm: f64,
    /// Iterations between validation-precision snapshots; 0 disables them.
    pub eval_every: usize,
    /// Iterations between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    /// Validation inputs used by the periodic snapshots; 0 means all.
    pub eval_subset: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerKind::RmsProp,
            learning_rate: 1e-4,
            d_iterations: 5,
            g_iterations: 1,
            batch_size: 64,
            total_iterations: 5000,
            d_pretrain_steps: 1000,
            clip_norm: 5.0,
            eval_every: 500,
            checkpoint_every: 500,
            eval_subset: 0,
        }
    }
}

pub const GRID_LEARNING_RATES: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
pub const GRID_D_ITERATIONS: [usize; 2] = [1, 5];
pub const GRID_BATCH_SIZES: [usize; 2] = [32, 64];

impl TrainingConfig {
    /// Every cell of the optimizer × learning rate × d-iterations × batch
    /// size search space, other fields copied from `self`.
    pub fn grid(&self) -> Vec<TrainingConfig> {
        let mut out = Vec::new();
        for optimizer in OptimizerKind::ALL {
            for learning_rate in GRID_LEARNING_RATES {
                for d_iterations in GRID_D_ITERATIONS {
                    for batch_size in GRID_BATCH_SIZES {
                        out.push(TrainingConfig {
                            optimizer,
                            learning_rate,
                            d_iterations,
                            batch_size,
                            ..*self
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub samples: usize,
    pub epsilon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            epsilon: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub mle: MleConfig,
    pub train: TrainingConfig,
    pub strategy: StrategyConfig,
    pub eval: EvalConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Shared MLE checkpoint; when set, pretraining is skipped.
    pub pretrained: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            mle: MleConfig::default(),
            train: TrainingConfig::default(),
            strategy: StrategyConfig::new(StrategyKind::StepGanW),
            eval: EvalConfig::default(),
            seeds: vec![1],
            output_dir: PathBuf::from("runs"),
            pretrained: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected a boolean, got {other:?}"))),
    }
}

fn parse_optional_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = value
        .split(',')
        .map(|s| parse_value::<u64>("run.seeds", s))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::Config("run.seeds is empty".into()));
    }
    Ok(seeds)
}

fn join<T: Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
            }
        }
        Self::from_entries(entries)
    }

    pub fn from_entries(mut entries: BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        // the strategy kind decides the defaults of the other strategy keys
        if let Some(kind) = entries.remove("strategy.kind") {
            cfg.strategy = StrategyConfig::new(parse_value("strategy.kind", &kind)?);
        }
        let mut alpha_kind: Option<String> = None;
        let mut alpha_offset = 0.0;
        for (key, value) in &entries {
            let k = key.as_str();
            let v = value.as_str();
            match k {
                "data.dir" => cfg.data.dir = parse_optional_path(v),
                "data.seed" => cfg.data.seed = parse_value(k, v)?,
                "data.sizes" => cfg.data.sizes = SplitSizes::parse(v)?,
                "data.max_input_len" => cfg.data.max_input_len = parse_value(k, v)?,
                "model.embed" => cfg.model.dims.embed = parse_value(k, v)?,
                "model.hidden" => cfg.model.dims.hidden = parse_value(k, v)?,
                "model.max_len" => cfg.model.max_len = parse_value(k, v)?,
                "mle.optimizer" => cfg.mle.optimizer = parse_value(k, v)?,
                "mle.learning_rate" => cfg.mle.learning_rate = parse_value(k, v)?,
                "mle.batch_size" => cfg.mle.batch_size = parse_value(k, v)?,
                "mle.eval_every" => cfg.mle.eval_every = parse_value(k, v)?,
                "mle.patience" => cfg.mle.patience = parse_value(k, v)?,
                "mle.max_epochs" => cfg.mle.max_epochs = parse_value(k, v)?,
                "mle.clip_norm" => cfg.mle.clip_norm = parse_value(k, v)?,
                "train.optimizer" => cfg.train.optimizer = parse_value(k, v)?,
                "train.learning_rate" => cfg.train.learning_rate = parse_value(k, v)?,
                "train.d_iterations" => cfg.train.d_iterations = parse_value(k, v)?,
                "train.g_iterations" => cfg.train.g_iterations = parse_value(k, v)?,
                "train.batch_size" => cfg.train.batch_size = parse_value(k, v)?,
                "train.total_iterations" => cfg.train.total_iterations = parse_value(k, v)?,
                "train.d_pretrain_steps" => cfg.train.d_pretrain_steps = parse_value(k, v)?,
                "train.clip_norm" => cfg.train.clip_norm = parse_value(k, v)?,
                "train.eval_every" => cfg.train.eval_every = parse_value(k, v)?,
                "train.checkpoint_every" => cfg.train.checkpoint_every = parse_value(k, v)?,
                "train.eval_subset" => cfg.train.eval_subset = parse_value(k, v)?,
                "strategy.rollouts" => cfg.strategy.rollouts = parse_value(k, v)?,
                "strategy.baseline" => cfg.strategy.baseline = parse_bool(k, v)?,
                "strategy.alpha" => alpha_kind = Some(v.to_string()),
                "strategy.alpha_offset" => alpha_offset = parse_value(k, v)?,
                "eval.samples" => cfg.eval.samples = parse_value(k, v)?,
                "eval.epsilon" => cfg.eval.epsilon = parse_value(k, v)?,
                "run.seeds" => cfg.seeds = parse_seeds(v)?,
                "run.output_dir" => cfg.output_dir = PathBuf::from(v),
                "run.pretrained" => cfg.pretrained = parse_optional_path(v),
                _ => return Err(Error::Config(format!("unknown key {k}"))),
            }
        }
        match alpha_kind.as_deref() {
            None => {
                if let AlphaSchedule::Decaying { offset } = &mut cfg.strategy.alpha {
                    *offset = alpha_offset;
                }
            }
            Some("uniform") => cfg.strategy.alpha = AlphaSchedule::Uniform,
            Some("decaying") => cfg.strategy.alpha = AlphaSchedule::Decaying { offset: alpha_offset },
            Some(other) => return Err(Error::Config(format!("strategy.alpha: unknown schedule {other:?}"))),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("data.max_input_len", self.data.max_input_len),
            ("model.embed", self.model.dims.embed),
            ("model.hidden", self.model.dims.hidden),
            ("model.max_len", self.model.max_len),
            ("mle.batch_size", self.mle.batch_size),
            ("mle.patience", self.mle.patience),
            ("mle.max_epochs", self.mle.max_epochs),
            ("train.d_iterations", self.train.d_iterations),
            ("train.g_iterations", self.train.g_iterations),
            ("train.batch_size", self.train.batch_size),
            ("eval.samples", self.eval.samples),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        let positive_reals = [
            ("mle.learning_rate", self.mle.learning_rate),
            ("mle.clip_norm", self.mle.clip_norm),
            ("train.learning_rate", self.train.learning_rate),
            ("train.clip_norm", self.train.clip_norm),
            ("eval.epsilon", self.eval.epsilon),
        ];
        for (key, v) in positive_reals {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{key} must be positive and finite, got {v}")));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds is empty".into()));
        }
        self.strategy.validate()
    }

    /// Every key in a fixed order; parsing the result gives back `self`.
    pub fn to_text(&self) -> String {
        let (alpha, offset) = match self.strategy.alpha {
            AlphaSchedule::Uniform => ("uniform", 0.0),
            AlphaSchedule::Decaying { offset } => ("decaying", offset),
        };
        let lines: Vec<(&str, String)> = vec![
            ("data.dir", path_text(&self.data.dir)),
            ("data.seed", self.data.seed.to_string()),
            ("data.sizes", self.data.sizes.to_string()),
            ("data.max_input_len", self.data.max_input_len.to_string()),
            ("model.embed", self.model.dims.embed.to_string()),
            ("model.hidden", self.model.dims.hidden.to_string()),
            ("model.max_len", self.model.max_len.to_string()),
            ("mle.optimizer", self.mle.optimizer.to_string()),
            ("mle.learning_rate", self.mle.learning_rate.to_string()),
            ("mle.batch_size", self.mle.batch_size.to_string()),
            ("mle.eval_every", self.mle.eval_every.to_string()),
            ("mle.patience", self.mle.patience.to_string()),
            ("mle.max_epochs", self.mle.max_epochs.to_string()),
            ("mle.clip_norm", self.mle.clip_norm.to_string()),
            ("train.optimizer", self.train.optimizer.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.d_iterations", self.train.d_iterations.to_string()),
            ("train.g_iterations", self.train.g_iterations.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.total_iterations", self.train.total_iterations.to_string()),
            ("train.d_pretrain_steps", self.train.d_pretrain_steps.to_string()),
            ("train.clip_norm", self.train.clip_norm.to_string()),
            ("train.eval_every", self.train.eval_every.to_string()),
            ("train.checkpoint_every", self.train.checkpoint_every.to_string()),
            ("train.eval_subset", self.train.eval_subset.to_string()),
            ("strategy.kind", self.strategy.kind.to_string()),
            ("strategy.rollouts", self.strategy.rollouts.to_string()),
            ("strategy.alpha", alpha.to_string()),
            ("strategy.alpha_offset", offset.to_string()),
            ("strategy.baseline", self.strategy.baseline.to_string()),
            ("eval.samples", self.eval.samples.to_string()),
            ("eval.epsilon", self.eval.epsilon.to_string()),
            ("run.seeds", join(&self.seeds)),
            ("run.output_dir", self.output_dir.display().to_string()),
            ("run.pretrained", path_text(&self.pretrained)),
        ];
        lines.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
