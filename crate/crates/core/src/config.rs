//! Training configuration and its `key = value` text form.
//!
//! One assignment per line, `#` starts a comment. Lists are comma
//! separated; the learning-rate schedule is a list of `epoch:lr` pairs.
//! Unset keys keep their defaults.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::resnet::{ModelConfig, Variant};
use crate::tensor::DType;

/// Base learning rates, switched at equal fractions of the run.
pub const DEFAULT_RATES: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    /// `(first epoch, lr)` pairs; `None` spreads [`DEFAULT_RATES`] over equal
    /// quarters of `epochs`.
    pub lr_schedule: Option<Vec<(usize, f64)>>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub synthetic_train: usize,
    pub synthetic_val: usize,
    /// Keep only the first `n` records of each split (0 keeps all).
    pub train_subset: usize,
    pub val_subset: usize,
    pub augment: bool,
    pub precision: DType,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::resnet18(Variant::HybridSpectral, 10),
            epochs: 200,
            batch_size: 128,
            eval_batch_size: 256,
            lr_schedule: None,
            momentum: 0.9,
            weight_decay: 5e-4,
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            synthetic_train: 512,
            synthetic_val: 128,
            train_subset: 0,
            val_subset: 0,
            augment: false,
            precision: DType::F32,
            seed: 0,
        }
    }
}

/// Equal-quarter schedule for `epochs`; starts that collide keep the
/// earlier rate.
pub fn default_schedule(epochs: usize) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, &lr) in DEFAULT_RATES.iter().enumerate() {
        let start = (i as f64 * epochs as f64 / DEFAULT_RATES.len() as f64).round() as usize;
        if out.last().is_none_or(|&(s, _)| start > s) {
            out.push((start, lr));
        }
    }
    out
}

/// Learning rate of `epoch` under `schedule`.
pub fn lr_at(schedule: &[(usize, f64)], epoch: usize) -> f64 {
    schedule
        .iter()
        .take_while(|&&(start, _)| start <= epoch)
        .last()
        .map_or(schedule[0].1, |&(_, lr)| lr)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", v.trim())))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::config(key, format!("expected a boolean, got `{other}`"))),
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Desk-scale setup on the synthetic dataset with the two-stage model.
    pub fn desk(variant: Variant, seed: u64) -> Self {
        TrainConfig {
            model: ModelConfig::tiny(variant, 10, 16),
            epochs: 10,
            batch_size: 64,
            lr_schedule: Some(vec![(0, 0.1), (3, 0.03), (6, 0.01)]),
            dataset: DatasetKind::Synthetic,
            seed,
            ..TrainConfig::default()
        }
    }

    /// Model description with the run seed applied.
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn schedule(&self) -> Vec<(usize, f64)> {
        self.lr_schedule
            .clone()
            .unwrap_or_else(|| default_schedule(self.epochs))
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        lr_at(&self.schedule(), epoch)
    }

    /// Sets a field from its textual key and value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        match key {
            "variant" => m.variant = v.parse()?,
            "stride_inits" => m.stride_inits = parse_list(key, v)?,
            "smoothness" => m.smoothness = parse_num(key, v)?,
            "num_classes" => m.num_classes = parse_num(key, v)?,
            "spectral_pool_ratio" => m.spectral_pool_ratio = parse_num(key, v)?,
            "second_stride_init" => m.second_stride_init = parse_num(key, v)?,
            "stage_channels" => m.stage_channels = parse_list(key, v)?,
            "blocks_per_stage" => m.blocks_per_stage = parse_num(key, v)?,
            "in_channels" => m.in_channels = parse_num(key, v)?,
            "input_size" => m.input_size = parse_num(key, v)?,
            "stride_lr_scale" => m.stride_lr_scale = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "eval_batch_size" => self.eval_batch_size = parse_num(key, v)?,
            "lr_schedule" => {
                self.lr_schedule = if v == "default" {
                    None
                } else {
                    let pairs = v
                        .split(',')
                        .map(|p| {
                            let (e, lr) = p
                                .split_once(':')
                                .ok_or_else(|| Error::config(key, format!("expected epoch:lr, got `{}`", p.trim())))?;
                            Ok((parse_num(key, e)?, parse_num(key, lr)?))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(pairs)
                }
            }
            "momentum" => self.momentum = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "dataset" => self.dataset = v.parse()?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "synthetic_train" => self.synthetic_train = parse_num(key, v)?,
            "synthetic_val" => self.synthetic_val = parse_num(key, v)?,
            "train_subset" => self.train_subset = parse_num(key, v)?,
            "val_subset" => self.val_subset = parse_num(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "precision" => self.precision = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected key = value, got `{line}`"),
                )
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// `(key, value)` pairs covering every field, schedule resolved.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let schedule = self
            .schedule()
            .iter()
            .map(|(e, lr)| format!("{e}:{lr}"))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("variant", m.variant.to_string()),
            ("stride_inits", join(&m.stride_inits)),
            ("smoothness", m.smoothness.to_string()),
            ("num_classes", m.num_classes.to_string()),
            ("spectral_pool_ratio", m.spectral_pool_ratio.to_string()),
            ("second_stride_init", m.second_stride_init.to_string()),
            ("stage_channels", join(&m.stage_channels)),
            ("blocks_per_stage", m.blocks_per_stage.to_string()),
            ("in_channels", m.in_channels.to_string()),
            ("input_size", m.input_size.to_string()),
            ("stride_lr_scale", m.stride_lr_scale.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_batch_size", self.eval_batch_size.to_string()),
            ("lr_schedule", schedule),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("dataset", self.dataset.as_str().to_string()),
            (
                "data_dir",
                self.data_dir
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("synthetic_train", self.synthetic_train.to_string()),
            ("synthetic_val", self.synthetic_val.to_string()),
            ("train_subset", self.train_subset.to_string()),
            ("val_subset", self.val_subset.to_string()),
            ("augment", self.augment.to_string()),
            ("precision", self.precision.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    /// Multi-line `key = value` text that [`TrainConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Single-line form used in metrics headers.
    pub fn to_line(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be >= 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::config(
                "batch_size",
                "must be >= 2 (batch norm needs two samples)",
            ));
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config("eval_batch_size", "must be >= 1"));
        }
        let schedule = self.schedule();
        if schedule.is_empty() || schedule[0].0 != 0 {
            return Err(Error::config("lr_schedule", "must start at epoch 0"));
        }
        if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::config("lr_schedule", "epoch starts must be strictly increasing"));
        }
        if schedule.iter().any(|&(_, lr)| !(lr > 0.0 && lr.is_finite())) {
            return Err(Error::config("lr_schedule", "learning rates must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be >= 0"));
        }
        if self.dataset == DatasetKind::Synthetic && self.synthetic_train < self.model.num_classes {
            return Err(Error::config("synthetic_train", "need at least one image per class"));
        }
        if self.dataset == DatasetKind::Synthetic && self.synthetic_val == 0 {
            return Err(Error::config("synthetic_val", "must be >= 1"));
        }
        Ok(())
    }
}
