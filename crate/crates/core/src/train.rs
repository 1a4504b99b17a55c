//! SGD training loop, evaluation and the variant comparison probe.

use std::path::Path;

use crate::autodiff::Graph;
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::data::{
    batch_iter, epoch_rng, load_cifar_pair, synthetic_pair, BatchMode, CifarVariant, Dataset, DatasetKind,
};
use crate::error::{Error, Result};
use crate::metrics::{MetricsLog, MetricsRow};
use crate::nn::{argmax, Mode};
use crate::params::{ParamKind, ParamStore};
use crate::resnet::{Model, Variant};
use crate::tensor::{Scalar, Tensor};

/// Separates the augmentation stream from the shuffling stream.
const AUGMENT_STREAM_SALT: u64 = 0xA5A5_5A5A_0F0F_F0F0;

/// SGD with momentum; weight decay applies to [`ParamKind::Weight`] only.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    /// `v = momentum * v + g (+ wd * w)`, `w -= lr * lr_scale * v`.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let mu = T::cast(self.momentum);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let Some(grad) = p.grad().cloned() else { continue };
            let wd = if p.kind == ParamKind::Weight {
                T::cast(self.weight_decay)
            } else {
                T::zero()
            };
            let step = T::cast(lr * p.lr_scale);
            let v = self.velocity[id.index()].get_or_insert_with(|| Tensor::zeros(grad.shape().to_vec()));
            let w = p.value_mut();
            for ((vi, wi), &gi) in v.data_mut().iter_mut().zip(w.data_mut()).zip(grad.data()) {
                *vi = mu * *vi + gi + wd * *wi;
                *wi -= step * *vi;
            }
            if !w.all_finite() {
                return Err(Error::NonFinite(format!("parameter {} after update", p.name)));
            }
        }
        Ok(())
    }
}

/// Loads the train and validation sets a configuration asks for and checks
/// them against the model geometry.
pub fn load_datasets(config: &TrainConfig) -> Result<(Dataset, Dataset)> {
    let m = &config.model;
    let (mut train, mut val) = match config.dataset {
        DatasetKind::Synthetic => synthetic_pair(
            config.seed,
            config.synthetic_train,
            config.synthetic_val,
            m.num_classes,
            m.input_size,
        )?,
        kind => {
            let dir = config
                .data_dir
                .as_ref()
                .ok_or_else(|| Error::config("data_dir", "required for CIFAR datasets"))?;
            let variant = if kind == DatasetKind::Cifar10 {
                CifarVariant::C10
            } else {
                CifarVariant::C100
            };
            load_cifar_pair(dir, variant)?
        }
    };
    if config.train_subset > 0 {
        train = train.head(config.train_subset);
    }
    if config.val_subset > 0 {
        val = val.head(config.val_subset);
    }
    check_compatible(config, &train)?;
    Ok((train, val))
}

fn check_compatible(config: &TrainConfig, data: &Dataset) -> Result<()> {
    let m = &config.model;
    if data.class_count() != m.num_classes {
        return Err(Error::config(
            "num_classes",
            format!(
                "model has {} classes, dataset has {}",
                m.num_classes,
                data.class_count()
            ),
        ));
    }
    if data.side() != m.input_size || data.channels() != m.in_channels {
        return Err(Error::config(
            "input_size",
            format!(
                "model expects {}x{}x{}, dataset has {}x{}x{}",
                m.in_channels,
                m.input_size,
                m.input_size,
                data.channels(),
                data.side(),
                data.side()
            ),
        ));
    }
    Ok(())
}

/// Mean loss and exact categorical accuracy in eval mode, in dataset order.
pub fn evaluate_model<T: Scalar>(model: &mut Model<T>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    if data.class_count() != model.config().num_classes {
        return Err(Error::config(
            "num_classes",
            format!(
                "model has {} classes, dataset has {}",
                model.config().num_classes,
                data.class_count()
            ),
        ));
    }
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let (mut loss_sum, mut correct) = (0.0f64, 0usize);
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, labels) = data.batch::<T>(chunk, None);
        let g = Graph::new();
        let (loss, logits) = model.loss(&g, x, &labels, Mode::Eval)?;
        loss_sum += g.value(loss).item()?.as_f64() * chunk.len() as f64;
        let logits = g.value(logits);
        let k = logits.shape()[1];
        correct += logits
            .data()
            .chunks(k)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
    }
    Ok((loss_sum / data.len() as f64, correct as f64 / data.len() as f64))
}

/// Loads a checkpoint and evaluates it on `data`.
pub fn evaluate_checkpoint<T: Scalar>(ck: &Checkpoint<T>, data: &Dataset, batch_size: usize) -> Result<(f64, f64)> {
    let (mut model, _) = ck.to_model()?;
    evaluate_model(&mut model, data, batch_size)
}

/// Run description stored in the metrics comment line.
pub fn run_comment(config: &TrainConfig, train: &Dataset) -> String {
    format!("{}; standardization={}", config.to_line(), train.stats())
}

#[derive(Debug)]
pub struct TrainOutcome<T: Scalar> {
    pub model: Model<T>,
    pub log: MetricsLog,
    pub best_val_acc: f64,
    pub best_epoch: usize,
}

/// Trains the configured model. With `out_dir`, writes `metrics.csv` and
/// `final.ckpt` at the end and `best.ckpt` whenever validation accuracy
/// improves. `on_epoch` sees the log after each epoch.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&MetricsLog),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    check_compatible(config, train_set)?;
    check_compatible(config, val_set)?;
    if train_set.len() < config.batch_size {
        return Err(Error::config(
            "batch_size",
            format!("{} exceeds the {} training images", config.batch_size, train_set.len()),
        ));
    }
    let mut model = Model::<T>::build(&config.model_config())?;
    let layers: Vec<String> = model.stride_values().into_iter().map(|(n, _, _)| n).collect();
    let mut log = MetricsLog::new(run_comment(config, train_set), &layers);
    let mut sgd = Sgd::<T>::new(config.momentum, config.weight_decay);
    let schedule = config.schedule();
    let (mut best_val_acc, mut best_epoch) = (f64::NEG_INFINITY, 0);

    for epoch in 0..config.epochs {
        let lr = crate::config::lr_at(&schedule, epoch);
        let batches = batch_iter(
            train_set.len(),
            config.batch_size,
            config.seed,
            epoch as u64,
            BatchMode::Train,
        )?;
        let mut aug = config
            .augment
            .then(|| epoch_rng(config.seed ^ AUGMENT_STREAM_SALT, epoch as u64));
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for idx in &batches {
            let (x, labels) = train_set.batch::<T>(idx, aug.as_mut());
            model.params_mut().zero_grads();
            let g = Graph::new();
            let (loss, logits) = model.loss(&g, x, &labels, Mode::Train)?;
            g.backward(loss, model.params_mut())?;
            sgd.step(model.params_mut(), lr)?;
            model.project_strides();

            loss_sum += g.value(loss).item()?.as_f64() * idx.len() as f64;
            let logits = g.value(logits);
            let k = logits.shape()[1];
            correct += logits
                .data()
                .chunks(k)
                .zip(&labels)
                .filter(|(row, &l)| argmax(row) == l)
                .count();
            seen += idx.len();
        }
        let (val_loss, val_acc) = evaluate_model(&mut model, val_set, config.eval_batch_size)?;
        log.rows.push(MetricsRow {
            epoch,
            lr,
            train_loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
            val_loss,
            val_acc,
            strides: model.stride_values().iter().flat_map(|&(_, h, w)| [h, w]).collect(),
        });
        on_epoch(&log);
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best_epoch = epoch;
            if let Some(dir) = out_dir {
                Checkpoint::from_model(&model, config, log.to_csv_string()).save(&dir.join("best.ckpt"))?;
            }
        }
    }
    if let Some(dir) = out_dir {
        log.save(&dir.join("metrics.csv"))?;
        Checkpoint::from_model(&model, config, log.to_csv_string()).save(&dir.join("final.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        log,
        best_val_acc,
        best_epoch,
    })
}

/// Final validation accuracy of one probe run.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRun {
    pub variant: Variant,
    pub seed: u64,
    pub val_acc: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub runs: Vec<ProbeRun>,
}

impl ProbeReport {
    pub fn mean_val_acc(&self, variant: Variant) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.val_acc)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Variants by decreasing mean accuracy; ties keep the input order.
    pub fn ordering(&self) -> Vec<(Variant, f64)> {
        let mut v: Vec<(Variant, f64)> = Variant::ALL
            .iter()
            .filter_map(|&var| self.mean_val_acc(var).map(|m| (var, m)))
            .collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1));
        v
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for run in &self.runs {
            s += &format!(
                "{:<18} seed {:<4} val_acc {:.4} val_loss {:.4}\n",
                run.variant.as_str(),
                run.seed,
                run.val_acc,
                run.val_loss
            );
        }
        for (var, m) in self.ordering() {
            s += &format!("mean {:<18} {:.4}\n", var.as_str(), m);
        }
        let order: Vec<&str> = self.ordering().iter().map(|(v, _)| v.as_str()).collect();
        s += &format!("ordering: {}\n", order.join(" > "));
        s
    }
}

/// Trains every variant on the same data with each seed and reports the
/// final validation accuracy of each run.
pub fn variant_probe<T: Scalar>(
    base: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    seeds: &[u64],
    on_run: &mut dyn FnMut(&ProbeRun),
) -> Result<ProbeReport> {
    let mut runs = Vec::new();
    for &variant in &Variant::ALL {
        for &seed in seeds {
            let mut config = base.clone();
            config.model.variant = variant;
            config.seed = seed;
            let out = train::<T>(&config, train_set, val_set, None, &mut |_| {})?;
            let last = out.log.rows.last().expect("at least one epoch");
            let run = ProbeRun {
                variant,
                seed,
                val_acc: last.val_acc,
                val_loss: last.val_loss,
            };
            on_run(&run);
            runs.push(run);
        }
    }
    Ok(ProbeReport { runs })
}
