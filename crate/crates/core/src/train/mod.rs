//! Mini-batch training with early stopping, plus evaluation protocols.

mod eval;
mod metrics;
mod optim;

use std::time::Instant;

use crate::data::{split, Dataset};
use crate::error::{Error, Result};
use crate::layers::{CellVariant, Mode};
use crate::model::{FusionModel, LossKind, LossParts, ModelConfig, Pooling, SampleInput, Target};
use crate::rng::Rng;

pub use eval::{evaluate, score_dataset, Classifier, EvalMode, EvalReport, EVAL_CHUNK};
pub use metrics::{metrics_csv, summary_json, EpochMetrics, StopReason, TrainSummary, METRICS_HEADER};
pub use optim::Sgd;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub variant: CellVariant,
    pub pooling: Pooling,
    pub loss: LossKind,
    pub dropout_rate: f64,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Share of the training set held out for early stopping when no
    /// validation set is given. 0 monitors the training loss instead.
    pub val_fraction: f64,
    /// Stop as soon as eval-mode training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 300,
            batch_size: 16,
            learning_rate: 0.01,
            momentum: 0.9,
            alpha: 0.2,
            beta: 0.2,
            patience: 20,
            seed: 1,
            variant: CellVariant::default(),
            pooling: Pooling::default(),
            loss: LossKind::default(),
            dropout_rate: 0.5,
            clip_norm: 5.0,
            val_fraction: 0.1,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.epochs_max == 0 || self.batch_size < 2 {
            return bad("epochs_max must be positive and batch_size at least 2");
        }
        if self.patience == 0 || self.patience > self.epochs_max {
            return bad("patience must lie in [1, epochs_max]");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.clip_norm >= 0.0) {
            return bad("clip_norm must be non-negative");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)");
        }
        if let Some(a) = self.target_train_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return bad("target_train_accuracy must lie in [0, 1]");
            }
        }
        Ok(())
    }

    /// Writes the loss, regularization and cell settings into a model config.
    pub fn apply_to(&self, m: &mut ModelConfig) {
        m.alpha = self.alpha;
        m.beta = self.beta;
        m.variant = self.variant;
        m.pooling = self.pooling;
        m.loss = self.loss;
        m.dropout_rate = self.dropout_rate;
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest monitored loss.
    pub model: FusionModel,
    pub history: Vec<EpochMetrics>,
    pub summary: TrainSummary,
}

/// Eval-mode loss and accuracy over a whole dataset.
pub fn eval_loss(model: &FusionModel, data: &Dataset) -> Result<(LossParts, f64)> {
    let out = score_dataset(model, data, EvalMode::AudioVisual)?;
    let targets = data.targets();
    let cfg = model.config();
    let parts = crate::model::combined_loss_with(&out, &targets, cfg.alpha, cfg.beta, cfg.loss)?;
    let hits = targets
        .iter()
        .enumerate()
        .filter(|(i, t)| crate::tensor::Tensor::argmax(out.main_scores.row(*i)) == t.class_id)
        .count();
    Ok((parts, hits as f64 / data.len().max(1) as f64))
}

/// Batches of `size` from a shuffled index list; a trailing singleton is
/// merged into the previous batch because batch norm needs two rows.
pub(crate) fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let n = order.len();
        let start = n - 1 - out.last().unwrap().len();
        *out.last_mut().unwrap() = &order[start..];
    }
    out
}

pub fn train(model: FusionModel, train_set: &Dataset, val_set: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(model, train_set, val_set, cfg, |_, _| Ok(()))
}

/// Like [`train`], calling `on_epoch(metrics, best_model)` after every epoch;
/// `metrics.improved` tells whether `best_model` changed.
pub fn train_with(
    mut model: FusionModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &FusionModel) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    cfg.apply_to(model.config_mut());
    model.config().validate()?;
    train_set.validate()?;

    let carved;
    let (fit_set, monitor, monitor_name): (&Dataset, &Dataset, &str) = match val_set {
        Some(v) => (train_set, v, "validation"),
        None if cfg.val_fraction > 0.0 => {
            carved = split(train_set, 1.0 - cfg.val_fraction, cfg.seed)?;
            (&carved.0, &carved.1, "carved validation")
        }
        None => (train_set, train_set, "training"),
    };
    if fit_set.len() < 2 {
        return Err(Error::Config("training needs at least 2 samples".into()));
    }
    if monitor.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let (dv, da) = fit_set.dims();
    let mc = model.config();
    if (dv, da, fit_set.classes) != (mc.d_video, mc.d_audio, mc.classes) {
        return Err(Error::dim("train data vs model", &[mc.d_video, mc.d_audio, mc.classes], &[dv, da, fit_set.classes]));
    }

    let root = Rng::new(cfg.seed).split(0x7472_6169_6e);
    let clip = (cfg.clip_norm > 0.0).then_some(cfg.clip_norm);
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum, clip);
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let targets_all: Vec<Target> = fit_set.targets();

    for epoch in 1..=cfg.epochs_max {
        let started = Instant::now();
        let erng = root.split(epoch as u64);
        let mut order: Vec<usize> = (0..fit_set.len()).collect();
        erng.split(0).shuffle(&mut order);

        let (mut total, mut main, mut aux_v, mut aux_a, mut gnorm) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let all = batches(&order, cfg.batch_size);
        for (j, idx) in all.iter().enumerate() {
            let inputs: Vec<SampleInput<'_>> = idx.iter().map(|&i| fit_set.records[i].input()).collect();
            let targets: Vec<Target> = idx.iter().map(|&i| targets_all[i]).collect();
            let diverged = |e: Error| Error::Diverged { epoch, reason: e.to_string() };
            let trace = model.forward(&inputs, Mode::Train, &erng.split(1 + j as u64)).map_err(diverged)?;
            let parts = model.loss(&trace, &targets)?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("loss {} in batch {j}", parts.total) });
            }
            let grads = model.backward(&trace, &targets)?;
            model.update_bn_stats(&trace);
            let norm = opt.step(model.params_mut(), &grads);
            if !norm.is_finite() {
                return Err(Error::Diverged { epoch, reason: format!("gradient norm {norm} in batch {j}") });
            }
            let w = idx.len() as f64;
            total += w * parts.total;
            main += w * parts.main;
            aux_v += w * parts.aux_v;
            aux_a += w * parts.aux_a;
            gnorm += norm;
        }
        let n = fit_set.len() as f64;
        let (_, train_acc) = eval_loss(&model, fit_set).map_err(|e| Error::Diverged { epoch, reason: e.to_string() })?;
        let (val_parts, val_acc) = eval_loss(&model, monitor).map_err(|e| Error::Diverged { epoch, reason: e.to_string() })?;
        let improved = val_parts.total < best_loss;
        if improved {
            best_loss = val_parts.total;
            best_epoch = epoch;
            best = model.clone();
        }
        let m = EpochMetrics {
            epoch,
            total: total / n,
            main: main / n,
            aux_v: aux_v / n,
            aux_a: aux_a / n,
            train_accuracy: train_acc,
            val_loss: val_parts.total,
            val_accuracy: val_acc,
            grad_norm: gnorm / all.len() as f64,
            improved,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&m, &best)?;
        history.push(m);
        if cfg.target_train_accuracy.is_some_and(|a| train_acc >= a) {
            stop = StopReason::TargetReached;
            break;
        }
        if epoch - best_epoch >= cfg.patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }
    let summary = TrainSummary {
        epochs_run: history.len(),
        best_epoch,
        best_monitored_loss: best_loss,
        monitored: monitor_name.to_string(),
        stop_reason: stop,
        train_samples: fit_set.len(),
        monitor_samples: monitor.len(),
        final_metrics: history.last().cloned(),
    };
    Ok(TrainOutcome {
        model: best,
        history,
        summary,
    })
}

#[cfg(test)]
mod tests;
