//! Per-epoch metrics and their CSV / JSON renderings.

use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Sample-weighted means of the training-step losses over the epoch.
    pub total: f64,
    pub main: f64,
    pub aux_v: f64,
    pub aux_a: f64,
    /// Eval-mode accuracy on the fitted samples after the epoch.
    pub train_accuracy: f64,
    /// Eval-mode combined loss on the monitored set.
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Mean pre-clipping gradient norm.
    pub grad_norm: f64,
    pub improved: bool,
    /// Kept out of the CSV and JSON so those stay reproducible.
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_monitored_loss: f64,
    /// Which set drove early stopping.
    pub monitored: String,
    pub stop_reason: StopReason,
    pub train_samples: usize,
    pub monitor_samples: usize,
    pub final_metrics: Option<EpochMetrics>,
}

pub const METRICS_HEADER: &str = "epoch,total,main,aux_v,aux_a,train_accuracy,val_loss,val_accuracy,grad_norm,improved";

/// One row per epoch under [`METRICS_HEADER`]; floats use shortest round-trip form.
pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for m in history {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            m.epoch, m.total, m.main, m.aux_v, m.aux_a, m.train_accuracy, m.val_loss, m.val_accuracy, m.grad_norm, m.improved
        );
    }
    s
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    summary: &'a TrainSummary,
    alpha: f64,
    beta: f64,
    config: &'a IndexMap<String, String>,
}

/// Pretty JSON of the summary plus the resolved configuration.
pub fn summary_json(summary: &TrainSummary, alpha: f64, beta: f64, config: &IndexMap<String, String>) -> String {
    let doc = SummaryDoc { summary, alpha, beta, config };
    let mut s = serde_json::to_string_pretty(&doc).expect("summary is serializable");
    s.push('\n');
    s
}
