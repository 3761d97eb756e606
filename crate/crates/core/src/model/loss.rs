//! Squared margin losses and the weighted three-head objective.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which margin loss to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossKind {
    /// `(1/n) Σ_{i≠t} max(0, 1 − (x_t − x_i))²`.
    #[default]
    SquaredHinge,
    /// `(1/n) Σ_i max(0, (1 − x_i + y_i)²)` with one-hot `y`, which reduces to
    /// a plain squared error against `1 + y`. Kept for comparison only.
    Literal,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SquaredHinge => "squared-hinge",
            LossKind::Literal => "literal",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared-hinge" | "hinge" => Ok(LossKind::SquaredHinge),
            "literal" => Ok(LossKind::Literal),
            other => Err(Error::Config(format!("unknown loss kind {other:?}"))),
        }
    }
}

/// Classification target: a class index below `classes`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Target {
    pub class_id: usize,
    pub classes: usize,
}

impl Target {
    pub fn new(class_id: usize, classes: usize) -> Result<Self> {
        if class_id >= classes {
            return Err(Error::Config(format!("class {class_id} out of range for {classes} classes")));
        }
        Ok(Target { class_id, classes })
    }
}

fn check(scores: &[f64], target: Target) -> Result<()> {
    if target.classes < 2 {
        return Err(Error::Config("margin loss needs at least 2 classes".into()));
    }
    if scores.len() != target.classes {
        return Err(Error::dim("margin_loss", &[target.classes], &[scores.len()]));
    }
    if target.class_id >= target.classes {
        return Err(Error::Config(format!("target {} out of range", target.class_id)));
    }
    Ok(())
}

pub fn margin_loss(scores: &[f64], target: Target) -> Result<f64> {
    margin_loss_with(scores, target, LossKind::SquaredHinge)
}

pub fn margin_loss_with(scores: &[f64], target: Target, kind: LossKind) -> Result<f64> {
    check(scores, target)?;
    let n = scores.len() as f64;
    let t = target.class_id;
    let sum: f64 = match kind {
        LossKind::SquaredHinge => scores
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(_, &x)| (1.0 - (scores[t] - x)).max(0.0).powi(2))
            .sum(),
        LossKind::Literal => scores
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = if i == t { 1.0 } else { 0.0 };
                (1.0 - x + y).powi(2)
            })
            .sum(),
    };
    Ok(sum / n)
}

/// Adds `scale · ∂loss/∂scores` into `grad`.
pub fn margin_loss_grad(scores: &[f64], target: Target, kind: LossKind, scale: f64, grad: &mut [f64]) -> Result<()> {
    check(scores, target)?;
    let n = scores.len() as f64;
    let t = target.class_id;
    match kind {
        LossKind::SquaredHinge => {
            for i in 0..scores.len() {
                if i == t {
                    continue;
                }
                let m = 1.0 - (scores[t] - scores[i]);
                if m > 0.0 {
                    let d = scale * 2.0 * m / n;
                    grad[i] += d;
                    grad[t] -= d;
                }
            }
        }
        LossKind::Literal => {
            for (i, &x) in scores.iter().enumerate() {
                let y = if i == t { 1.0 } else { 0.0 };
                grad[i] += scale * -2.0 * (1.0 - x + y) / n;
            }
        }
    }
    Ok(())
}

/// Score blocks for a batch: main head and the two auxiliary heads, each `[batch×classes]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    pub main_scores: Tensor,
    pub aux_v_scores: Tensor,
    pub aux_a_scores: Tensor,
}

/// Batch-averaged losses. `total` is always `main + alpha·aux_v + beta·aux_a`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub main: f64,
    pub aux_v: f64,
    pub aux_a: f64,
}

impl LossParts {
    pub fn combine(main: f64, aux_v: f64, aux_a: f64, alpha: f64, beta: f64) -> Self {
        LossParts {
            total: main + alpha * aux_v + beta * aux_a,
            main,
            aux_v,
            aux_a,
        }
    }
}

pub fn combined_loss(out: &ModelOutput, targets: &[Target], alpha: f64, beta: f64) -> Result<LossParts> {
    combined_loss_with(out, targets, alpha, beta, LossKind::SquaredHinge)
}

pub fn combined_loss_with(
    out: &ModelOutput,
    targets: &[Target],
    alpha: f64,
    beta: f64,
    kind: LossKind,
) -> Result<LossParts> {
    let b = targets.len();
    for s in [&out.main_scores, &out.aux_v_scores, &out.aux_a_scores] {
        if s.rows() != b {
            return Err(Error::dim("combined_loss", &[b], s.shape()));
        }
    }
    if b == 0 {
        return Ok(LossParts::default());
    }
    let mut parts = [0.0; 3];
    for (r, &t) in targets.iter().enumerate() {
        for (k, s) in [&out.main_scores, &out.aux_v_scores, &out.aux_a_scores].into_iter().enumerate() {
            parts[k] += margin_loss_with(s.row(r), t, kind)?;
        }
    }
    let bn = b as f64;
    Ok(LossParts::combine(parts[0] / bn, parts[1] / bn, parts[2] / bn, alpha, beta))
}
