//! Layer-wise and full-model gradient checks behind one report.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients_detailed, GradCheckReport};
use crate::layers::lstm::LSTM_PARAM_NAMES;
use crate::layers::{
    batch_norm_backward, batch_norm_forward, dropout_backward, dropout_forward, lstm_backward_sequence,
    lstm_forward_sequence, lstm_step, lstm_step_backward, BatchNormParams, CellVariant, Linear, LstmParams,
    LstmState, Mode,
};
use crate::model::loss::margin_loss_grad;
use crate::model::{margin_loss_with, FusionModel, LossKind, ModelConfig, SampleInput, Target};
use crate::params::ParamStore;
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    /// First full-model seed; `seeds` consecutive seeds are checked per variant.
    pub seed: u64,
    pub seeds: usize,
    /// Debug aid: double the analytic gradient of every block whose name starts with this.
    pub corrupt: Option<String>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            seeds: 5,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResult {
    pub name: String,
    pub max_rel_error: f64,
    /// `param[index]` with the largest error.
    pub worst: String,
}

impl BlockResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub blocks: Vec<BlockResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(BlockResult::passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockResult> {
        self.blocks.iter().filter(|b| !b.passed())
    }

    /// One line per block, then a verdict line. Deterministic for a given config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for b in &self.blocks {
            let _ = writeln!(
                s,
                "{:<34} max_rel_error {:.3e}  worst {:<22} {}",
                b.name,
                b.max_rel_error,
                b.worst,
                if b.passed() { "ok" } else { "FAIL" }
            );
        }
        let failed: Vec<&str> = self.failures().map(|b| b.name.as_str()).collect();
        if failed.is_empty() {
            let _ = writeln!(s, "all {} blocks below {GRADCHECK_TOLERANCE:e}", self.blocks.len());
        } else {
            let _ = writeln!(s, "FAILED blocks: {}", failed.join(", "));
        }
        s
    }
}

fn randn(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| scale * rng.normal()).collect()).unwrap()
}

fn weighted_sum(r: &Tensor, y: &Tensor) -> f64 {
    r.data().iter().zip(y.data()).map(|(a, b)| a * b).sum()
}

fn lstm_into_store(s: &mut ParamStore, p: &LstmParams, g: &LstmParams) {
    for ((n, v), gv) in LSTM_PARAM_NAMES.iter().zip(p.tensors()).zip(g.tensors()) {
        s.insert(*n, v.clone()).unwrap();
        s.get_mut(n).unwrap().grad = gv.clone();
    }
}

fn lstm_from_store(s: &ParamStore, template: &LstmParams) -> Result<LstmParams> {
    let mut p = template.clone();
    for (n, t) in LSTM_PARAM_NAMES.iter().zip(p.tensors_mut()) {
        *t = s.value(n)?.clone();
    }
    Ok(p)
}

fn with_grad(s: &mut ParamStore, name: &str, value: &Tensor, grad: &Tensor) {
    s.insert(name, value.clone()).unwrap();
    s.get_mut(name).unwrap().grad = grad.clone();
}

fn random_lstm(input: usize, hidden: usize, rng: &mut Rng) -> LstmParams {
    let mut p = LstmParams::init_uniform(input, hidden, rng);
    for t in p.tensors_mut() {
        for v in t.data_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    p
}

type Objective<'a> = Box<dyn FnMut(&ParamStore) -> Result<f64> + 'a>;

fn lstm_step_block(variant: CellVariant, rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let (inp, hid) = (3, 4);
    let p = random_lstm(inp, hid, rng);
    let x = randn(rng, &[inp], 1.0);
    let prev = LstmState { h: randn(rng, &[hid], 0.5), c: randn(rng, &[hid], 0.5) };
    let (rh, rc) = (randn(rng, &[hid], 1.0), randn(rng, &[hid], 1.0));
    let (_, trace) = lstm_step(&x, &prev, &p, variant)?;
    let mut g = LstmParams::zeros(inp, hid);
    let (dx, dprev) = lstm_step_backward(&trace, &p, variant, rh.data(), rc.data(), &mut g)?;
    let mut s = ParamStore::new();
    lstm_into_store(&mut s, &p, &g);
    with_grad(&mut s, "x", &x, &dx);
    with_grad(&mut s, "h_prev", &prev.h, &dprev.h);
    with_grad(&mut s, "c_prev", &prev.c, &dprev.c);
    let f = move |s: &ParamStore| -> Result<f64> {
        let q = lstm_from_store(s, &p)?;
        let st = LstmState { h: s.value("h_prev")?.clone(), c: s.value("c_prev")?.clone() };
        let (out, _) = lstm_step(s.value("x")?, &st, &q, variant)?;
        Ok(weighted_sum(&rh, &out.h) + weighted_sum(&rc, &out.c))
    };
    Ok((s, Box::new(f)))
}

fn lstm_seq_block(variant: CellVariant, rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let (inp, hid, t) = (3, 4, 5);
    let p = random_lstm(inp, hid, rng);
    let xs = randn(rng, &[t, inp], 1.0);
    let r = randn(rng, &[t, hid], 1.0);
    let traces = lstm_forward_sequence(&xs, &p, variant)?;
    let mut g = LstmParams::zeros(inp, hid);
    let dx = lstm_backward_sequence(&traces, &p, variant, &r, &mut g)?;
    let mut s = ParamStore::new();
    lstm_into_store(&mut s, &p, &g);
    with_grad(&mut s, "xs", &xs, &dx);
    let f = move |s: &ParamStore| -> Result<f64> {
        let q = lstm_from_store(s, &p)?;
        let tr = lstm_forward_sequence(s.value("xs")?, &q, variant)?;
        Ok(tr.iter().enumerate().map(|(k, st)| weighted_sum(&Tensor::vector(r.row(k).to_vec()), &st.h)).sum())
    };
    Ok((s, Box::new(f)))
}

fn linear_block(rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let mut lin = Linear::init_uniform(3, 4, true, rng);
    lin.bias = Some(randn(rng, &[4], 0.5));
    let x = randn(rng, &[5, 3], 1.0);
    let r = randn(rng, &[5, 4], 1.0);
    let mut g = lin.zeros_like();
    let dx = lin.backward(&x, &r, &mut g)?;
    let mut s = ParamStore::new();
    with_grad(&mut s, "weight", &lin.weight, &g.weight);
    with_grad(&mut s, "bias", lin.bias.as_ref().unwrap(), g.bias.as_ref().unwrap());
    with_grad(&mut s, "x", &x, &dx);
    let f = move |s: &ParamStore| -> Result<f64> {
        let l = Linear { weight: s.value("weight")?.clone(), bias: Some(s.value("bias")?.clone()) };
        Ok(weighted_sum(&r, &l.forward(s.value("x")?)?))
    };
    Ok((s, Box::new(f)))
}

fn batchnorm_block(rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let mut p = BatchNormParams::new(4);
    p.gamma = randn(rng, &[4], 0.3).add(&Tensor::filled(&[4], 1.0))?;
    p.beta_shift = randn(rng, &[4], 0.3);
    let x = randn(rng, &[6, 4], 1.0);
    let r = randn(rng, &[6, 4], 1.0);
    let (_, cache) = batch_norm_forward(&x, &p, Mode::Train)?;
    let (mut dg, mut db) = (Tensor::zeros(&[4]), Tensor::zeros(&[4]));
    let dx = batch_norm_backward(&r, &p, &cache, &mut dg, &mut db)?;
    let mut s = ParamStore::new();
    with_grad(&mut s, "gamma", &p.gamma, &dg);
    with_grad(&mut s, "beta", &p.beta_shift, &db);
    with_grad(&mut s, "x", &x, &dx);
    let f = move |s: &ParamStore| -> Result<f64> {
        let q = BatchNormParams { gamma: s.value("gamma")?.clone(), beta_shift: s.value("beta")?.clone(), ..p.clone() };
        Ok(weighted_sum(&r, &batch_norm_forward(s.value("x")?, &q, Mode::Train)?.0))
    };
    Ok((s, Box::new(f)))
}

fn dropout_block(rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let rate = 0.4;
    let x = randn(rng, &[4, 5], 1.0);
    let r = randn(rng, &[4, 5], 1.0);
    let mask_rng = rng.split(7);
    let (_, mask) = dropout_forward(&x, rate, Mode::Train, &mut mask_rng.clone())?;
    let dx = dropout_backward(&r, &mask, rate)?;
    let mut s = ParamStore::new();
    with_grad(&mut s, "x", &x, &dx);
    let f = move |s: &ParamStore| -> Result<f64> {
        Ok(weighted_sum(&r, &dropout_forward(s.value("x")?, rate, Mode::Train, &mut mask_rng.clone())?.0))
    };
    Ok((s, Box::new(f)))
}

fn loss_block(kind: LossKind, rng: &mut Rng) -> Result<(ParamStore, Objective<'static>)> {
    let classes = 5;
    let target = Target::new(2, classes)?;
    let scores = randn(rng, &[classes], 0.7);
    let mut g = vec![0.0; classes];
    margin_loss_grad(scores.data(), target, kind, 1.0, &mut g)?;
    let mut s = ParamStore::new();
    with_grad(&mut s, "scores", &scores, &Tensor::vector(g));
    let f = move |s: &ParamStore| -> Result<f64> { margin_loss_with(s.value("scores")?.data(), target, kind) };
    Ok((s, Box::new(f)))
}

fn gradcheck_model_config(variant: CellVariant) -> ModelConfig {
    ModelConfig {
        d_video: 2,
        d_audio: 2,
        hidden: 2,
        fused: 2,
        mlp_hidden: [3, 3],
        classes: 2,
        variant,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the whole model on a random batch of
/// `batch` sequences with `steps` steps.
///
/// Parameters are pushed away from their initialization so biases, shifts
/// and projections all carry gradient; batch-norm parameters move only a
/// little so every ReLU unit stays active on part of the batch.
pub fn full_model_check(cfg: &ModelConfig, seed: u64, batch: usize, steps: usize) -> Result<GradCheckReport> {
    full_model_check_impl(cfg, seed, batch, steps, false)
}

fn full_model_check_impl(cfg: &ModelConfig, seed: u64, batch: usize, steps: usize, corrupt: bool) -> Result<GradCheckReport> {
    let mut model = FusionModel::new(cfg.clone(), seed)?;
    let mut r = Rng::new(seed ^ 0xabc);
    let names: Vec<String> = model.params().named_tensors().into_iter().map(|(n, _)| n).collect();
    for (name, tensor) in names.iter().zip(model.params_mut().tensors_mut()) {
        let scale = if name.ends_with("gamma") || name.ends_with("beta") { 0.1 } else { 0.3 };
        for v in tensor.data_mut() {
            *v += scale * r.normal();
        }
    }
    let mut data_rng = Rng::new(seed + 1);
    let videos: Vec<Tensor> = (0..batch).map(|_| randn(&mut data_rng, &[steps, cfg.d_video], 1.0)).collect();
    let audios: Vec<Tensor> = (0..batch).map(|_| randn(&mut data_rng, &[steps, cfg.d_audio], 1.0)).collect();
    let targets: Vec<Target> = (0..batch).map(|k| Target::new(k % cfg.classes, cfg.classes)).collect::<Result<_>>()?;
    let inputs: Vec<SampleInput<'_>> = videos.iter().zip(&audios).map(|(video, audio)| SampleInput { video, audio }).collect();
    let drop_rng = Rng::new(seed + 2);

    let trace = model.forward(&inputs, Mode::Train, &drop_rng)?;
    let grads = model.backward(&trace, &targets)?;
    let mut store = model.params().to_store(Some(&grads));
    if corrupt {
        double_grads(&mut store);
    }
    let objective = |s: &ParamStore| -> Result<f64> {
        let mut m = model.clone();
        m.params_mut().load_store(s, false)?;
        let tr = m.forward(&inputs, Mode::Train, &drop_rng)?;
        Ok(m.loss(&tr, &targets)?.total)
    };
    check_gradients_detailed(objective, &store, GRADCHECK_EPS)
}

fn double_grads(s: &mut ParamStore) {
    for (_, e) in s.iter_mut() {
        e.grad = e.grad.scale(2.0);
    }
}

fn summarize(name: String, rep: &GradCheckReport) -> BlockResult {
    let worst = rep.worst().map_or(String::from("-"), |w| format!("{}[{}]", w.name, w.worst_index));
    BlockResult { name, max_rel_error: rep.max_rel_error(), worst }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    if cfg.seeds == 0 {
        return Err(Error::Config("gradcheck needs at least one seed".into()));
    }
    let hits = |name: &str| cfg.corrupt.as_deref().is_some_and(|c| name.starts_with(c));
    let mut blocks = Vec::new();
    let root = Rng::new(cfg.seed).split(0x6763);

    let mut layer_blocks: Vec<(String, (ParamStore, Objective<'static>))> = Vec::new();
    for (k, v) in CellVariant::ALL.into_iter().enumerate() {
        layer_blocks.push((format!("lstm-step/{v}"), lstm_step_block(v, &mut root.split(k as u64))?));
    }
    for (k, v) in CellVariant::ALL.into_iter().enumerate() {
        layer_blocks.push((format!("lstm-sequence/{v}"), lstm_seq_block(v, &mut root.split(10 + k as u64))?));
    }
    layer_blocks.push(("linear".into(), linear_block(&mut root.split(20))?));
    layer_blocks.push(("batchnorm".into(), batchnorm_block(&mut root.split(21))?));
    layer_blocks.push(("dropout".into(), dropout_block(&mut root.split(22))?));
    for (k, kind) in [LossKind::SquaredHinge, LossKind::Literal].into_iter().enumerate() {
        layer_blocks.push((format!("loss/{kind}"), loss_block(kind, &mut root.split(30 + k as u64))?));
    }
    for (name, (mut store, f)) in layer_blocks {
        if hits(&name) {
            double_grads(&mut store);
        }
        let rep = check_gradients_detailed(f, &store, GRADCHECK_EPS)?;
        blocks.push(summarize(name, &rep));
    }

    for v in CellVariant::ALL {
        for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
            let name = format!("full-model/{v}/seed{seed}");
            let rep = full_model_check_impl(&gradcheck_model_config(v), seed, 16, 3, hits(&name))?;
            blocks.push(summarize(name, &rep));
        }
    }
    Ok(SuiteReport { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_is_reproducible() {
        let rep = run_suite(&SuiteConfig::default()).unwrap();
        assert!(rep.passed(), "{}", rep.to_text());
        assert_eq!(rep.blocks.len(), 9 + 10);
        assert_eq!(rep.to_text(), run_suite(&SuiteConfig::default()).unwrap().to_text());
    }

    #[test]
    fn corruption_is_detected_and_named() {
        let cfg = SuiteConfig { seeds: 1, corrupt: Some("batchnorm".into()), ..Default::default() };
        let rep = run_suite(&cfg).unwrap();
        let failed: Vec<&str> = rep.failures().map(|b| b.name.as_str()).collect();
        assert_eq!(failed, vec!["batchnorm"]);
        assert!((rep.max_rel_error() - 0.5).abs() < 1e-3);
        assert!(rep.to_text().contains("FAILED blocks: batchnorm"));
    }
}
