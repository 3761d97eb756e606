//! Dual-stream fusion classifier.
//!
//! A video LSTM and an audio LSTM run side by side. At every step their
//! (dropped-out) hidden outputs are projected into a shared space and squashed
//! by `g(x) = tanh(2x/3)`; the fused vectors are pooled over time and
//! classified by a batch-normalized three-layer MLP. Two auxiliary linear
//! heads classify the pooled hidden outputs of each stream on their own, and
//! their losses are added to the main loss with weights `alpha` and `beta`.

mod forward;
pub mod loss;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::layers::{BatchNormParams, CellVariant, Linear, LstmParams};
use crate::params::{atomic_write, ParamStore};
use crate::rng::Rng;
use crate::tensor::{gemv_acc, Tensor};

pub use forward::{ForwardTrace, SampleInput};
pub use loss::{combined_loss, combined_loss_with, margin_loss, margin_loss_with, LossKind, LossParts, ModelOutput, Target};

/// How per-step vectors are reduced over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Sum,
    Mean,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Sum => "sum",
            Pooling::Mean => "mean",
        }
    }

    pub(crate) fn weight(self, steps: usize) -> f64 {
        match self {
            Pooling::Sum => 1.0,
            Pooling::Mean => 1.0 / steps as f64,
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Pooling::Sum),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::Config(format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_video: usize,
    pub d_audio: usize,
    pub hidden: usize,
    pub fused: usize,
    /// Widths of the two hidden MLP layers; the third layer maps to `classes`.
    pub mlp_hidden: [usize; 2],
    pub classes: usize,
    pub variant: CellVariant,
    pub pooling: Pooling,
    pub loss: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_video: 100,
            d_audio: 200,
            hidden: 50,
            fused: 50,
            mlp_hidden: [50, 50],
            classes: 10,
            variant: CellVariant::PaperLiteral,
            pooling: Pooling::Sum,
            loss: LossKind::SquaredHinge,
            alpha: 0.2,
            beta: 0.2,
            dropout_rate: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("d_video", self.d_video),
            ("d_audio", self.d_audio),
            ("hidden", self.hidden),
            ("fused", self.fused),
            ("mlp_hidden[0]", self.mlp_hidden[0]),
            ("mlp_hidden[1]", self.mlp_hidden[1]),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config("classes must be at least 2".into()));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config("dropout_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_metadata(&self) -> IndexMap<String, String> {
        let mut m = IndexMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("d_video", self.d_video.to_string());
        put("d_audio", self.d_audio.to_string());
        put("hidden", self.hidden.to_string());
        put("fused", self.fused.to_string());
        put("mlp_hidden", format!("{},{}", self.mlp_hidden[0], self.mlp_hidden[1]));
        put("classes", self.classes.to_string());
        put("variant", self.variant.to_string());
        put("pooling", self.pooling.to_string());
        put("loss", self.loss.to_string());
        put("alpha", format!("{:?}", self.alpha));
        put("beta", format!("{:?}", self.beta));
        put("dropout_rate", format!("{:?}", self.dropout_rate));
        m
    }

    pub fn from_metadata(m: &IndexMap<String, String>) -> Result<Self> {
        fn get<'a>(m: &'a IndexMap<String, String>, k: &str) -> Result<&'a str> {
            m.get(k)
                .map(String::as_str)
                .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks {k}")))
        }
        fn num<T: FromStr>(m: &IndexMap<String, String>, k: &str) -> Result<T> {
            get(m, k)?
                .parse()
                .map_err(|_| Error::Format(format!("checkpoint metadata {k} is malformed")))
        }
        let widths: Vec<usize> = get(m, "mlp_hidden")?
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format("checkpoint metadata mlp_hidden is malformed".into()))?;
        if widths.len() != 2 {
            return Err(Error::Format("mlp_hidden must list two widths".into()));
        }
        let cfg = ModelConfig {
            d_video: num(m, "d_video")?,
            d_audio: num(m, "d_audio")?,
            hidden: num(m, "hidden")?,
            fused: num(m, "fused")?,
            mlp_hidden: [widths[0], widths[1]],
            classes: num(m, "classes")?,
            variant: get(m, "variant")?.parse()?,
            pooling: get(m, "pooling")?.parse()?,
            loss: get(m, "loss")?.parse()?,
            alpha: num(m, "alpha")?,
            beta: num(m, "beta")?,
            dropout_rate: num(m, "dropout_rate")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One MLP layer: bias-free linear map followed by batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpLayer {
    pub linear: Linear,
    pub bn: BatchNormParams,
}

/// All tensors of the model. The same type doubles as the gradient buffer,
/// in which case the batch-norm running statistics are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub video_lstm: LstmParams,
    pub audio_lstm: LstmParams,
    /// `[fused×hidden]`
    pub proj_v: Tensor,
    /// `[fused×hidden]`
    pub proj_a: Tensor,
    pub mlp: Vec<MlpLayer>,
    pub aux_v: Linear,
    pub aux_a: Linear,
}

impl FusionParams {
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let video_lstm = LstmParams::init_uniform(cfg.d_video, cfg.hidden, &mut rng.split(1));
        let audio_lstm = LstmParams::init_uniform(cfg.d_audio, cfg.hidden, &mut rng.split(2));
        let proj = |r: &mut Rng| {
            if cfg.fused == cfg.hidden {
                Tensor::identity(cfg.hidden)
            } else {
                Linear::init_uniform(cfg.hidden, cfg.fused, false, r).weight
            }
        };
        let proj_v = proj(&mut rng.split(3));
        let proj_a = proj(&mut rng.split(4));
        let widths = [cfg.fused, cfg.mlp_hidden[0], cfg.mlp_hidden[1], cfg.classes];
        let mlp = (0..3)
            .map(|l| MlpLayer {
                linear: Linear::init_uniform(widths[l], widths[l + 1], false, &mut rng.split(10 + l as u64)),
                bn: BatchNormParams::new(widths[l + 1]),
            })
            .collect();
        FusionParams {
            video_lstm,
            audio_lstm,
            proj_v,
            proj_a,
            mlp,
            aux_v: Linear::init_uniform(cfg.hidden, cfg.classes, true, &mut rng.split(20)),
            aux_a: Linear::init_uniform(cfg.hidden, cfg.classes, true, &mut rng.split(21)),
        }
    }

    /// Same structure, every tensor zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        for l in &mut z.mlp {
            l.bn.running_mean.fill(0.0);
            l.bn.running_var.fill(0.0);
        }
        z
    }

    /// Trainable tensors with their checkpoint names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, lstm) in [("video_lstm", &self.video_lstm), ("audio_lstm", &self.audio_lstm)] {
            for (n, t) in crate::layers::lstm::LSTM_PARAM_NAMES.iter().zip(lstm.tensors()) {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        out.push(("proj_v".into(), &self.proj_v));
        out.push(("proj_a".into(), &self.proj_a));
        for (l, layer) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{l}.weight"), &layer.linear.weight));
            out.push((format!("mlp.{l}.gamma"), &layer.bn.gamma));
            out.push((format!("mlp.{l}.beta"), &layer.bn.beta_shift));
        }
        for (prefix, head) in [("aux_v", &self.aux_v), ("aux_a", &self.aux_a)] {
            out.push((format!("{prefix}.weight"), &head.weight));
            out.push((format!("{prefix}.bias"), head.bias.as_ref().expect("aux heads carry a bias")));
        }
        out
    }

    /// Mutable view in the same order as [`named_tensors`](Self::named_tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.video_lstm.tensors_mut());
        out.extend(self.audio_lstm.tensors_mut());
        out.push(&mut self.proj_v);
        out.push(&mut self.proj_a);
        for layer in &mut self.mlp {
            out.push(&mut layer.linear.weight);
            out.push(&mut layer.bn.gamma);
            out.push(&mut layer.bn.beta_shift);
        }
        for head in [&mut self.aux_v, &mut self.aux_a] {
            out.push(&mut head.weight);
            out.push(head.bias.as_mut().expect("aux heads carry a bias"));
        }
        out
    }

    /// Non-trainable buffers (batch-norm running statistics).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.mlp.iter().enumerate() {
            out.push((format!("mlp.{l}.running_mean"), &layer.bn.running_mean));
            out.push((format!("mlp.{l}.running_var"), &layer.bn.running_var));
        }
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.mlp {
            out.push(&mut layer.bn.running_mean);
            out.push(&mut layer.bn.running_var);
        }
        out
    }

    /// Store holding the trainable tensors, with `grads` (if given) in the gradient slots.
    pub fn to_store(&self, grads: Option<&FusionParams>) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, t) in self.named_tensors() {
            s.insert(name, t.clone()).expect("parameter names are unique");
        }
        if let Some(g) = grads {
            for ((_, e), (_, gt)) in s.iter_mut().zip(g.named_tensors()) {
                e.grad = gt.clone();
            }
        }
        s
    }

    /// Overwrites trainable tensors (and buffers, when present) from `store`.
    pub fn load_store(&mut self, store: &ParamStore, require_buffers: bool) -> Result<()> {
        let names: Vec<String> = self.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(self.tensors_mut()) {
            assign(t, store, name)?;
        }
        let names: Vec<String> = self.named_buffers().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(self.buffers_mut()) {
            if store.get(name).is_some() || require_buffers {
                assign(t, store, name)?;
            }
        }
        Ok(())
    }

    pub fn grad_norm(&self) -> f64 {
        self.named_tensors().iter().map(|(_, t)| t.norm_sq()).sum::<f64>().sqrt()
    }
}

fn assign(t: &mut Tensor, store: &ParamStore, name: &str) -> Result<()> {
    let v = store.value(name)?;
    if v.shape() != t.shape() {
        return Err(Error::dim("load parameter", t.shape(), v.shape()));
    }
    *t = v.clone();
    Ok(())
}

/// Model parameters plus configuration. Any mutation of the trainable
/// parameters through [`FusionModel::params_mut`] invalidates outstanding
/// forward traces.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel {
    config: ModelConfig,
    params: FusionParams,
    version: u64,
}

impl FusionModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = FusionParams::init(&config, &mut Rng::new(seed).split(0x6d6f_6465_6c));
        Ok(FusionModel {
            config,
            params,
            version: 0,
        })
    }

    pub fn from_parts(config: ModelConfig, params: FusionParams) -> Result<Self> {
        config.validate()?;
        let mut reference = FusionParams::init(&config, &mut Rng::new(0));
        // Reuse the loader for shape checking against the configured dims.
        reference.load_store(&params.to_store(None), false)?;
        Ok(FusionModel {
            config,
            params,
            version: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Loss weights and the like may change without touching parameters.
    pub fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn params(&self) -> &FusionParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut FusionParams {
        self.version += 1;
        &mut self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut store = self.params.to_store(None);
        for (name, t) in self.params.named_buffers() {
            store.insert(name, t.clone()).expect("buffer names are unique");
        }
        store.to_bytes_with_metadata(&self.config.to_metadata())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (store, meta) = ParamStore::from_bytes_with_metadata(bytes)?;
        let config = ModelConfig::from_metadata(&meta)?;
        let mut params = FusionParams::init(&config, &mut Rng::new(0));
        params.load_store(&store, true)?;
        Ok(FusionModel {
            config,
            params,
            version: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_checkpoint_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}

/// `g(P_v h_v + P_a h_a)`.
pub fn fuse_step(h_v: &Tensor, h_a: &Tensor, proj_v: &Tensor, proj_a: &Tensor) -> Result<Tensor> {
    if proj_v.shape() != proj_a.shape() || proj_v.shape().len() != 2 {
        return Err(Error::dim("fuse_step projections", proj_v.shape(), proj_a.shape()));
    }
    if h_v.len() != proj_v.shape()[1] || h_a.len() != proj_a.shape()[1] {
        return Err(Error::dim("fuse_step inputs", &[h_v.len(), h_a.len()], proj_v.shape()));
    }
    let mut pre = vec![0.0; proj_v.shape()[0]];
    gemv_acc(proj_v, h_v.data(), &mut pre);
    gemv_acc(proj_a, h_a.data(), &mut pre);
    Ok(Tensor::vector(pre.into_iter().map(crate::layers::activations::g).collect()))
}
