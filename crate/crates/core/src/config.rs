//! Flat `key=value` run configuration shared by every CLI command.
//!
//! A single `seed` drives generation, splitting, initialization, shuffling
//! and dropout. Keys are listed by [`RunConfig::entries`] in file order.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::gradcheck::SuiteConfig;
use crate::model::ModelConfig;
use crate::params::parse_kv;
use crate::signal::PreprocessConfig;
use crate::train::{EvalMode, TrainConfig};

/// Hidden sizes of the model; input dims and class count come from the data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub hidden: usize,
    pub fused: usize,
    pub mlp_hidden: [usize; 2],
}

impl Default for ModelShape {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelShape {
            hidden: m.hidden,
            fused: m.fused,
            mlp_hidden: m.mlp_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub prep: PreprocessConfig,
    pub shape: ModelShape,
    pub train: TrainConfig,
    pub mode: EvalMode,
    pub gradcheck_seeds: usize,
    pub corrupt: Option<String>,
    /// Raw container base path (preprocess input).
    pub input: Option<PathBuf>,
    /// Container base path consumed by train / eval.
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut c = RunConfig {
            seed: 1,
            synth: SynthConfig::default(),
            prep: PreprocessConfig::default(),
            shape: ModelShape::default(),
            train: TrainConfig::default(),
            mode: EvalMode::default(),
            gradcheck_seeds: 5,
            corrupt: None,
            input: None,
            data: None,
            checkpoint: None,
            out: None,
        };
        c.set_seed(1);
        c
    }
}

pub const PATH_KEYS: [&str; 4] = ["input", "data", "checkpoint", "out"];

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn opt_text(v: &Option<String>) -> String {
    v.clone().unwrap_or_else(|| "none".into())
}

fn opt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(|| "none".into(), |p| p.display().to_string())
}

fn parse_opt_path(v: &str) -> Option<PathBuf> {
    (v != "none" && !v.is_empty()).then(|| PathBuf::from(v))
}

impl RunConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
        self.prep.seed = seed;
        self.train.seed = seed;
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synth;
        let p = &mut self.prep;
        let t = &mut self.train;
        match key {
            "seed" => self.set_seed(parse(key, v)?),
            "classes" => s.classes = parse(key, v)?,
            "samples_per_class" => s.samples_per_class = parse(key, v)?,
            "steps" => s.steps = parse(key, v)?,
            "d_video" => s.d_video = parse(key, v)?,
            "d_audio" => s.d_audio = parse(key, v)?,
            "noise_sigma" => s.noise_sigma = parse(key, v)?,
            "audio_informativeness" => s.audio_informativeness = parse(key, v)?,
            "latent_dim" => s.latent_dim = parse(key, v)?,
            "audio_ratio" => s.audio_ratio = parse(key, v)?,
            "sample_rate" => p.spectrogram.sample_rate = parse(key, v)?,
            "window_ms" => p.spectrogram.window_ms = parse(key, v)?,
            "hop_ms" => p.spectrogram.hop_ms = parse(key, v)?,
            "spectral_points" => p.spectrogram.spectral_points = parse(key, v)?,
            "log_compress" => p.spectrogram.log_compress = parse(key, v)?,
            "video_components" => p.video_components = parse(key, v)?,
            "audio_components" => p.audio_components = parse(key, v)?,
            "ratio" => p.ratio = parse(key, v)?,
            "augment" => p.augment = parse(key, v)?,
            "max_shift" => p.max_shift = parse(key, v)?,
            "train_fraction" => p.train_fraction = parse(key, v)?,
            "hidden" => self.shape.hidden = parse(key, v)?,
            "fused" => self.shape.fused = parse(key, v)?,
            "mlp_hidden" => {
                let w: Vec<usize> = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_>>()?;
                self.shape.mlp_hidden = w
                    .try_into()
                    .map_err(|_| Error::Config("mlp_hidden takes two comma-separated widths".into()))?;
            }
            "variant" => t.variant = v.parse()?,
            "pooling" => t.pooling = v.parse()?,
            "loss" => t.loss = v.parse()?,
            "epochs_max" => t.epochs_max = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "learning_rate" => t.learning_rate = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "alpha" => t.alpha = parse(key, v)?,
            "beta" => t.beta = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "dropout_rate" => t.dropout_rate = parse(key, v)?,
            "clip_norm" => t.clip_norm = parse(key, v)?,
            "val_fraction" => t.val_fraction = parse(key, v)?,
            "target_train_accuracy" => {
                t.target_train_accuracy = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            "mode" => self.mode = v.parse()?,
            "gradcheck_seeds" => self.gradcheck_seeds = parse(key, v)?,
            "corrupt" => self.corrupt = (v != "none").then(|| v.to_string()),
            "input" => self.input = parse_opt_path(v),
            "data" => self.data = parse_opt_path(v),
            "checkpoint" => self.checkpoint = parse_opt_path(v),
            "out" => self.out = parse_opt_path(v),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, p, t) = (&self.synth, &self.prep, &self.train);
        let sp = &p.spectrogram;
        vec![
            ("seed", self.seed.to_string()),
            ("classes", s.classes.to_string()),
            ("samples_per_class", s.samples_per_class.to_string()),
            ("steps", s.steps.to_string()),
            ("d_video", s.d_video.to_string()),
            ("d_audio", s.d_audio.to_string()),
            ("noise_sigma", format!("{:?}", s.noise_sigma)),
            ("audio_informativeness", format!("{:?}", s.audio_informativeness)),
            ("latent_dim", s.latent_dim.to_string()),
            ("audio_ratio", s.audio_ratio.to_string()),
            ("sample_rate", format!("{:?}", sp.sample_rate)),
            ("window_ms", format!("{:?}", sp.window_ms)),
            ("hop_ms", format!("{:?}", sp.hop_ms)),
            ("spectral_points", sp.spectral_points.to_string()),
            ("log_compress", sp.log_compress.to_string()),
            ("video_components", p.video_components.to_string()),
            ("audio_components", p.audio_components.to_string()),
            ("ratio", p.ratio.to_string()),
            ("augment", p.augment.to_string()),
            ("max_shift", p.max_shift.to_string()),
            ("train_fraction", format!("{:?}", p.train_fraction)),
            ("hidden", self.shape.hidden.to_string()),
            ("fused", self.shape.fused.to_string()),
            ("mlp_hidden", format!("{},{}", self.shape.mlp_hidden[0], self.shape.mlp_hidden[1])),
            ("variant", t.variant.to_string()),
            ("pooling", t.pooling.to_string()),
            ("loss", t.loss.to_string()),
            ("epochs_max", t.epochs_max.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", format!("{:?}", t.learning_rate)),
            ("momentum", format!("{:?}", t.momentum)),
            ("alpha", format!("{:?}", t.alpha)),
            ("beta", format!("{:?}", t.beta)),
            ("patience", t.patience.to_string()),
            ("dropout_rate", format!("{:?}", t.dropout_rate)),
            ("clip_norm", format!("{:?}", t.clip_norm)),
            ("val_fraction", format!("{:?}", t.val_fraction)),
            ("target_train_accuracy", t.target_train_accuracy.map_or("none".into(), |a| format!("{a:?}"))),
            ("mode", self.mode.to_string()),
            ("gradcheck_seeds", self.gradcheck_seeds.to_string()),
            ("corrupt", opt_text(&self.corrupt)),
            ("input", opt_path(&self.input)),
            ("data", opt_path(&self.data)),
            ("checkpoint", opt_path(&self.checkpoint)),
            ("out", opt_path(&self.out)),
        ]
    }

    /// Entries without filesystem paths, for embedding in primary outputs.
    pub fn portable_entries(&self) -> IndexMap<String, String> {
        self.entries()
            .into_iter()
            .filter(|(k, _)| !PATH_KEYS.contains(k))
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved run configuration (key=value)\n");
        for (k, v) in self.entries() {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let kv = parse_kv(text).map_err(|e| Error::Config(e.to_string()))?;
        // `seed` first so explicit per-key values are not clobbered by it.
        if let Some(seed) = kv.get("seed") {
            self.set("seed", seed)?;
        }
        for (k, v) in kv.iter().filter(|(k, _)| *k != "seed") {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Model configuration for data of the given dimensions.
    pub fn model_config(&self, d_video: usize, d_audio: usize, classes: usize) -> ModelConfig {
        let mut m = ModelConfig {
            d_video,
            d_audio,
            classes,
            hidden: self.shape.hidden,
            fused: self.shape.fused,
            mlp_hidden: self.shape.mlp_hidden,
            ..ModelConfig::default()
        };
        self.train.apply_to(&mut m);
        m
    }

    pub fn suite_config(&self) -> SuiteConfig {
        SuiteConfig {
            seed: self.seed,
            seeds: self.gradcheck_seeds,
            corrupt: self.corrupt.clone(),
        }
    }

    pub fn validate_shape(&self) -> Result<()> {
        let sh = &self.shape;
        if sh.hidden == 0 || sh.fused == 0 || sh.mlp_hidden.contains(&0) {
            return Err(Error::Config("model widths must be positive".into()));
        }
        Ok(())
    }
}
