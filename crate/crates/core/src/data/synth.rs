//! Synthetic bimodal sequence classification data.
//!
//! Every class owns a latent random walk of `steps` points in a small latent
//! space. Video frames embed the walk through a fixed random matrix; audio
//! frames run at `audio_ratio` times the video rate, embed the linearly
//! interpolated walk through a second matrix and are scaled by
//! `audio_informativeness`. Both streams receive independent Gaussian noise.

use crate::data::{AudioLayout, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    /// Video steps per sequence.
    pub steps: usize,
    pub d_video: usize,
    pub d_audio: usize,
    pub noise_sigma: f64,
    pub audio_informativeness: f64,
    pub latent_dim: usize,
    /// Audio frames per video frame.
    pub audio_ratio: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 4,
            samples_per_class: 10,
            steps: 12,
            d_video: 8,
            d_audio: 4,
            noise_sigma: 0.1,
            audio_informativeness: 1.0,
            latent_dim: 4,
            audio_ratio: 4,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("classes", self.classes),
            ("samples_per_class", self.samples_per_class),
            ("steps", self.steps),
            ("d_video", self.d_video),
            ("d_audio", self.d_audio),
            ("latent_dim", self.latent_dim),
            ("audio_ratio", self.audio_ratio),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.audio_informativeness) {
            return Err(Error::Config("audio_informativeness must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| scale * rng.normal()).collect()).unwrap()
}

/// Latent random walk for each class, `[steps×latent]`.
pub(crate) fn class_templates(cfg: &SynthConfig) -> Vec<Tensor> {
    let root = Rng::new(cfg.seed);
    (0..cfg.classes)
        .map(|c| {
            let mut rng = root.split(100 + c as u64);
            let mut walk = Tensor::zeros(&[cfg.steps, cfg.latent_dim]);
            for t in 0..cfg.steps {
                for j in 0..cfg.latent_dim {
                    let prev = if t == 0 { 0.0 } else { walk.at(t - 1, j) };
                    walk.set(t, j, prev + rng.normal());
                }
            }
            walk
        })
        .collect()
}

/// Noise-free video frames of each class (`[steps×d_video]`).
pub fn video_templates(cfg: &SynthConfig) -> Vec<Tensor> {
    let embed = video_embedding(cfg);
    class_templates(cfg)
        .iter()
        .map(|w| crate::tensor::matmul(w, &embed).unwrap())
        .collect()
}

fn video_embedding(cfg: &SynthConfig) -> Tensor {
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    gaussian_matrix(cfg.latent_dim, cfg.d_video, scale, &mut Rng::new(cfg.seed).split(1))
}

fn audio_embedding(cfg: &SynthConfig) -> Tensor {
    let scale = 1.0 / (cfg.latent_dim as f64).sqrt();
    gaussian_matrix(cfg.latent_dim, cfg.d_audio, scale, &mut Rng::new(cfg.seed).split(2))
}

/// Deterministic in `cfg`: records are ordered class-major, `samples_per_class` each.
pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let templates = class_templates(cfg);
    let v_embed = video_embedding(cfg);
    let a_embed = audio_embedding(cfg);
    let t_audio = cfg.steps * cfg.audio_ratio;

    let mut ds = Dataset::new(cfg.classes, AudioLayout::Frames);
    for (c, walk) in templates.iter().enumerate() {
        let video_clean = crate::tensor::matmul(walk, &v_embed)?;
        // Audio latent path: linear interpolation of the walk at the audio rate.
        let mut latent_audio = Tensor::zeros(&[t_audio, cfg.latent_dim]);
        for j in 0..t_audio {
            let pos = j as f64 / cfg.audio_ratio as f64;
            let t0 = (pos.floor() as usize).min(cfg.steps - 1);
            let t1 = (t0 + 1).min(cfg.steps - 1);
            let frac = pos - t0 as f64;
            for k in 0..cfg.latent_dim {
                latent_audio.set(j, k, (1.0 - frac) * walk.at(t0, k) + frac * walk.at(t1, k));
            }
        }
        let audio_clean = crate::tensor::matmul(&latent_audio, &a_embed)?.scale(cfg.audio_informativeness);

        for s in 0..cfg.samples_per_class {
            let mut rng = root.split(10_000 + (c * cfg.samples_per_class + s) as u64);
            let mut video = video_clean.clone();
            video.data_mut().iter_mut().for_each(|v| *v += cfg.noise_sigma * rng.normal());
            let mut audio = audio_clean.clone();
            audio.data_mut().iter_mut().for_each(|v| *v += cfg.noise_sigma * rng.normal());
            ds.records.push(SampleRecord {
                id: format!("c{c:03}-s{s:05}"),
                video,
                audio,
                label: Target::new(c, cfg.classes)?,
            });
        }
    }
    let p = &mut ds.provenance;
    p.insert("source".into(), "synthetic".into());
    for (k, v) in [
        ("synth.classes", cfg.classes.to_string()),
        ("synth.samples_per_class", cfg.samples_per_class.to_string()),
        ("synth.steps", cfg.steps.to_string()),
        ("synth.d_video", cfg.d_video.to_string()),
        ("synth.d_audio", cfg.d_audio.to_string()),
        ("synth.noise_sigma", format!("{:?}", cfg.noise_sigma)),
        ("synth.audio_informativeness", format!("{:?}", cfg.audio_informativeness)),
        ("synth.latent_dim", cfg.latent_dim.to_string()),
        ("synth.audio_ratio", cfg.audio_ratio.to_string()),
        ("synth.seed", cfg.seed.to_string()),
    ] {
        p.insert(k.into(), v);
    }
    Ok(ds)
}
