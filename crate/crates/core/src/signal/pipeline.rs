//! Raw container → model-ready train/test containers.
//!
//! Stages, in order: stratified split, spectrogram (waveform audio only),
//! PCA whitening of each stream, centering, 4:1 alignment, and optional
//! shift augmentation of the training split. Every statistic is fit on the
//! training split and applied frozen to the test split.

use crate::data::{split, AudioLayout, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::signal::{align_streams, augment_dataset, apply_center, column_mean, pca_whiten_fit, spectrogram, PcaModel, SpectrogramConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub spectrogram: SpectrogramConfig,
    /// 1.0 keeps every record for training and leaves the test split empty.
    pub train_fraction: f64,
    /// Whitened components kept per stream; clamped to the feature dim, 0 disables PCA.
    pub video_components: usize,
    pub audio_components: usize,
    pub ratio: usize,
    pub augment: bool,
    pub max_shift: usize,
    pub seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            spectrogram: SpectrogramConfig::default(),
            train_fraction: 0.8,
            video_components: 100,
            audio_components: 50,
            ratio: 4,
            augment: false,
            max_shift: 10,
            seed: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        self.spectrogram.validate()?;
        if self.ratio == 0 {
            return Err(Error::Config("ratio must be positive".into()));
        }
        if self.augment && self.max_shift == 0 {
            return Err(Error::Config("max_shift must be positive when augmenting".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

fn stack(records: &[SampleRecord], pick: impl Fn(&SampleRecord) -> &Tensor) -> Result<Tensor> {
    let cols = records.first().map_or(0, |r| pick(r).cols());
    let mut data = Vec::new();
    for r in records {
        data.extend_from_slice(pick(r).data());
    }
    Tensor::matrix(data.len() / cols.max(1), cols, data)
}

/// Fits whitening (if requested) and centering on the stacked training frames.
struct StreamTransform {
    pca: Option<PcaModel>,
    mean: Vec<f64>,
}

impl StreamTransform {
    fn fit(frames: &Tensor, components: usize, stream: &str) -> Result<Self> {
        let k = components.min(frames.cols());
        let pca = if k == 0 {
            None
        } else {
            Some(pca_whiten_fit(frames, k).map_err(|e| Error::Config(format!("{stream} pca: {e}")))?)
        };
        let projected = match &pca {
            Some(p) => p.transform(frames)?,
            None => frames.clone(),
        };
        Ok(StreamTransform {
            mean: column_mean(&projected),
            pca,
        })
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let projected = match &self.pca {
            Some(p) => p.transform(x)?,
            None => x.clone(),
        };
        Ok(apply_center(&projected, &self.mean))
    }

    fn out_dim(&self) -> usize {
        self.mean.len()
    }
}

fn to_frames(data: &Dataset, cfg: &SpectrogramConfig) -> Result<Dataset> {
    let records = data
        .records
        .iter()
        .map(|r| {
            Ok(SampleRecord {
                audio: spectrogram(r.audio.data(), cfg)?,
                ..r.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = data.with_records(records);
    out.audio_layout = AudioLayout::Frames;
    Ok(out)
}

pub fn preprocess(raw: &Dataset, cfg: &PreprocessConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    raw.validate()?;
    if matches!(raw.audio_layout, AudioLayout::Aligned { .. }) {
        return Err(Error::Config("input is already aligned".into()));
    }
    let (mut train, mut test) = if cfg.train_fraction == 1.0 {
        (raw.clone(), raw.with_records(Vec::new()))
    } else {
        split(raw, cfg.train_fraction, cfg.seed)?
    };
    let waveform = raw.audio_layout == AudioLayout::Waveform;
    if waveform {
        train = to_frames(&train, &cfg.spectrogram)?;
        test = to_frames(&test, &cfg.spectrogram)?;
    }

    let video_tf = StreamTransform::fit(&stack(&train.records, |r| &r.video)?, cfg.video_components, "video")?;
    let audio_tf = StreamTransform::fit(&stack(&train.records, |r| &r.audio)?, cfg.audio_components, "audio")?;

    let layout = AudioLayout::Aligned { ratio: cfg.ratio };
    let finish = |ds: &Dataset| -> Result<Dataset> {
        let records = ds
            .records
            .iter()
            .map(|r| {
                let (video, audio) = align_streams(&video_tf.apply(&r.video)?, &audio_tf.apply(&r.audio)?, cfg.ratio)?;
                Ok(SampleRecord {
                    id: r.id.clone(),
                    video,
                    audio,
                    label: r.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = ds.with_records(records);
        out.audio_layout = layout;
        Ok(out)
    };
    let mut train = finish(&train)?;
    let mut test = finish(&test)?;
    let mut shift_note = "off".to_string();
    if cfg.augment {
        let before = train.len();
        train = augment_dataset(&train, cfg.max_shift, &Rng::new(cfg.seed).split(0x5348_4946_54))?.0;
        shift_note = format!("max_shift={} records {before}->{}", cfg.max_shift, train.len());
    }

    let s = &cfg.spectrogram;
    let stages = [
        ("prep.seed", cfg.seed.to_string()),
        ("prep.split.train_fraction", format!("{:?}", cfg.train_fraction)),
        (
            "prep.spectrogram",
            if waveform {
                format!(
                    "sample_rate={:?} window_ms={:?} hop_ms={:?} spectral_points={} log_compress={}",
                    s.sample_rate, s.window_ms, s.hop_ms, s.spectral_points, s.log_compress
                )
            } else {
                "skipped (frame input)".into()
            },
        ),
        ("prep.video_pca", pca_note(&video_tf)),
        ("prep.audio_pca", pca_note(&audio_tf)),
        ("prep.center", format!("train mean, video {} dims, audio {} dims", video_tf.out_dim(), audio_tf.out_dim())),
        ("prep.align", format!("ratio={}", cfg.ratio)),
        ("prep.augment", shift_note),
    ];
    for (part, ds) in [("train", &mut train), ("test", &mut test)] {
        for (k, v) in &stages {
            ds.provenance.insert((*k).into(), v.clone());
        }
        ds.provenance.insert("prep.part".into(), part.into());
        ds.validate()?;
    }
    Ok((train, test))
}

fn pca_note(tf: &StreamTransform) -> String {
    match &tf.pca {
        Some(p) => format!("whitened k={} of d={}", p.output_dim(), p.input_dim()),
        None => "disabled".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};

    #[test]
    fn synthetic_pipeline_shapes_and_whitening() {
        let raw = generate(&SynthConfig::default()).unwrap();
        let (train, test) = preprocess(&raw, &PreprocessConfig::default()).unwrap();
        assert_eq!((train.len(), test.len()), (32, 8));
        assert_eq!(train.dims(), (8, 16));
        assert_eq!(train.audio_layout, AudioLayout::Aligned { ratio: 4 });
        for r in train.records.iter().chain(&test.records) {
            assert_eq!(r.audio.rows(), r.video.rows());
        }
        // Whitened + centered training video frames have identity covariance.
        let v = stack(&train.records, |r| &r.video).unwrap();
        let mean = column_mean(&v);
        assert!(mean.iter().all(|m| m.abs() < 1e-10));
        let n = v.rows() as f64;
        for i in 0..8 {
            for j in 0..8 {
                let c: f64 = (0..v.rows()).map(|r| v.at(r, i) * v.at(r, j)).sum::<f64>() / (n - 1.0);
                assert!((c - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn augmentation_doubles_training_split_only() {
        let raw = generate(&SynthConfig::default()).unwrap();
        let cfg = PreprocessConfig { augment: true, ..Default::default() };
        let (train, test) = preprocess(&raw, &cfg).unwrap();
        assert_eq!((train.len(), test.len()), (64, 8));
        assert_eq!(preprocess(&raw, &cfg).unwrap(), (train, test));
    }

    #[test]
    fn waveform_input_goes_through_spectrogram() {
        let mut raw = Dataset::new(2, AudioLayout::Waveform);
        let mut rng = Rng::new(4);
        for i in 0..6 {
            let t = 5;
            let video = Tensor::matrix(t, 3, (0..3 * t).map(|_| rng.normal()).collect()).unwrap();
            let audio = Tensor::matrix(800, 1, (0..800).map(|_| rng.normal()).collect()).unwrap();
            raw.records.push(SampleRecord {
                id: format!("w{i}"),
                video,
                audio,
                label: crate::model::Target::new(i % 2, 2).unwrap(),
            });
        }
        let cfg = PreprocessConfig {
            spectrogram: SpectrogramConfig { sample_rate: 8000.0, spectral_points: 129, ..Default::default() },
            audio_components: 3,
            video_components: 0,
            train_fraction: 0.5,
            ..Default::default()
        };
        let (train, _) = preprocess(&raw, &cfg).unwrap();
        // 800 samples at 8 kHz: win 160, hop 80 → 9 frames; 5 video steps need 20.
        assert_eq!(train.dims(), (3, 12));
        assert!(train.provenance["prep.spectrogram"].contains("window_ms=20.0"));
    }

    #[test]
    fn full_training_split() {
        let raw = generate(&SynthConfig::default()).unwrap();
        let (train, test) = preprocess(&raw, &PreprocessConfig { train_fraction: 1.0, ..Default::default() }).unwrap();
        assert_eq!((train.len(), test.len()), (40, 0));
        assert_eq!(test.audio_layout, AudioLayout::Aligned { ratio: 4 });
    }

    #[test]
    fn rejects_aligned_input() {
        let mut raw = generate(&SynthConfig::default()).unwrap();
        raw.audio_layout = AudioLayout::Aligned { ratio: 4 };
        assert!(preprocess(&raw, &PreprocessConfig::default()).is_err());
    }
}
