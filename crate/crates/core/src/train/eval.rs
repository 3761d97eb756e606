//! Accuracy and confusion under the two test protocols.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{FusionModel, ModelOutput, SampleInput};
use crate::tensor::Tensor;

/// Rows scored per forward call during evaluation.
pub const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    #[default]
    AudioVisual,
    /// Audio stream replaced by all-zero frames of the same shape.
    VideoOnly,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::AudioVisual => "audio-visual",
            EvalMode::VideoOnly => "video-only",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio-visual" | "av" => Ok(EvalMode::AudioVisual),
            "video-only" => Ok(EvalMode::VideoOnly),
            other => Err(Error::Config(format!("unknown eval mode {other:?}"))),
        }
    }
}

/// Anything that maps a batch to per-head class scores without side effects.
pub trait Classifier {
    fn score(&self, batch: &[SampleInput<'_>]) -> Result<ModelOutput>;
}

impl Classifier for FusionModel {
    fn score(&self, batch: &[SampleInput<'_>]) -> Result<ModelOutput> {
        self.predict(batch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub mode: EvalMode,
    pub samples: usize,
    pub accuracy: f64,
    /// Accuracy of the video auxiliary head alone.
    pub aux_v_accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn per_class_accuracy(&self) -> Vec<f64> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                if n == 0 { f64::NAN } else { row[c] as f64 / n as f64 }
            })
            .collect()
    }
}

/// Scores every record in chunks; returns the concatenated outputs.
pub fn score_dataset(model: &dyn Classifier, data: &Dataset, mode: EvalMode) -> Result<ModelOutput> {
    let zeros: Vec<Tensor> = match mode {
        EvalMode::AudioVisual => Vec::new(),
        EvalMode::VideoOnly => data.records.iter().map(|r| Tensor::zeros(r.audio.shape())).collect(),
    };
    let mut rows: [Vec<f64>; 3] = Default::default();
    let mut widths = [0usize; 3];
    for (c, chunk) in data.records.chunks(EVAL_CHUNK).enumerate() {
        let batch: Vec<SampleInput<'_>> = chunk
            .iter()
            .enumerate()
            .map(|(i, r)| SampleInput {
                video: &r.video,
                audio: match mode {
                    EvalMode::AudioVisual => &r.audio,
                    EvalMode::VideoOnly => &zeros[c * EVAL_CHUNK + i],
                },
            })
            .collect();
        let out = model.score(&batch)?;
        for (k, s) in [&out.main_scores, &out.aux_v_scores, &out.aux_a_scores].into_iter().enumerate() {
            if s.rows() != chunk.len() {
                return Err(Error::dim("classifier output rows", &[chunk.len()], s.shape()));
            }
            widths[k] = s.cols();
            rows[k].extend_from_slice(s.data());
        }
    }
    let n = data.len();
    let [m, v, a] = rows;
    Ok(ModelOutput {
        main_scores: Tensor::matrix(n, widths[0], m)?,
        aux_v_scores: Tensor::matrix(n, widths[1], v)?,
        aux_a_scores: Tensor::matrix(n, widths[2], a)?,
    })
}

pub fn evaluate(model: &dyn Classifier, data: &Dataset, mode: EvalMode) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate an empty dataset".into()));
    }
    let out = score_dataset(model, data, mode)?;
    let c = data.classes;
    if out.main_scores.cols() != c || out.aux_v_scores.cols() != c {
        return Err(Error::dim("evaluate classes", &[c], out.main_scores.shape()));
    }
    let mut confusion = vec![vec![0usize; c]; c];
    let (mut hits, mut aux_hits) = (0usize, 0usize);
    for (i, r) in data.records.iter().enumerate() {
        let pred = Tensor::argmax(out.main_scores.row(i));
        let truth = r.label.class_id;
        confusion[truth][pred] += 1;
        hits += (pred == truth) as usize;
        aux_hits += (Tensor::argmax(out.aux_v_scores.row(i)) == truth) as usize;
    }
    let n = data.len() as f64;
    Ok(EvalReport {
        mode,
        samples: data.len(),
        accuracy: hits as f64 / n,
        aux_v_accuracy: aux_hits as f64 / n,
        confusion,
    })
}
