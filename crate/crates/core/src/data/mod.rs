//! Labeled bimodal sequences, synthetic generation, splitting and the on-disk container.

mod container;
mod split;
mod synth;

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::{SampleInput, Target};
use crate::tensor::Tensor;

pub use container::{load, load_bytes, save, to_bytes, CONTAINER_VERSION};
pub use split::split;
pub use synth::{generate, video_templates, SynthConfig};

/// What the audio tensor of every record in a dataset holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AudioLayout {
    /// Raw mono samples, `[N×1]`.
    Waveform,
    /// Per-frame features at the audio frame rate, `[T_a×d_a]`.
    Frames,
    /// Groups of `ratio` audio frames concatenated per video step, `[T×(ratio·d_a)]`.
    Aligned { ratio: usize },
}

impl fmt::Display for AudioLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AudioLayout::Waveform => f.write_str("waveform"),
            AudioLayout::Frames => f.write_str("frames"),
            AudioLayout::Aligned { ratio } => write!(f, "aligned:{ratio}"),
        }
    }
}

impl FromStr for AudioLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "waveform" => Ok(AudioLayout::Waveform),
            "frames" => Ok(AudioLayout::Frames),
            other => other
                .strip_prefix("aligned:")
                .and_then(|r| r.parse().ok())
                .filter(|&r: &usize| r > 0)
                .map(|ratio| AudioLayout::Aligned { ratio })
                .ok_or_else(|| Error::Format(format!("unknown audio layout {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `[T×d_v]`
    pub video: Tensor,
    pub audio: Tensor,
    pub label: Target,
}

impl SampleRecord {
    pub fn steps(&self) -> usize {
        self.video.rows()
    }

    pub fn input(&self) -> SampleInput<'_> {
        SampleInput {
            video: &self.video,
            audio: &self.audio,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: usize,
    pub audio_layout: AudioLayout,
    pub records: Vec<SampleRecord>,
    /// Free-form `key=value` history of how the data was produced.
    pub provenance: IndexMap<String, String>,
}

impl Dataset {
    pub fn new(classes: usize, audio_layout: AudioLayout) -> Self {
        Dataset {
            classes,
            audio_layout,
            records: Vec::new(),
            provenance: IndexMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(d_video, d_audio)` taken from the first record; zero when empty.
    pub fn dims(&self) -> (usize, usize) {
        self.records
            .first()
            .map_or((0, 0), |r| (r.video.cols(), r.audio.cols()))
    }

    pub fn targets(&self) -> Vec<Target> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for r in &self.records {
            counts[r.label.class_id] += 1;
        }
        counts
    }

    /// Copy sharing metadata but holding `records`.
    pub fn with_records(&self, records: Vec<SampleRecord>) -> Dataset {
        Dataset {
            classes: self.classes,
            audio_layout: self.audio_layout,
            records,
            provenance: self.provenance.clone(),
        }
    }

    /// Checks labels, shapes and layout consistency across all records.
    pub fn validate(&self) -> Result<()> {
        let (dv, da) = self.dims();
        for r in &self.records {
            if r.label.classes != self.classes || r.label.class_id >= self.classes {
                return Err(Error::Format(format!("record {} has an invalid label", r.id)));
            }
            if r.video.shape().len() != 2 || r.audio.shape().len() != 2 || r.video.rows() == 0 {
                return Err(Error::Format(format!("record {} has malformed tensors", r.id)));
            }
            if r.video.cols() != dv || r.audio.cols() != da {
                return Err(Error::Format(format!("record {} has inconsistent feature dims", r.id)));
            }
            match self.audio_layout {
                AudioLayout::Aligned { .. } if r.audio.rows() != r.video.rows() => {
                    return Err(Error::Format(format!("record {} is flagged aligned but step counts differ", r.id)));
                }
                AudioLayout::Waveform if r.audio.cols() != 1 => {
                    return Err(Error::Format(format!("record {} waveform must be a single column", r.id)));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
