//! Audio-to-video frame alignment and temporal shift augmentation.

use crate::data::{AudioLayout, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Pads (with zero frames) or truncates `audio` at the tail to `ratio·T_v`
/// frames, then concatenates each run of `ratio` frames into one step.
pub fn align_streams(video: &Tensor, audio: &Tensor, ratio: usize) -> Result<(Tensor, Tensor)> {
    if ratio == 0 {
        return Err(Error::Config("alignment ratio must be positive".into()));
    }
    if video.shape().len() != 2 || audio.shape().len() != 2 || video.rows() == 0 || audio.rows() == 0 {
        return Err(Error::dim("align_streams", video.shape(), audio.shape()));
    }
    let (t, d_a) = (video.rows(), audio.cols());
    let mut out = Tensor::zeros(&[t, ratio * d_a]);
    let usable = audio.rows().min(ratio * t);
    for j in 0..usable {
        let (step, slot) = (j / ratio, j % ratio);
        out.row_mut(step)[slot * d_a..(slot + 1) * d_a].copy_from_slice(audio.row(j));
    }
    Ok((video.clone(), out))
}

/// Shifts rows by `k` (positive moves content later), zero-filling vacated rows.
pub fn shift_rows(x: &Tensor, k: i64) -> Tensor {
    let t = x.rows() as i64;
    let mut out = Tensor::zeros(x.shape());
    for dst in 0..t {
        let src = dst - k;
        if (0..t).contains(&src) {
            out.row_mut(dst as usize).copy_from_slice(x.row(src as usize));
        }
    }
    out
}

/// Applies the same shift `k` to both streams of an aligned record.
pub fn shift_record(sample: &SampleRecord, k: i64) -> SampleRecord {
    SampleRecord {
        id: format!("{}+shift{k}", sample.id),
        video: shift_rows(&sample.video, k),
        audio: shift_rows(&sample.audio, k),
        label: sample.label,
    }
}

/// Draws `k` uniformly from `[−max_shift, max_shift]` without zero; returns the
/// shifted record and `k`.
pub fn augment_shift(sample: &SampleRecord, max_shift: usize, rng: &mut Rng) -> Result<(SampleRecord, i64)> {
    if max_shift == 0 {
        return Err(Error::Config("max_shift must be positive".into()));
    }
    if sample.audio.rows() != sample.video.rows() {
        return Err(Error::Config(format!("record {} must be aligned before shifting", sample.id)));
    }
    if sample.steps() <= max_shift {
        return Err(Error::Config(format!(
            "record {} has {} steps, needs more than max_shift {max_shift}",
            sample.id,
            sample.steps()
        )));
    }
    let m = max_shift as i64;
    let mut k = rng.int_inclusive(-m, m - 1);
    if k >= 0 {
        k += 1;
    }
    Ok((shift_record(sample, k), k))
}

/// Originals followed by one shifted copy of each (2N records). Record `i`
/// draws its shift from `rng.split(i)`.
pub fn augment_dataset(data: &Dataset, max_shift: usize, rng: &Rng) -> Result<(Dataset, Vec<i64>)> {
    if !matches!(data.audio_layout, AudioLayout::Aligned { .. }) {
        return Err(Error::Config("augmentation requires aligned data".into()));
    }
    let mut records = data.records.clone();
    let mut shifts = Vec::with_capacity(data.len());
    for (i, r) in data.records.iter().enumerate() {
        let (shifted, k) = augment_shift(r, max_shift, &mut rng.split(i as u64))?;
        records.push(shifted);
        shifts.push(k);
    }
    Ok((data.with_records(records), shifts))
}
