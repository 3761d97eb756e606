//! Dataset container: `<name>.manifest` (key=value text) plus `<name>.bin`.
//!
//! The blob is a concatenation of records, each
//! `id_len u32 | id utf-8 | label u32 | video array | audio array`, where an
//! array is `rank u32 | dims u32 × rank | f64 × product(dims)`, all
//! little-endian. The manifest declares the record count and the exact blob
//! size; the loader rejects any disagreement.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;

use crate::data::{AudioLayout, Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::model::Target;
use crate::params::{atomic_write, parse_kv, write_u32, Reader};
use crate::tensor::Tensor;

pub const CONTAINER_VERSION: u32 = 1;
const FORMAT_NAME: &str = "amlstm-dataset";

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = base.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".manifest"), with(".bin"))
}

fn write_array(out: &mut Vec<u8>, t: &Tensor) {
    write_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        write_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_array(r: &mut Reader<'_>) -> Result<Tensor> {
    let rank = r.u32()? as usize;
    if rank > 4 {
        return Err(Error::Format(format!("implausible array rank {rank}")));
    }
    let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("array size overflow".into()))?;
    let raw = r.take(n)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

/// Serialized `(manifest, blob)`.
pub fn to_bytes(ds: &Dataset) -> Result<(String, Vec<u8>)> {
    ds.validate()?;
    let mut blob = Vec::new();
    for r in &ds.records {
        write_u32(&mut blob, r.id.len() as u32);
        blob.extend_from_slice(r.id.as_bytes());
        write_u32(&mut blob, r.label.class_id as u32);
        write_array(&mut blob, &r.video);
        write_array(&mut blob, &r.audio);
    }
    let (dv, da) = ds.dims();
    let mut m = String::new();
    let mut kv = |k: &str, v: String| {
        m.push_str(k);
        m.push('=');
        m.push_str(&v);
        m.push('\n');
    };
    kv("format", FORMAT_NAME.into());
    kv("version", CONTAINER_VERSION.to_string());
    kv("records", ds.len().to_string());
    kv("classes", ds.classes.to_string());
    kv("d_video", dv.to_string());
    kv("d_audio", da.to_string());
    kv("audio_layout", ds.audio_layout.to_string());
    kv("payload_bytes", blob.len().to_string());
    for (k, v) in &ds.provenance {
        if v.contains('\n') {
            return Err(Error::Format(format!("provenance value for {k} spans lines")));
        }
        kv(&format!("provenance.{k}"), v.clone());
    }
    Ok((m, blob))
}

pub fn load_bytes(manifest: &str, blob: &[u8]) -> Result<Dataset> {
    let m = parse_kv(manifest)?;
    let get = |k: &str| m.get(k).ok_or_else(|| Error::Format(format!("manifest lacks {k}")));
    let num = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::Format(format!("manifest field {k} is malformed")))
    };
    if get("format")? != FORMAT_NAME {
        return Err(Error::Format("not a dataset manifest".into()));
    }
    let version = num("version")?;
    if version != CONTAINER_VERSION as usize {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let declared = num("payload_bytes")?;
    if declared != blob.len() {
        return Err(Error::Format(format!(
            "manifest declares {declared} payload bytes, blob has {}",
            blob.len()
        )));
    }
    let count = num("records")?;
    let classes = num("classes")?;
    let layout: AudioLayout = get("audio_layout")?.parse()?;
    let mut provenance = IndexMap::new();
    for (k, v) in &m {
        if let Some(rest) = k.strip_prefix("provenance.") {
            provenance.insert(rest.to_string(), v.clone());
        }
    }

    let mut r = Reader::new(blob);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let id_len = r.u32()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| Error::Format("record id is not utf-8".into()))?
            .to_string();
        let label = r.u32()? as usize;
        let video = read_array(&mut r)?;
        let audio = read_array(&mut r)?;
        records.push(SampleRecord {
            id,
            video,
            audio,
            label: Target::new(label, classes).map_err(|e| Error::Format(e.to_string()))?,
        });
    }
    if !r.done() {
        return Err(Error::Format(format!("{} unread bytes after {count} records", r.remaining())));
    }
    let ds = Dataset {
        classes,
        audio_layout: layout,
        records,
        provenance,
    };
    ds.validate()?;
    let (dv, da) = ds.dims();
    if !ds.is_empty() && (num("d_video")? != dv || num("d_audio")? != da) {
        return Err(Error::Format("manifest dims disagree with records".into()));
    }
    Ok(ds)
}

/// Writes `<base>.manifest` and `<base>.bin` atomically (blob first).
pub fn save(ds: &Dataset, base: &Path) -> Result<()> {
    let (manifest, blob) = to_bytes(ds)?;
    let (mp, bp) = paths(base);
    atomic_write(&bp, &blob)?;
    atomic_write(&mp, manifest.as_bytes())
}

pub fn load(base: &Path) -> Result<Dataset> {
    let (mp, bp) = paths(base);
    let manifest = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let blob = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    load_bytes(&manifest, &blob)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};

    #[test]
    fn round_trip_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig { samples_per_class: 3, ..Default::default() }).unwrap();
        let base = dir.path().join("data");
        save(&ds, &base).unwrap();
        assert_eq!(load(&base).unwrap(), ds);
    }

    #[test]
    fn empty_dataset() {
        let ds = Dataset::new(3, AudioLayout::Frames);
        let (m, b) = to_bytes(&ds).unwrap();
        assert!(b.is_empty());
        assert_eq!(load_bytes(&m, &b).unwrap(), ds);
    }

    #[test]
    fn corrupted_inputs_are_errors() {
        let ds = generate(&SynthConfig { samples_per_class: 2, ..Default::default() }).unwrap();
        let (m, b) = to_bytes(&ds).unwrap();
        // Truncated blob.
        assert!(load_bytes(&m, &b[..b.len() - 3]).is_err());
        // Corrupted id-length field of the first record.
        let mut bad = b.clone();
        bad[0..4].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(load_bytes(&m, &bad).is_err());
        // Corrupted array dimension.
        let mut bad = b.clone();
        let dim_at = 4 + ds.records[0].id.len() + 4 + 4;
        bad[dim_at..dim_at + 4].copy_from_slice(&7u32.to_le_bytes());
        assert!(load_bytes(&m, &bad).is_err());
        // Version and format mismatches.
        assert!(load_bytes(&m.replace("version=1", "version=9"), &b).is_err());
        assert!(load_bytes(&m.replace("amlstm-dataset", "other"), &b).is_err());
        // Declared size disagreeing with the blob.
        let mut longer = b.clone();
        longer.push(0);
        assert!(load_bytes(&m, &longer).is_err());
    }

    #[test]
    fn record_layout_is_exact() {
        let mut ds = Dataset::new(2, AudioLayout::Frames);
        ds.records.push(SampleRecord {
            id: "a".into(),
            video: Tensor::matrix(1, 1, vec![2.0]).unwrap(),
            audio: Tensor::matrix(1, 1, vec![-1.0]).unwrap(),
            label: Target::new(1, 2).unwrap(),
        });
        let (_, b) = to_bytes(&ds).unwrap();
        let mut want = Vec::new();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.push(b'a');
        want.extend_from_slice(&1u32.to_le_bytes());
        for v in [2.0f64, -1.0] {
            want.extend_from_slice(&2u32.to_le_bytes());
            want.extend_from_slice(&1u32.to_le_bytes());
            want.extend_from_slice(&1u32.to_le_bytes());
            want.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(b, want);
    }
}
