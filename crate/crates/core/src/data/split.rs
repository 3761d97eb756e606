use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Stratified split: each class contributes `round(fraction·n_c)` records to
/// the training side (clamped to leave at least one on each side). Record
/// order within each side follows the input order.
pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes];
    for (i, r) in data.records.iter().enumerate() {
        by_class[r.label.class_id].push(i);
    }
    let root = Rng::new(seed);
    let mut in_train = vec![false; data.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Config(format!("class {c} has fewer than 2 samples and cannot be split")));
        }
        root.split(c as u64).shuffle(idx);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, keep) in data.records.iter().zip(in_train) {
        if keep {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((data.with_records(train), data.with_records(test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthConfig};
    use std::collections::HashSet;

    #[test]
    fn stratified_counts_and_partition() {
        let ds = generate(&SynthConfig::default()).unwrap();
        let (train, test) = split(&ds, 0.8, 3).unwrap();
        assert_eq!(train.class_counts(), vec![8; 4]);
        assert_eq!(test.class_counts(), vec![2; 4]);
        let a: HashSet<_> = train.records.iter().map(|r| r.id.clone()).collect();
        let b: HashSet<_> = test.records.iter().map(|r| r.id.clone()).collect();
        assert!(a.is_disjoint(&b));
        let mut all: Vec<_> = a.union(&b).cloned().collect();
        all.sort();
        let mut orig: Vec<_> = ds.records.iter().map(|r| r.id.clone()).collect();
        orig.sort();
        assert_eq!(all, orig);
        assert_eq!(split(&ds, 0.8, 3).unwrap(), (train, test));
    }

    #[test]
    fn rejects_tiny_classes_and_bad_fractions() {
        let ds = generate(&SynthConfig { samples_per_class: 1, ..Default::default() }).unwrap();
        assert!(split(&ds, 0.5, 0).is_err());
        let ds = generate(&SynthConfig::default()).unwrap();
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 0.0, 0).is_err());
    }
}
