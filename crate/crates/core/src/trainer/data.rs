//! Training samples, stratified splitting and bootstrap upsampling.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Label from expert double annotation.
    Clean,
    /// Label of the query that retrieved the image.
    Noisy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: ExpressionLabel,
    pub source: Source,
    /// Optional provenance, e.g. `image_id#face_index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
}

impl Sample {
    pub fn new(features: Vec<f64>, label: ExpressionLabel, source: Source) -> Self {
        Sample { features, label, source, key: None }
    }
}

/// Checks that every sample has the same feature length; returns it.
pub fn feature_dim(samples: &[Sample]) -> Result<usize> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    match samples.iter().find(|s| s.features.len() != dim) {
        Some(s) => Err(Error::Dimension { expected: dim, found: s.features.len() }),
        None => Ok(dim),
    }
}

/// Order-sensitive digest of features and labels; identifies a test set.
pub fn dataset_hash(samples: &[Sample]) -> String {
    let mut hasher = Sha256::new();
    for s in samples {
        hasher.update((s.label.code() as u8).to_le_bytes());
        hasher.update((s.features.len() as u64).to_le_bytes());
        for v in &s.features {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let mut out = hex::encode(hasher.finalize());
    out.truncate(16);
    out
}

pub fn label_counts(samples: &[Sample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for s in samples {
        counts[s.label.code()] += 1;
    }
    counts
}

/// Number of test samples taken from a label with `n` samples.
pub fn test_count(n: usize, fraction: f64) -> usize {
    // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
    ((fraction * n as f64) + 1e-9).floor() as usize
}

/// Train and test index sets, each in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-label random partition: `floor(fraction * n_label)` samples of each
/// label go to the test side.
pub fn stratified_split_indices(labels: &[ExpressionLabel], test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Invalid(format!("test fraction must be in (0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; labels.len()];
    for label in ExpressionLabel::ALL {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        idx.shuffle(&mut rng);
        for &i in &idx[..test_count(idx.len(), test_fraction)] {
            is_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| is_test[i]);
    Ok(SplitIndices { train, test })
}

pub fn stratified_split(samples: &[Sample], test_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let labels: Vec<_> = samples.iter().map(|s| s.label).collect();
    let split = stratified_split_indices(&labels, test_fraction, seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((pick(&split.train), pick(&split.test)))
}

/// Target size for bootstrap upsampling: half the noisy pool, never shrinking.
pub fn upsample_target(clean_len: usize, noisy_count: usize) -> usize {
    clean_len.max(noisy_count / 2)
}

/// Indices of the enlarged clean set: every original index once, then draws
/// with replacement up to [`upsample_target`].
pub fn upsample_indices<R: Rng + ?Sized>(clean_len: usize, noisy_count: usize, rng: &mut R) -> Vec<usize> {
    let target = upsample_target(clean_len, noisy_count);
    let mut idx: Vec<usize> = (0..clean_len).collect();
    if clean_len == 0 {
        return idx;
    }
    while idx.len() < target {
        idx.push(rng.random_range(0..clean_len));
    }
    idx
}

pub fn upsample_clean(clean: &[Sample], noisy_count: usize, seed: u64) -> Result<Vec<Sample>> {
    if clean.is_empty() {
        return Err(Error::Invalid("cannot upsample an empty clean set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(upsample_indices(clean.len(), noisy_count, &mut rng)
        .into_iter()
        .map(|i| clean[i].clone())
        .collect())
}
