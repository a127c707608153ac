//! Turning catalog records into training data.
//!
//! Clean pool: records whose resolved label is an expression, split per label
//! into train and test. Noisy pool: gate-kept records that were never
//! annotated, labeled by their query and always on the train side. Every
//! landmarked face of a record becomes its own sample keyed
//! `image_id#face_index`.

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageRecord, Split};
use crate::error::{Error, Result};
use crate::facegate::{self, CropOptions};
use crate::noisemodel::{estimate_from_pairs, NoiseMatrix};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};
use crate::trainer::{stratified_split_indices, Sample, Source};

pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

fn clean_label(r: &ImageRecord) -> Option<ExpressionLabel> {
    r.resolved_expression().filter(|_| r.is_kept())
}

fn noisy_label(r: &ImageRecord) -> Option<ExpressionLabel> {
    (r.is_kept() && r.annotations.is_empty()).then(|| r.intended_emotion()).flatten()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub clean_train: [usize; NUM_CLASSES],
    pub clean_test: [usize; NUM_CLASSES],
    pub noisy_train: [usize; NUM_CLASSES],
    pub writes: usize,
}

/// Assigns train/test tags. Deterministic in `seed` and the record set.
pub fn assign_splits(catalog: &mut Catalog, test_fraction: f64, seed: u64) -> Result<SplitReport> {
    let mut clean: Vec<(String, ExpressionLabel)> = catalog
        .records()
        .iter()
        .filter_map(|r| clean_label(r).map(|l| (r.image_id.clone(), l)))
        .collect();
    clean.sort();
    let labels: Vec<_> = clean.iter().map(|(_, l)| *l).collect();
    let split = stratified_split_indices(&labels, test_fraction, seed)?;
    let mut target: std::collections::HashMap<&str, Split> = std::collections::HashMap::new();
    let mut report = SplitReport::default();
    for &i in &split.train {
        target.insert(&clean[i].0, Split::Train);
        report.clean_train[clean[i].1.code()] += 1;
    }
    for &i in &split.test {
        target.insert(&clean[i].0, Split::Test);
        report.clean_test[clean[i].1.code()] += 1;
    }
    let mut updates = Vec::new();
    for r in catalog.records() {
        let split = match target.get(r.image_id.as_str()) {
            Some(s) => *s,
            None => match noisy_label(r) {
                Some(l) => {
                    report.noisy_train[l.code()] += 1;
                    Split::Train
                }
                None => Split::Unassigned,
            },
        };
        if r.split != split {
            updates.push((r.image_id.clone(), split));
        }
    }
    for (id, split) in updates {
        report.writes += catalog.update(&id, |r| {
            r.split = split;
            Ok(())
        })? as usize;
    }
    Ok(report)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Datasets {
    pub clean_train: Vec<Sample>,
    pub clean_test: Vec<Sample>,
    pub noisy_train: Vec<Sample>,
}

/// Crops every landmarked face of every split-tagged record.
pub fn build_datasets(catalog: &Catalog, crop: &CropOptions) -> Result<Datasets> {
    let mut out = Datasets::default();
    for r in catalog.records() {
        let (label, source, bucket) = match (r.split, clean_label(r), noisy_label(r)) {
            (Split::Unassigned, _, _) => continue,
            (Split::Train, Some(l), _) => (l, Source::Clean, &mut out.clean_train),
            (Split::Test, Some(l), _) => (l, Source::Clean, &mut out.clean_test),
            (Split::Train, None, Some(l)) => (l, Source::Noisy, &mut out.noisy_train),
            (split, ..) => {
                return Err(Error::Invalid(format!("{} tagged {split:?} without a usable label", r.image_id)))
            }
        };
        let img = facegate::decode(&catalog.read_blob(r)?)?;
        for (i, face) in r.faces.iter().enumerate().filter(|(_, f)| f.has_landmarks()) {
            let tensor = facegate::register_crop(&img, face, crop)?;
            let mut sample = Sample::new(tensor.data, label, source);
            sample.key = Some(format!("{}#{i}", r.image_id));
            bucket.push(sample);
        }
    }
    Ok(out)
}

/// Noise matrix from records that carry both an expert label and a query
/// label: true = resolved expression, noisy = intended emotion.
pub fn estimate_noise(records: &[ImageRecord], smoothing: f64) -> Result<NoiseMatrix> {
    let pairs: Vec<_> = records
        .iter()
        .filter_map(|r| Some((r.resolved_expression()?, r.intended_emotion()?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NotReady("no records with both a resolved and an intended label".into()));
    }
    estimate_from_pairs(&pairs, smoothing)
}
