use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{validate_annotator, AnnotationBatch, AnnotationResponse};
use crate::catalog::{Catalog, ImageRecord};
use crate::error::{Error, Result};
use crate::facegate::{self, BoundingBox, CropOptions, FaceInstance};
use crate::taxonomy::AnnotationCategory;

pub const LEASE_TIMEOUT_MINUTES: i64 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryOption {
    pub code: usize,
    pub category: AnnotationCategory,
    pub label: String,
    pub shortcut: char,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub annotator: String,
    pub completed: usize,
    pub total: usize,
}

/// What an annotator is shown. Carries nothing about the query that found
/// the image and nothing about other annotators.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub image_id: String,
    pub crop_url: String,
    pub categories: Vec<CategoryOption>,
    pub progress: Progress,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubmitOutcome {
    Recorded,
    /// The annotator changed their choice before asking for the next task.
    Updated,
    Unchanged,
}

#[derive(Debug, Clone)]
struct Lease {
    image_id: String,
    issued_at: DateTime<Utc>,
}

/// Task issuing and response collection over one annotation batch.
///
/// Each annotator holds at most one lease. Asking for the next task ends the
/// current one, after which its response can no longer change. Annotators
/// are registered implicitly on first contact.
#[derive(Debug)]
pub struct Desk {
    catalog: Catalog,
    batch: AnnotationBatch,
    members: HashSet<String>,
    leases: HashMap<String, Lease>,
    lease_timeout: Duration,
}

impl Desk {
    pub fn new(catalog: Catalog, batch: AnnotationBatch) -> Result<Self> {
        if let Some(missing) = batch.image_ids.iter().find(|id| catalog.get(id).is_none()) {
            return Err(Error::UnknownImage(missing.clone()));
        }
        let members = batch.image_ids.iter().cloned().collect();
        Ok(Desk {
            catalog,
            batch,
            members,
            leases: HashMap::new(),
            lease_timeout: Duration::minutes(LEASE_TIMEOUT_MINUTES),
        })
    }

    pub fn with_lease_timeout(mut self, timeout: Duration) -> Self {
        self.lease_timeout = timeout;
        self
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn into_catalog(self) -> Catalog {
        self.catalog
    }

    pub fn batch(&self) -> &AnnotationBatch {
        &self.batch
    }

    fn record(&self, image_id: &str) -> Result<&ImageRecord> {
        if !self.members.contains(image_id) {
            return Err(Error::UnknownImage(image_id.to_string()));
        }
        self.catalog.get(image_id).ok_or_else(|| Error::UnknownImage(image_id.to_string()))
    }

    pub fn progress(&self, annotator: &str) -> Result<Progress> {
        validate_annotator(annotator)?;
        let completed = self
            .batch
            .image_ids
            .iter()
            .filter(|id| self.catalog.get(id).is_some_and(|r| r.response_of(annotator).is_some()))
            .count();
        Ok(Progress { annotator: annotator.to_string(), completed, total: self.batch.len() })
    }

    fn view(&self, image_id: &str, annotator: &str) -> Result<TaskView> {
        let categories = AnnotationCategory::ALL
            .into_iter()
            .map(|c| CategoryOption { code: c.code(), category: c, label: c.title().to_string(), shortcut: c.shortcut() })
            .collect();
        Ok(TaskView {
            image_id: image_id.to_string(),
            crop_url: format!("/api/image/{image_id}/crop.png"),
            categories,
            progress: self.progress(annotator)?,
        })
    }

    pub fn assign_next(&mut self, annotator: &str) -> Result<Option<TaskView>> {
        self.assign_next_at(annotator, Utc::now())
    }

    /// Returns the annotator's open task if it is unanswered and unexpired,
    /// else leases a new one. Images still short of two responses go first.
    pub fn assign_next_at(&mut self, annotator: &str, now: DateTime<Utc>) -> Result<Option<TaskView>> {
        validate_annotator(annotator)?;
        if let Some(lease) = self.leases.get(annotator) {
            let answered = self.record(&lease.image_id)?.response_of(annotator).is_some();
            if !answered && now - lease.issued_at < self.lease_timeout {
                let id = lease.image_id.clone();
                return self.view(&id, annotator).map(Some);
            }
        }
        self.leases.remove(annotator);
        let open = |r: &ImageRecord| r.response_of(annotator).is_none();
        let records = self.batch.image_ids.iter().filter_map(|id| self.catalog.get(id));
        let pick = records
            .clone()
            .find(|r| open(r) && r.annotations.len() < 2)
            .or_else(|| records.clone().find(|r| open(r)))
            .map(|r| r.image_id.clone());
        let Some(image_id) = pick else { return Ok(None) };
        self.leases.insert(annotator.to_string(), Lease { image_id: image_id.clone(), issued_at: now });
        self.view(&image_id, annotator).map(Some)
    }

    pub fn submit(&mut self, image_id: &str, annotator: &str, category: AnnotationCategory) -> Result<SubmitOutcome> {
        self.submit_at(image_id, annotator, category, Utc::now())
    }

    /// Records a response. Resubmitting the same choice is a no-op; a
    /// different choice is accepted only while the task is still the
    /// annotator's current one.
    pub fn submit_at(
        &mut self,
        image_id: &str,
        annotator: &str,
        category: AnnotationCategory,
        now: DateTime<Utc>,
    ) -> Result<SubmitOutcome> {
        validate_annotator(annotator)?;
        let record = self.record(image_id)?;
        let response = AnnotationResponse { category, annotator_id: annotator.to_string(), submitted_at: now };
        let outcome = match record.response_of(annotator) {
            Some(prev) if prev.category == category => return Ok(SubmitOutcome::Unchanged),
            Some(_) => {
                let current = self.leases.get(annotator).is_some_and(|l| l.image_id == image_id);
                if !current {
                    return Err(Error::Conflict(format!("response of {annotator} on {image_id} is final")));
                }
                SubmitOutcome::Updated
            }
            None => SubmitOutcome::Recorded,
        };
        self.catalog.update(image_id, |r| {
            match r.annotations.iter_mut().find(|a| a.annotator_id == annotator) {
                Some(slot) => *slot = response,
                None => r.annotations.push(response),
            }
            Ok(())
        })?;
        Ok(outcome)
    }

    /// PNG of the face shown to annotators: the first landmarked face, else
    /// the first face, else the whole image.
    pub fn crop_png(&self, image_id: &str, opts: &CropOptions) -> Result<Vec<u8>> {
        let record = self.record(image_id)?;
        let bytes = self.catalog.read_blob(record)?;
        let img = facegate::decode(&bytes)?;
        let face = record
            .faces
            .iter()
            .find(|f| f.has_landmarks())
            .or(record.faces.first())
            .cloned()
            .unwrap_or_else(|| FaceInstance {
                bbox: BoundingBox::new(0.0, 0.0, img.width() as f64, img.height() as f64),
                landmarks: None,
                detector_name: "whole-image".into(),
            });
        let crop = facegate::register_crop(&img, &face, opts)?;
        facegate::encode_png(&crop.to_image())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::sample_batch;
    use crate::catalog::GateDecision;
    use crate::taxonomy::{ExpressionLabel, QuerySpec};

    fn desk(n: usize) -> (tempfile::TempDir, Desk) {
        let dir = tempfile::tempdir().unwrap();
        let mut cat = Catalog::open(dir.path()).unwrap();
        let q = QuerySpec {
            query_text: "sad".into(),
            language: "en".into(),
            english_translation: "sad".into(),
            intended_emotion: Some(ExpressionLabel::Sad),
            gender: None,
            age: None,
        };
        for i in 0..n {
            let id = cat.upsert_url(&format!("http://h/{i}.jpg"), &q).unwrap().image_id;
            cat.update(&id, |r| {
                r.gate = Some(GateDecision { kept: true, reason: None });
                Ok(())
            })
            .unwrap();
        }
        let batch = sample_batch(cat.records(), 100, 1);
        (dir, Desk::new(cat, batch).unwrap())
    }

    #[test]
    fn annotators_finish_independently() {
        let (_dir, mut desk) = desk(3);
        for who in ["ann", "bob"] {
            let mut seen = Vec::new();
            while let Some(task) = desk.assign_next(who).unwrap() {
                assert_eq!(desk.submit(&task.image_id, who, AnnotationCategory::Sad).unwrap(), SubmitOutcome::Recorded);
                seen.push(task.image_id);
            }
            assert_eq!(seen.len(), 3);
            assert_eq!(desk.progress(who).unwrap().completed, 3);
        }
        assert!(desk.catalog().records().iter().all(|r| r.annotations.len() == 2));
    }

    #[test]
    fn refetch_returns_open_task_until_expiry() {
        let (_dir, mut desk) = desk(2);
        let t0 = Utc::now();
        let a = desk.assign_next_at("ann", t0).unwrap().unwrap();
        let b = desk.assign_next_at("ann", t0 + Duration::minutes(29)).unwrap().unwrap();
        assert_eq!(a.image_id, b.image_id);
        let c = desk.assign_next_at("ann", t0 + Duration::minutes(31)).unwrap().unwrap();
        // The expired task returns to the pool and is first in line again.
        assert_eq!(c.image_id, a.image_id);
    }

    #[test]
    fn responses_freeze_after_next_task() {
        let (_dir, mut desk) = desk(2);
        let t = desk.assign_next("ann").unwrap().unwrap();
        desk.submit(&t.image_id, "ann", AnnotationCategory::Happy).unwrap();
        assert_eq!(desk.submit(&t.image_id, "ann", AnnotationCategory::Sad).unwrap(), SubmitOutcome::Updated);
        assert_eq!(desk.submit(&t.image_id, "ann", AnnotationCategory::Sad).unwrap(), SubmitOutcome::Unchanged);
        let next = desk.assign_next("ann").unwrap().unwrap();
        assert_ne!(next.image_id, t.image_id);
        assert!(matches!(desk.submit(&t.image_id, "ann", AnnotationCategory::Fear), Err(Error::Conflict(_))));
        assert_eq!(desk.submit(&t.image_id, "ann", AnnotationCategory::Sad).unwrap(), SubmitOutcome::Unchanged);
        assert_eq!(desk.catalog().get(&t.image_id).unwrap().annotations.len(), 1);
    }

    #[test]
    fn rejects_unknown_inputs() {
        let (_dir, mut desk) = desk(1);
        assert!(matches!(desk.submit("nope", "ann", AnnotationCategory::Sad), Err(Error::UnknownImage(_))));
        assert!(desk.assign_next("").is_err());
        assert!(desk.assign_next("bad id").is_err());
    }
}
