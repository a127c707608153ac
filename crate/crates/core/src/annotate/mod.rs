//! Blind double annotation: batch sampling, task leasing, adjudication and
//! agreement statistics.
//!
//! Adjudication of two responses for an image retrieved by an emotion query:
//! equal responses win outright; otherwise a response matching the query's
//! emotion wins; otherwise one of the two is drawn with a seeded RNG whose
//! seed is recorded on the label. Only the first two responses count.

mod desk;
pub mod service;

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ImageRecord};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::taxonomy::{AnnotationCategory, ExpressionLabel, NUM_CATEGORIES};

pub use desk::{
    CategoryOption, Desk, Progress, SubmitOutcome, TaskView, LEASE_TIMEOUT_MINUTES,
};

pub const BATCH_FILE: &str = "batch.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResponse {
    pub category: AnnotationCategory,
    pub annotator_id: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionMethod {
    Agreement,
    QueryFavored,
    RandomPick,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub category: AnnotationCategory,
    pub method: ResolutionMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed_used: Option<u64>,
}

/// Annotator ids are short printable tokens.
pub fn validate_annotator(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.' | '@'));
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!("invalid annotator id `{id}`")))
    }
}

/// The adjudication rule on one pair of responses. `seed` is only consumed
/// on a random pick.
pub fn resolve_pair(
    first: AnnotationCategory,
    second: AnnotationCategory,
    intended: ExpressionLabel,
    seed: u64,
) -> ResolvedLabel {
    if first == second {
        return ResolvedLabel { category: first, method: ResolutionMethod::Agreement, rng_seed_used: None };
    }
    let target = intended.to_category();
    if first == target || second == target {
        return ResolvedLabel { category: target, method: ResolutionMethod::QueryFavored, rng_seed_used: None };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let category = if rng.random_bool(0.5) { first } else { second };
    ResolvedLabel { category, method: ResolutionMethod::RandomPick, rng_seed_used: Some(seed) }
}

/// Per-image RNG seed derived from a global seed, so any single label can be
/// re-derived without replaying the others.
pub fn image_seed(global_seed: u64, image_id: &str) -> u64 {
    let digest = sha256_hex(format!("{global_seed}\t{image_id}").as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex digest")
}

pub fn resolve(record: &ImageRecord, global_seed: u64) -> Result<ResolvedLabel> {
    if record.annotations.len() < 2 {
        return Err(Error::NotReady(format!(
            "{} has {} response(s), needs 2",
            record.image_id,
            record.annotations.len()
        )));
    }
    let intended = record
        .intended_emotion()
        .ok_or_else(|| Error::NotReady(format!("{} has no intended emotion", record.image_id)))?;
    let (a, b) = (record.annotations[0].category, record.annotations[1].category);
    Ok(resolve_pair(a, b, intended, image_seed(global_seed, &record.image_id)))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ResolveReport {
    pub resolved: usize,
    pub not_ready: usize,
    pub writes: usize,
    pub by_method: BTreeMap<ResolutionMethod, usize>,
}

/// Resolves every record with at least two responses.
pub fn resolve_catalog(catalog: &mut Catalog, global_seed: u64) -> Result<ResolveReport> {
    let mut report = ResolveReport::default();
    let ids: Vec<String> = catalog
        .records()
        .iter()
        .filter(|r| !r.annotations.is_empty())
        .map(|r| r.image_id.clone())
        .collect();
    for id in ids {
        let record = catalog.get(&id).expect("listed id");
        match resolve(record, global_seed) {
            Ok(label) => {
                report.resolved += 1;
                *report.by_method.entry(label.method).or_default() += 1;
                report.writes += catalog.update(&id, |r| {
                    r.resolved = Some(label);
                    Ok(())
                })? as usize;
            }
            Err(Error::NotReady(_)) => report.not_ready += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Image ids drawn per intended emotion, without replacement, from the
/// gate-kept records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationBatch {
    pub seed: u64,
    pub per_emotion: usize,
    pub image_ids: Vec<String>,
    pub strata: BTreeMap<ExpressionLabel, usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl AnnotationBatch {
    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }

    pub fn contains(&self, image_id: &str) -> bool {
        self.image_ids.iter().any(|i| i == image_id)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub fn sample_batch(records: &[ImageRecord], per_emotion: usize, seed: u64) -> AnnotationBatch {
    let mut image_ids = Vec::new();
    let mut strata = BTreeMap::new();
    let mut warnings = Vec::new();
    for (stream, emotion) in ExpressionLabel::QUERIED.into_iter().enumerate() {
        let mut eligible: Vec<&str> = records
            .iter()
            .filter(|r| r.is_kept() && r.intended_emotion() == Some(emotion))
            .map(|r| r.image_id.as_str())
            .collect();
        eligible.sort_unstable();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        eligible.shuffle(&mut rng);
        if eligible.len() < per_emotion {
            warnings.push(format!(
                "{}: {} eligible of {per_emotion} requested",
                emotion.name(),
                eligible.len()
            ));
        }
        eligible.truncate(per_emotion);
        strata.insert(emotion, eligible.len());
        image_ids.extend(eligible.into_iter().map(String::from));
    }
    AnnotationBatch { seed, per_emotion, image_ids, strata, warnings }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub double_annotated: usize,
    pub agreed: usize,
    /// Percent of doubly annotated images whose first two responses agree.
    pub agreement_percent: Option<f64>,
    pub disagreements: usize,
    pub query_favored: usize,
    /// Percent of disagreements the intended query settled.
    pub query_favored_percent: Option<f64>,
    /// All responses per category.
    pub response_counts: [usize; NUM_CATEGORIES],
    /// Resolved labels per category.
    pub resolved_counts: [usize; NUM_CATEGORIES],
    /// Cohen's kappa between the first and second response slots; absent
    /// when chance agreement is 1.
    pub kappa: Option<f64>,
}

pub fn agreement_stats(records: &[ImageRecord]) -> AgreementStats {
    let mut response_counts = [0; NUM_CATEGORIES];
    let mut resolved_counts = [0; NUM_CATEGORIES];
    let mut first = [0usize; NUM_CATEGORIES];
    let mut second = [0usize; NUM_CATEGORIES];
    let (mut pairs, mut agreed, mut query_favored) = (0, 0, 0);
    for r in records {
        for a in &r.annotations {
            response_counts[a.category.code()] += 1;
        }
        if let Some(res) = &r.resolved {
            resolved_counts[res.category.code()] += 1;
        }
        let [a, b, ..] = r.annotations.as_slice() else { continue };
        pairs += 1;
        first[a.category.code()] += 1;
        second[b.category.code()] += 1;
        if a.category == b.category {
            agreed += 1;
        } else if let Some(e) = r.intended_emotion() {
            let target = e.to_category();
            query_favored += (a.category == target || b.category == target) as usize;
        }
    }
    let disagreements = pairs - agreed;
    let pct = |num: usize, den: usize| (den > 0).then(|| 100.0 * num as f64 / den as f64);
    let kappa = (pairs > 0).then(|| {
        let n = pairs as f64;
        let observed = agreed as f64 / n;
        let chance: f64 = first.iter().zip(&second).map(|(&x, &y)| (x as f64 / n) * (y as f64 / n)).sum();
        (chance < 1.0).then(|| (observed - chance) / (1.0 - chance))
    });
    AgreementStats {
        double_annotated: pairs,
        agreed,
        agreement_percent: pct(agreed, pairs),
        disagreements,
        query_favored,
        query_favored_percent: pct(query_favored, disagreements),
        response_counts,
        resolved_counts,
        kappa: kappa.flatten(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfusionRow {
    pub query: ExpressionLabel,
    pub total: usize,
    pub counts: [usize; NUM_CATEGORIES],
    pub percent: [f64; NUM_CATEGORIES],
}

/// Resolved categories per intended query, one row per queried emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryConfusion {
    pub rows: Vec<QueryConfusionRow>,
    /// Queried emotions without any resolved image.
    pub omitted: Vec<ExpressionLabel>,
}

impl QueryConfusion {
    pub fn row(&self, query: ExpressionLabel) -> Option<&QueryConfusionRow> {
        self.rows.iter().find(|r| r.query == query)
    }

    pub fn render(&self) -> String {
        let mut out = format!("{:<10}", "query");
        for c in AnnotationCategory::ALL {
            out.push_str(&format!("{:>10}", c.title()));
        }
        out.push_str(&format!("{:>8}\n", "n"));
        for row in &self.rows {
            out.push_str(&format!("{:<10}", row.query.name()));
            for p in row.percent {
                out.push_str(&format!("{p:>10.2}"));
            }
            out.push_str(&format!("{:>8}\n", row.total));
        }
        for q in &self.omitted {
            out.push_str(&format!("{:<10} (no resolved images)\n", q.name()));
        }
        out
    }
}

pub fn query_confusion(records: &[ImageRecord]) -> QueryConfusion {
    let mut counts = [[0usize; NUM_CATEGORIES]; ExpressionLabel::QUERIED.len()];
    for r in records {
        let (Some(res), Some(e)) = (&r.resolved, r.intended_emotion()) else { continue };
        if let Some(i) = ExpressionLabel::QUERIED.iter().position(|q| *q == e) {
            counts[i][res.category.code()] += 1;
        }
    }
    let mut rows = Vec::new();
    let mut omitted = Vec::new();
    for (query, counts) in ExpressionLabel::QUERIED.into_iter().zip(counts) {
        let total: usize = counts.iter().sum();
        if total == 0 {
            omitted.push(query);
            continue;
        }
        let percent = counts.map(|c| 100.0 * c as f64 / total as f64);
        rows.push(QueryConfusionRow { query, total, counts, percent });
    }
    QueryConfusion { rows, omitted }
}
