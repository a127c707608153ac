//! Accuracy, confusion matrices and scenario comparisons.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};
use crate::trainer::{dataset_hash, Classifier, Sample, ScenarioKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

/// Identifies what was evaluated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub scenario: ScenarioKind,
    pub model: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: ScenarioKind,
    pub model: String,
    pub config_hash: String,
    pub test_hash: String,
    /// Percent correct over all samples.
    pub accuracy: f64,
    /// `counts[actual][predicted]`.
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
    /// Row-normalized percentages; all zeros for classes absent from the test set.
    pub confusion: [[f64; NUM_CLASSES]; NUM_CLASSES],
    /// Diagonal of `confusion` as a fraction; `None` for absent classes.
    pub recall: [Option<f64>; NUM_CLASSES],
    pub class_counts: [u64; NUM_CLASSES],
}

impl EvalReport {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES], meta: ReportMeta, test_hash: String) -> Self {
        let mut confusion = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        let mut recall = [None; NUM_CLASSES];
        let mut class_counts = [0; NUM_CLASSES];
        let mut correct = 0u64;
        for a in 0..NUM_CLASSES {
            let n: u64 = counts[a].iter().sum();
            class_counts[a] = n;
            correct += counts[a][a];
            if n > 0 {
                for p in 0..NUM_CLASSES {
                    confusion[a][p] = 100.0 * counts[a][p] as f64 / n as f64;
                }
                recall[a] = Some(counts[a][a] as f64 / n as f64);
            }
        }
        let total: u64 = class_counts.iter().sum();
        let accuracy = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
        EvalReport {
            scenario: meta.scenario,
            model: meta.model,
            config_hash: meta.config_hash,
            test_hash,
            accuracy,
            counts,
            confusion,
            recall,
            class_counts,
        }
    }

    pub fn total(&self) -> u64 {
        self.class_counts.iter().sum()
    }

    pub fn recall_of(&self, label: ExpressionLabel) -> Option<f64> {
        self.recall[label.code()]
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        Ok(match format {
            ReportFormat::Json => serde_json::to_string_pretty(self)?,
            ReportFormat::Csv => {
                let mut out = String::from("actual,n");
                for l in ExpressionLabel::ALL {
                    let _ = write!(out, ",{}", l.name());
                }
                out.push('\n');
                for a in ExpressionLabel::ALL {
                    let _ = write!(out, "{},{}", a.name(), self.class_counts[a.code()]);
                    for v in &self.confusion[a.code()] {
                        let _ = write!(out, ",{v:.2}");
                    }
                    out.push('\n');
                }
                out
            }
            ReportFormat::Text => {
                let mut out = format!(
                    "{} / {} on test set {} ({} samples): accuracy {:.2}%\n",
                    self.scenario.title(),
                    self.model,
                    self.test_hash,
                    self.total(),
                    self.accuracy
                );
                out.push_str("actual\\pred");
                for l in ExpressionLabel::ALL {
                    let _ = write!(out, " {:>8}", abbrev(l));
                }
                out.push('\n');
                for a in ExpressionLabel::ALL {
                    let _ = write!(out, "{:<11}", abbrev(a));
                    if self.class_counts[a.code()] == 0 {
                        out.push_str("  (no samples)\n");
                        continue;
                    }
                    for v in &self.confusion[a.code()] {
                        let _ = write!(out, " {v:>8.2}");
                    }
                    out.push('\n');
                }
                out
            }
        })
    }
}

fn abbrev(label: ExpressionLabel) -> &'static str {
    match label {
        ExpressionLabel::Neutral => "NE",
        ExpressionLabel::Happy => "HA",
        ExpressionLabel::Sad => "SA",
        ExpressionLabel::Surprise => "SU",
        ExpressionLabel::Fear => "FE",
        ExpressionLabel::Disgust => "DI",
        ExpressionLabel::Anger => "AN",
    }
}

/// Tallies `counts[actual][predicted]`.
pub fn tally(actual: &[ExpressionLabel], predicted: &[ExpressionLabel]) -> Result<[[u64; NUM_CLASSES]; NUM_CLASSES]> {
    if actual.len() != predicted.len() {
        return Err(Error::Dimension { expected: actual.len(), found: predicted.len() });
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for (a, p) in actual.iter().zip(predicted) {
        counts[a.code()][p.code()] += 1;
    }
    Ok(counts)
}

/// Argmax predictions over a test set.
pub fn evaluate<M: Classifier + ?Sized>(model: &M, test: &[Sample], meta: ReportMeta) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Invalid("test set is empty".into()));
    }
    if let Some(s) = test.iter().find(|s| s.features.len() != model.input_dim()) {
        return Err(Error::Dimension { expected: model.input_dim(), found: s.features.len() });
    }
    let actual: Vec<_> = test.iter().map(|s| s.label).collect();
    let predicted: Vec<_> = test.iter().map(|s| model.predict(&s.features)).collect();
    Ok(EvalReport::from_counts(tally(&actual, &predicted)?, meta, dataset_hash(test)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario: ScenarioKind,
    pub model: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub test_hash: String,
    pub rows: Vec<ComparisonRow>,
    /// Per-class recall of noise-modeled minus naive mix, in points, for
    /// each model that has both; `None` for classes absent from the test set.
    pub recall_deltas: Vec<RecallDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallDelta {
    pub model: String,
    pub delta: [Option<f64>; NUM_CLASSES],
}

impl Comparison {
    pub fn accuracy(&self, scenario: ScenarioKind, model: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.model == model)
            .map(|r| r.accuracy)
    }

    fn models(&self) -> Vec<&str> {
        let mut models: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        models
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        let models = self.models();
        let scenarios: Vec<ScenarioKind> = ScenarioKind::ALL
            .into_iter()
            .filter(|s| self.rows.iter().any(|r| r.scenario == *s))
            .collect();
        let cell = |s: ScenarioKind, m: &str| self.accuracy(s, m).map(|a| format!("{a:.2}%")).unwrap_or_else(|| "-".into());
        Ok(match format {
            ReportFormat::Json => serde_json::to_string_pretty(self)?,
            ReportFormat::Csv => {
                let mut out = String::from("scenario");
                for m in &models {
                    let _ = write!(out, ",{m}");
                }
                out.push('\n');
                for &s in &scenarios {
                    out.push_str(s.cli_name());
                    for m in &models {
                        match self.accuracy(s, m) {
                            Some(a) => {
                                let _ = write!(out, ",{a:.2}");
                            }
                            None => out.push(','),
                        }
                    }
                    out.push('\n');
                }
                out
            }
            ReportFormat::Text => {
                let width = scenarios.iter().map(|s| s.title().len()).max().unwrap_or(8);
                let mut out = format!("{:<width$}", "");
                for m in &models {
                    let _ = write!(out, " | {m:>12}");
                }
                out.push('\n');
                for &s in &scenarios {
                    let _ = write!(out, "{:<width$}", s.title());
                    for m in &models {
                        let _ = write!(out, " | {:>12}", cell(s, m));
                    }
                    out.push('\n');
                }
                for d in &self.recall_deltas {
                    let _ = write!(out, "recall delta (noisemix - mix), {}:", d.model);
                    for l in ExpressionLabel::ALL {
                        match d.delta[l.code()] {
                            Some(v) => {
                                let _ = write!(out, " {}={v:+.2}", abbrev(l));
                            }
                            None => {
                                let _ = write!(out, " {}=-", abbrev(l));
                            }
                        }
                    }
                    out.push('\n');
                }
                out
            }
        })
    }
}

/// Side-by-side accuracies plus per-class recall deltas between the
/// noise-modeled and naive mixed scenarios.
pub fn compare_scenarios(reports: &[EvalReport]) -> Result<Comparison> {
    if reports.len() < 2 {
        return Err(Error::Invalid("need at least two reports to compare".into()));
    }
    let test_hash = reports[0].test_hash.clone();
    if reports.iter().any(|r| r.test_hash != test_hash) {
        return Err(Error::TestSetMismatch);
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow { scenario: r.scenario, model: r.model.clone(), accuracy: r.accuracy })
        .collect();
    let mut recall_deltas = Vec::new();
    let mut seen: Vec<&str> = Vec::new();
    for r in reports {
        if seen.contains(&r.model.as_str()) {
            continue;
        }
        seen.push(&r.model);
        let find = |s: ScenarioKind| reports.iter().find(|x| x.model == r.model && x.scenario == s);
        if let (Some(modeled), Some(naive)) = (find(ScenarioKind::NoiseModeledMix), find(ScenarioKind::NaiveMix)) {
            let mut delta = [None; NUM_CLASSES];
            for (k, d) in delta.iter_mut().enumerate() {
                if let (Some(a), Some(b)) = (modeled.recall[k], naive.recall[k]) {
                    *d = Some(100.0 * (a - b));
                }
            }
            recall_deltas.push(RecallDelta { model: r.model.clone(), delta });
        }
    }
    Ok(Comparison { test_hash, rows, recall_deltas })
}
