//! Label-noise channel and the quantities derived from it.
//!
//! A [`NoiseMatrix`] `Q` is row-stochastic with `Q[i][j] = P(noisy = j | true = i)`;
//! rows and columns follow [`ExpressionLabel`] codes. Two sources produce one:
//!
//! * [`estimate_from_pairs`] counts (true, noisy) pairs from images that carry
//!   both an expert label and the label of the query that retrieved them. This
//!   is the true→noisy channel used by forward-corrected training.
//! * [`query_flip_matrix`] takes the published query/annotation
//!   confusion, whose rows are *queries* and columns are *annotations*, and
//!   keeps only the seven expression columns. Reading its rows as the "from"
//!   side, it is used by the simulator as the label-generation channel that
//!   corrupts synthetic labels ([`flip_labels`]).

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{AnnotationCategory, ExpressionLabel, NUM_CATEGORIES, NUM_CLASSES};

pub type Distribution = [f64; NUM_CLASSES];

/// Row-sum tolerance for every constructor.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// Column order of the published query/annotation confusion table.
pub const QUERY_CONFUSION_COLUMNS: [AnnotationCategory; NUM_CATEGORIES] = [
    AnnotationCategory::Happy,
    AnnotationCategory::Sad,
    AnnotationCategory::Surprise,
    AnnotationCategory::Fear,
    AnnotationCategory::Disgust,
    AnnotationCategory::Anger,
    AnnotationCategory::Neutral,
    AnnotationCategory::NoFace,
    AnnotationCategory::None,
    AnnotationCategory::Uncertain,
];

/// Percent of each query's images annotated as each category, rows in
/// [`ExpressionLabel::QUERIED`] order, columns in [`QUERY_CONFUSION_COLUMNS`] order.
pub const QUERY_CONFUSION_PERCENT: [[f64; NUM_CATEGORIES]; 6] = [
    [68.18, 2.66, 1.23, 0.74, 0.33, 1.59, 5.67, 18.54, 0.74, 0.33],
    [16.5, 42.42, 1.52, 1.88, 0.57, 4.73, 16.55, 13.31, 1.57, 0.98],
    [27.6, 6.31, 20.11, 5.62, 1.07, 4.85, 17.1, 14.73, 1.65, 0.96],
    [18.74, 10.91, 6.49, 17.69, 1.47, 6.39, 13.92, 20.49, 2.22, 1.67],
    [26.71, 7.47, 4.48, 4.53, 12.61, 9.62, 17.34, 12.41, 2.99, 1.84],
    [22.28, 7.39, 2.31, 2.11, 1.19, 30.59, 16.21, 14.43, 2.34, 1.14],
];

/// Table row for a queried emotion, re-indexed by [`AnnotationCategory`] code.
pub fn published_query_row(query: ExpressionLabel) -> Option<[f64; NUM_CATEGORIES]> {
    let r = ExpressionLabel::QUERIED.iter().position(|&q| q == query)?;
    let mut row = [0.0; NUM_CATEGORIES];
    for (col, cat) in QUERY_CONFUSION_COLUMNS.iter().enumerate() {
        row[cat.code()] = QUERY_CONFUSION_PERCENT[r][col];
    }
    Some(row)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMatrix {
    rows: [[f64; NUM_CLASSES]; NUM_CLASSES],
}

impl NoiseMatrix {
    pub fn identity() -> Self {
        let mut rows = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        for (i, row) in rows.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        NoiseMatrix { rows }
    }

    /// Validates entries in [0, 1] and rows summing to one.
    pub fn from_rows(rows: [[f64; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidMatrix(format!("row {i} has entry {v}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidMatrix(format!("row {i} sums to {sum}")));
            }
        }
        Ok(NoiseMatrix { rows })
    }

    pub fn rows(&self) -> &[[f64; NUM_CLASSES]; NUM_CLASSES] {
        &self.rows
    }

    pub fn row(&self, truth: ExpressionLabel) -> &[f64; NUM_CLASSES] {
        &self.rows[truth.code()]
    }

    pub fn get(&self, truth: ExpressionLabel, noisy: ExpressionLabel) -> f64 {
        self.rows[truth.code()][noisy.code()]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }

    pub fn max_abs_diff(&self, other: &NoiseMatrix) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Text form: a `#` header naming the class order, then 7 lines of 7
    /// whitespace-separated decimals (row = true label, column = noisy label).
    pub fn to_text(&self) -> String {
        let names: Vec<&str> = ExpressionLabel::ALL.iter().map(|l| l.name()).collect();
        let mut out = String::new();
        let _ = writeln!(out, "# noise matrix: rows = true label, columns = noisy label");
        let _ = writeln!(out, "# classes: {}", names.join(" "));
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = [[0.0; NUM_CLASSES]; NUM_CLASSES];
        let mut n = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if n == NUM_CLASSES {
                return Err(Error::Parse { line: lineno + 1, detail: "more than 7 rows".into() });
            }
            let values: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: lineno + 1, detail: format!("{e}") })?;
            if values.len() != NUM_CLASSES {
                return Err(Error::Parse {
                    line: lineno + 1,
                    detail: format!("expected 7 fields, found {}", values.len()),
                });
            }
            rows[n].copy_from_slice(&values);
            n += 1;
        }
        if n != NUM_CLASSES {
            return Err(Error::Parse { line: 0, detail: format!("expected 7 rows, found {n}") });
        }
        Self::from_rows(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

impl Default for NoiseMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

/// Smoothed counting estimate:
/// `Q[i][j] = (count(i, j) + alpha) / (count(i, ·) + 7 alpha)`.
pub fn estimate_from_pairs(
    pairs: &[(ExpressionLabel, ExpressionLabel)],
    alpha: f64,
) -> Result<NoiseMatrix> {
    if pairs.is_empty() {
        return Err(Error::Invalid("no (true, noisy) pairs to estimate from".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Invalid(format!("smoothing must be >= 0, got {alpha}")));
    }
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    for &(truth, noisy) in pairs {
        counts[truth.code()][noisy.code()] += 1;
    }
    let mut rows = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (i, row) in rows.iter_mut().enumerate() {
        let total: u64 = counts[i].iter().sum();
        if total == 0 && alpha == 0.0 {
            return Err(Error::EmptyClass(ExpressionLabel::ALL[i]));
        }
        let denom = total as f64 + NUM_CLASSES as f64 * alpha;
        for (j, v) in row.iter_mut().enumerate() {
            *v = (counts[i][j] as f64 + alpha) / denom;
        }
    }
    NoiseMatrix::from_rows(rows)
}

/// Restricts each queried-emotion row of the published confusion to the
/// seven expression columns and renormalizes. Neutral was never queried, so
/// its row is the identity row.
pub fn query_flip_matrix() -> NoiseMatrix {
    let mut rows = NoiseMatrix::identity().rows;
    for query in ExpressionLabel::QUERIED {
        let full = published_query_row(query).expect("queried emotion");
        let kept = &full[..NUM_CLASSES];
        let total: f64 = kept.iter().sum();
        for (j, v) in rows[query.code()].iter_mut().enumerate() {
            *v = kept[j] / total;
        }
    }
    NoiseMatrix::from_rows(rows).expect("table-derived matrix is stochastic")
}

/// Replaces each label `i` by `j` with probability `M[i][j]`.
pub fn flip_labels<R: Rng + ?Sized>(
    labels: &[ExpressionLabel],
    matrix: &NoiseMatrix,
    rng: &mut R,
) -> Vec<ExpressionLabel> {
    labels
        .iter()
        .map(|&label| sample_row(matrix.row(label), rng))
        .collect()
}

fn sample_row<R: Rng + ?Sized>(row: &[f64; NUM_CLASSES], rng: &mut R) -> ExpressionLabel {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = j;
        }
        cum += p;
        if u < cum {
            return ExpressionLabel::ALL[j];
        }
    }
    ExpressionLabel::ALL[last_nonzero]
}

fn check_distribution(p: &Distribution) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Invalid(format!("class probabilities sum to {sum}")));
    }
    Ok(())
}

/// Posterior over true labels given classifier probabilities and an observed
/// noisy label: `post[i] ∝ p[i] Q[i][noisy]`.
pub fn posterior(p: &Distribution, q: &NoiseMatrix, noisy: ExpressionLabel) -> Result<Distribution> {
    check_distribution(p)?;
    Ok(posterior_unchecked(p, q, noisy)?.0)
}

/// Returns the posterior and the normalizer `Σ_k p[k] Q[k][noisy]`.
pub(crate) fn posterior_unchecked(
    p: &Distribution,
    q: &NoiseMatrix,
    noisy: ExpressionLabel,
) -> Result<(Distribution, f64)> {
    let j = noisy.code();
    let mut post = [0.0; NUM_CLASSES];
    let mut denom = 0.0;
    for i in 0..NUM_CLASSES {
        post[i] = p[i] * q.rows[i][j];
        denom += post[i];
    }
    if !(denom >= 1e-300) {
        return Err(Error::InconsistentNoiseModel(noisy));
    }
    for v in &mut post {
        *v /= denom;
    }
    Ok((post, denom))
}

/// Noisy-label distribution implied by the classifier: `q[j] = Σ_i p[i] Q[i][j]`.
pub fn forward_corrected_probs(p: &Distribution, q: &NoiseMatrix) -> Result<Distribution> {
    check_distribution(p)?;
    let mut out = [0.0; NUM_CLASSES];
    for (j, o) in out.iter_mut().enumerate() {
        for i in 0..NUM_CLASSES {
            *o += p[i] * q.rows[i][j];
        }
    }
    Ok(out)
}

/// Cross-entropy of the forward-corrected distribution against a noisy label.
pub fn forward_corrected_loss(p: &Distribution, q: &NoiseMatrix, noisy: ExpressionLabel) -> Result<f64> {
    let corrected = forward_corrected_probs(p, q)?;
    Ok(-corrected[noisy.code()].ln())
}

/// EM-style refresh:
/// `Q'[i][j] = (Σ_{s: noisy_s = j} post_s[i] + alpha) / (Σ_s post_s[i] + 7 alpha)`.
/// A true class with no posterior mass and `alpha = 0` keeps an identity row.
pub fn update_noise_matrix(
    posteriors: &[Distribution],
    noisy: &[ExpressionLabel],
    alpha: f64,
) -> Result<NoiseMatrix> {
    if posteriors.len() != noisy.len() {
        return Err(Error::Dimension { expected: posteriors.len(), found: noisy.len() });
    }
    let mut mass = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for (post, &label) in posteriors.iter().zip(noisy) {
        for i in 0..NUM_CLASSES {
            mass[i][label.code()] += post[i];
        }
    }
    let mut rows = [[0.0; NUM_CLASSES]; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        let total: f64 = mass[i].iter().sum::<f64>() + NUM_CLASSES as f64 * alpha;
        if total <= 0.0 {
            rows[i][i] = 1.0;
            continue;
        }
        for j in 0..NUM_CLASSES {
            rows[i][j] = (mass[i][j] + alpha) / total;
        }
    }
    NoiseMatrix::from_rows(rows)
}
