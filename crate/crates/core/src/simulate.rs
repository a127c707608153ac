//! Synthetic noisy-label benchmark.
//!
//! Generator: each of the 7 classes is an isotropic unit-variance Gaussian
//! in `dims` dimensions. Class means are drawn once per seed from
//! `N(0, mean_scale^2 I)`. The clean, noisy and test pools are sampled
//! independently; noisy-pool labels are then corrupted with
//! [`flip_labels`] through the flip matrix. The clean pool also receives
//! corrupted copies of its labels, which stand in for the query labels of
//! the expert-annotated subset and feed [`estimate_from_pairs`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{compare_scenarios, evaluate, Comparison, EvalReport, ReportMeta};
use crate::noisemodel::{estimate_from_pairs, flip_labels, query_flip_matrix, NoiseMatrix};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};
use crate::trainer::{self, Classifier, ModelSpec, Sample, ScenarioKind, Source, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipSource {
    /// Expression columns of the published query/annotation confusion.
    QueryConfusion,
    /// No corruption.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseEstimate {
    /// Smoothed counting over the clean pool's (true, corrupted) pairs.
    Estimated { smoothing: f64 },
    /// Hand the flip matrix itself to the trainer.
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub seed: u64,
    pub dims: usize,
    pub mean_scale: f64,
    pub clean_per_class: [usize; NUM_CLASSES],
    pub noisy_per_class: [usize; NUM_CLASSES],
    pub test_per_class: [usize; NUM_CLASSES],
    pub flip: FlipSource,
    pub noise_estimate: NoiseEstimate,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl SimulationConfig {
    /// 2,100 clean, 21,000 noisy and 7,000 test samples, 16 dimensions.
    pub fn standard(seed: u64) -> Self {
        SimulationConfig {
            seed,
            dims: 16,
            mean_scale: 0.75,
            clean_per_class: [300; NUM_CLASSES],
            noisy_per_class: [3_000; NUM_CLASSES],
            test_per_class: [1_000; NUM_CLASSES],
            flip: FlipSource::QueryConfusion,
            noise_estimate: NoiseEstimate::Estimated { smoothing: 1.0 },
            model: ModelSpec::Affine { input_dim: 16 },
            train: TrainConfig::desk().with_seed(seed),
        }
    }

    /// Standard benchmark with Fear and Disgust at a quarter of the other
    /// classes' clean counts.
    pub fn imbalanced(seed: u64) -> Self {
        let mut cfg = Self::standard(seed);
        cfg.clean_per_class[ExpressionLabel::Fear.code()] = 75;
        cfg.clean_per_class[ExpressionLabel::Disgust.code()] = 75;
        cfg
    }
}

/// Generated pools for one seed.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub means: Vec<Vec<f64>>,
    pub clean: Vec<Sample>,
    /// Corrupted labels for the clean pool, aligned with `clean`.
    pub clean_noisy_labels: Vec<ExpressionLabel>,
    /// Noisy pool with corrupted labels.
    pub noisy: Vec<Sample>,
    /// True labels of the noisy pool, aligned with `noisy`.
    pub noisy_true_labels: Vec<ExpressionLabel>,
    pub test: Vec<Sample>,
    pub flip: NoiseMatrix,
}

const STREAM_MEANS: u64 = 11;
const STREAM_CLEAN: u64 = 12;
const STREAM_NOISY: u64 = 13;
const STREAM_TEST: u64 = 14;
const STREAM_FLIP: u64 = 15;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn draw_pool(means: &[Vec<f64>], per_class: &[usize; NUM_CLASSES], source: Source, rng: &mut ChaCha8Rng) -> Vec<Sample> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut out = Vec::with_capacity(per_class.iter().sum());
    for (c, &n) in per_class.iter().enumerate() {
        for _ in 0..n {
            let features = means[c].iter().map(|m| m + unit.sample(rng)).collect();
            out.push(Sample::new(features, ExpressionLabel::ALL[c], source));
        }
    }
    out
}

pub fn generate(config: &SimulationConfig) -> SyntheticData {
    let seed = config.seed;
    let spread = Normal::new(0.0, config.mean_scale).expect("finite scale");
    let mut rng = stream(seed, STREAM_MEANS);
    let means: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| (0..config.dims).map(|_| spread.sample(&mut rng)).collect())
        .collect();

    let clean = draw_pool(&means, &config.clean_per_class, Source::Clean, &mut stream(seed, STREAM_CLEAN));
    let mut noisy = draw_pool(&means, &config.noisy_per_class, Source::Noisy, &mut stream(seed, STREAM_NOISY));
    let test = draw_pool(&means, &config.test_per_class, Source::Clean, &mut stream(seed, STREAM_TEST));

    let flip = match config.flip {
        FlipSource::QueryConfusion => query_flip_matrix(),
        FlipSource::Identity => NoiseMatrix::identity(),
    };
    let mut rng = stream(seed, STREAM_FLIP);
    let noisy_true_labels: Vec<_> = noisy.iter().map(|s| s.label).collect();
    for (s, l) in noisy.iter_mut().zip(flip_labels(&noisy_true_labels, &flip, &mut rng)) {
        s.label = l;
    }
    let clean_labels: Vec<_> = clean.iter().map(|s| s.label).collect();
    let clean_noisy_labels = flip_labels(&clean_labels, &flip, &mut rng);

    SyntheticData { means, clean, clean_noisy_labels, noisy, noisy_true_labels, test, flip }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub flip_matrix: NoiseMatrix,
    /// Matrix handed to the noise-modeled scenario.
    pub noise_matrix: NoiseMatrix,
    pub reports: Vec<EvalReport>,
    pub comparison: Comparison,
}

impl SimulationReport {
    pub fn report(&self, scenario: ScenarioKind) -> &EvalReport {
        self.reports.iter().find(|r| r.scenario == scenario).expect("all scenarios run")
    }

    pub fn accuracy(&self, scenario: ScenarioKind) -> f64 {
        self.report(scenario).accuracy
    }
}

/// Runs all three scenarios on one generated dataset with shared seeds.
pub fn simulate(config: &SimulationConfig) -> Result<SimulationReport> {
    let data = generate(config);
    let noise_matrix = match config.noise_estimate {
        NoiseEstimate::Known => data.flip,
        NoiseEstimate::Estimated { smoothing } => {
            let pairs: Vec<_> = data.clean.iter().map(|s| s.label).zip(data.clean_noisy_labels.iter().copied()).collect();
            estimate_from_pairs(&pairs, smoothing)?
        }
    };
    let mut reports = Vec::with_capacity(3);
    for scenario in ScenarioKind::ALL {
        let cfg = config.train.clone().with_scenario(scenario);
        let mut model = config.model.build();
        let q = (scenario == ScenarioKind::NoiseModeledMix).then_some(&noise_matrix);
        trainer::train(&data.clean, &data.noisy, q, &mut model, &cfg)?;
        let meta = ReportMeta { scenario, model: model_name(&model.spec()), config_hash: cfg.hash() };
        reports.push(evaluate(&model, &data.test, meta)?);
    }
    let comparison = compare_scenarios(&reports)?;
    Ok(SimulationReport { seed: config.seed, flip_matrix: data.flip, noise_matrix, reports, comparison })
}

pub fn model_name(spec: &ModelSpec) -> String {
    match spec {
        ModelSpec::Affine { .. } => "affine".to_string(),
        ModelSpec::Mlp { hidden, .. } => format!("mlp-{hidden}"),
    }
}
