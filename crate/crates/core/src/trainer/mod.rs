//! Reference classifiers and the three training regimes over clean and
//! noisy samples.
//!
//! * [`ScenarioKind::CleanOnly`]: random init, clean samples only.
//! * [`ScenarioKind::NaiveMix`]: pretrain on clean, then train on clean plus
//!   noisy samples scored against their query labels.
//! * [`ScenarioKind::NoiseModeledMix`]: pretrain on clean, upsample clean to
//!   half the noisy pool, then train with the forward-corrected loss on noisy
//!   samples.
//!
//! Optimization is plain minibatch SGD with a step schedule (see [`lr_at`]).
//! Each phase restarts the schedule at iteration 0.

mod data;
mod loss;
mod model;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisemodel::{self, NoiseMatrix};

pub use data::{
    dataset_hash, feature_dim, label_counts, stratified_split, stratified_split_indices, test_count,
    upsample_clean, upsample_indices, upsample_target, Sample, Source, SplitIndices,
};
pub use loss::{sample_loss, softmax, Target};
pub use model::{argmax, AffineSoftmax, AnyModel, Classifier, Logits, Mlp, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CleanOnly,
    NaiveMix,
    NoiseModeledMix,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 3] = [ScenarioKind::CleanOnly, ScenarioKind::NaiveMix, ScenarioKind::NoiseModeledMix];

    /// CLI spelling: `clean`, `mix`, `noisemix`.
    pub fn cli_name(self) -> &'static str {
        match self {
            ScenarioKind::CleanOnly => "clean",
            ScenarioKind::NaiveMix => "mix",
            ScenarioKind::NoiseModeledMix => "noisemix",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioKind::CleanOnly => "Train on well-labeled",
            ScenarioKind::NaiveMix => "Train on mix",
            ScenarioKind::NoiseModeledMix => "Train on mix with noise estimation",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.cli_name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" | "clean_only" => Ok(ScenarioKind::CleanOnly),
            "mix" | "naive_mix" => Ok(ScenarioKind::NaiveMix),
            "noisemix" | "noise_modeled_mix" => Ok(ScenarioKind::NoiseModeledMix),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Paper,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Preset::Paper),
            "desk" => Ok(Preset::Desk),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub initial_lr: f64,
    /// The rate is divided by 10 after every `lr_drop_every` iterations.
    pub lr_drop_every: usize,
    /// Per-phase iteration cap.
    pub max_iterations: usize,
    pub seed: u64,
    pub convergence_window: usize,
    /// Stop when the mean loss of the last window improves on the window
    /// before it by less than this fraction.
    pub convergence_tolerance: f64,
    pub scenario: ScenarioKind,
    /// Re-estimate the noise matrix from posteriors every this many epochs
    /// of the mixed phase (noise-modeled scenario only).
    pub em_refresh_epochs: Option<usize>,
    /// Smoothing used by the EM refresh.
    pub em_smoothing: f64,
    /// Pretrain on clean data before the mixed phase. `None` means on for
    /// both mixed scenarios.
    pub pretrain: Option<bool>,
    /// Bootstrap clean data to half the noisy pool. `None` means on only for
    /// the noise-modeled scenario.
    pub upsample: Option<bool>,
}

impl TrainConfig {
    /// Constants of the original experiments: batch 256, rate 0.001 divided
    /// by 10 every 10,000 iterations.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 256,
            initial_lr: 0.001,
            lr_drop_every: 10_000,
            max_iterations: 40_000,
            seed: 42,
            convergence_window: 500,
            convergence_tolerance: 1e-4,
            scenario: ScenarioKind::CleanOnly,
            em_refresh_epochs: None,
            em_smoothing: 1.0,
            pretrain: None,
            upsample: None,
        }
    }

    /// Desk-scale schedule for the small reference models.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 64,
            initial_lr: 0.1,
            lr_drop_every: 1_000,
            max_iterations: 3_000,
            ..Self::paper()
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn with_scenario(mut self, scenario: ScenarioKind) -> Self {
        self.scenario = scenario;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.batch_size > 0, "batch_size"),
            (self.initial_lr > 0.0 && self.initial_lr.is_finite(), "initial_lr"),
            (self.lr_drop_every > 0, "lr_drop_every"),
            (self.max_iterations > 0, "max_iterations"),
            (self.convergence_window > 0, "convergence_window"),
            (self.convergence_tolerance >= 0.0, "convergence_tolerance"),
            (self.em_refresh_epochs != Some(0), "em_refresh_epochs"),
            (self.em_smoothing >= 0.0, "em_smoothing"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(Error::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    pub fn uses_pretraining(&self) -> bool {
        self.scenario != ScenarioKind::CleanOnly && self.pretrain.unwrap_or(true)
    }

    pub fn uses_upsampling(&self) -> bool {
        self.scenario != ScenarioKind::CleanOnly
            && self.upsample.unwrap_or(self.scenario == ScenarioKind::NoiseModeledMix)
    }

    /// Short digest of the serialized config.
    pub fn hash(&self) -> String {
        crate::digest::short_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// `initial_lr * 10^-floor(iteration / lr_drop_every)`.
pub fn lr_at(iteration: usize, config: &TrainConfig) -> f64 {
    let drops = (iteration / config.lr_drop_every) as i32;
    config.initial_lr / 10f64.powi(drops)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub entries: Vec<HistoryEntry>,
    /// Noise-matrix snapshots after each EM refresh.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub noise_refreshes: Vec<NoiseMatrix>,
}

impl History {
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &HistoryEntry> {
        self.entries.iter().filter(move |e| e.phase == phase)
    }

    /// Mean loss of the first and last `n` iterations of a phase.
    pub fn head_tail_means(&self, phase: Phase, n: usize) -> Option<(f64, f64)> {
        let losses: Vec<f64> = self.phase(phase).map(|e| e.loss).collect();
        if losses.len() < n || n == 0 {
            return None;
        }
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        Some((mean(&losses[..n]), mean(&losses[losses.len() - n..])))
    }
}

/// Saved parameters plus enough metadata to rebuild and audit the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model: ModelSpec,
    pub scenario: ScenarioKind,
    pub config_hash: String,
    pub iteration: usize,
    pub params: Vec<f64>,
}

pub const CHECKPOINT_FORMAT: &str = "wildlabel-checkpoint/1";

impl Checkpoint {
    pub fn capture<M: Classifier + ?Sized>(model: &M, config: &TrainConfig, iteration: usize) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: model.spec(),
            scenario: config.scenario,
            config_hash: config.hash(),
            iteration,
            params: model.params().to_vec(),
        }
    }

    pub fn restore(&self) -> Result<AnyModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!("unsupported checkpoint format `{}`", self.format)));
        }
        let mut model = self.model.build();
        model.set_params(&self.params)?;
        Ok(model)
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

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: History,
    /// Noise matrix at the end of training (noise-modeled scenario only).
    pub final_noise: Option<NoiseMatrix>,
}

// Independent RNG streams so that scenarios sharing a seed consume
// identical random numbers for identical work.
const STREAM_INIT: u64 = 1;
const STREAM_UPSAMPLE: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;
const STREAM_MAIN: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Trains `model` in place under `config.scenario`.
///
/// Parameters are re-initialized from `config.seed`. `noise` must be given
/// for the noise-modeled scenario and only for it.
pub fn train<M: Classifier>(
    clean_train: &[Sample],
    noisy_train: &[Sample],
    noise: Option<&NoiseMatrix>,
    model: &mut M,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let scenario = config.scenario;
    match (scenario, noise) {
        (ScenarioKind::NoiseModeledMix, None) => {
            return Err(Error::Config("noise-modeled training requires a noise matrix".into()))
        }
        (ScenarioKind::CleanOnly | ScenarioKind::NaiveMix, Some(_)) => {
            return Err(Error::Config(format!("scenario `{scenario}` takes no noise matrix")))
        }
        _ => {}
    }
    if clean_train.is_empty() {
        return Err(Error::Invalid("clean training set is empty".into()));
    }
    if scenario != ScenarioKind::CleanOnly && noisy_train.is_empty() {
        return Err(Error::Invalid("mixed scenarios need noisy samples".into()));
    }
    for s in clean_train.iter().chain(noisy_train) {
        if s.features.len() != model.input_dim() {
            return Err(Error::Dimension { expected: model.input_dim(), found: s.features.len() });
        }
    }

    model.init(&mut stream(config.seed, STREAM_INIT));
    let mut history = History::default();
    let clean_items: Vec<Item<'_>> = clean_train.iter().map(|s| Item::Hard(s)).collect();

    if scenario == ScenarioKind::CleanOnly {
        run_phase(model, &clean_items, None, config, Phase::Main, STREAM_MAIN, &mut history)?;
        return Ok(TrainOutcome { history, final_noise: None });
    }

    if config.uses_pretraining() {
        run_phase(model, &clean_items, None, config, Phase::Pretrain, STREAM_PRETRAIN, &mut history)?;
    }

    let mut mixture: Vec<Item<'_>> = if config.uses_upsampling() {
        let mut rng = stream(config.seed, STREAM_UPSAMPLE);
        upsample_indices(clean_train.len(), noisy_train.len(), &mut rng)
            .into_iter()
            .map(|i| Item::Hard(&clean_train[i]))
            .collect()
    } else {
        clean_items
    };
    let forward = scenario == ScenarioKind::NoiseModeledMix;
    mixture.extend(noisy_train.iter().map(|s| if forward { Item::Forward(s) } else { Item::Hard(s) }));

    let mut matrix = noise.copied();
    run_phase(model, &mixture, matrix.as_mut(), config, Phase::Main, STREAM_MAIN, &mut history)?;
    Ok(TrainOutcome { history, final_noise: matrix })
}

#[derive(Clone, Copy)]
enum Item<'a> {
    Hard(&'a Sample),
    Forward(&'a Sample),
}

impl<'a> Item<'a> {
    fn sample(&self) -> &'a Sample {
        match *self {
            Item::Hard(s) | Item::Forward(s) => s,
        }
    }
}

/// Endless stream of indices: shuffled epochs, or draws with replacement
/// when the batch is larger than the data.
struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    with_replacement: bool,
}

impl BatchSampler {
    fn new(len: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        BatchSampler {
            order: (0..len).collect(),
            cursor: len,
            rng,
            with_replacement: batch > len,
        }
    }

    fn next_batch(&mut self, batch: usize, out: &mut Vec<usize>) {
        out.clear();
        let len = self.order.len();
        if self.with_replacement {
            out.extend((0..batch).map(|_| self.rng.random_range(0..len)));
            return;
        }
        while out.len() < batch {
            if self.cursor == len {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let take = (batch - out.len()).min(len - self.cursor);
            out.extend_from_slice(&self.order[self.cursor..self.cursor + take]);
            self.cursor += take;
        }
    }
}

fn run_phase<M: Classifier>(
    model: &mut M,
    items: &[Item<'_>],
    mut noise: Option<&mut NoiseMatrix>,
    config: &TrainConfig,
    phase: Phase,
    stream_id: u64,
    history: &mut History,
) -> Result<()> {
    let mut sampler = BatchSampler::new(items.len(), config.batch_size, stream(config.seed, stream_id));
    let epoch_iters = items.len().div_ceil(config.batch_size).max(1);
    let window = config.convergence_window;
    let mut losses: Vec<f64> = Vec::with_capacity(config.max_iterations);
    let mut batch = Vec::with_capacity(config.batch_size);

    for iteration in 0..config.max_iterations {
        sampler.next_batch(config.batch_size, &mut batch);
        let lr = lr_at(iteration, config);
        let (loss, grad) = {
            let features: Vec<&[f64]> = batch.iter().map(|&i| items[i].sample().features.as_slice()).collect();
            let matrix = noise.as_deref();
            let targets: Vec<Target<'_>> = batch
                .iter()
                .map(|&i| match (items[i], matrix) {
                    (Item::Forward(s), Some(m)) => Target::Forward { noisy: s.label, matrix: m },
                    (item, _) => Target::Label(item.sample().label),
                })
                .collect();
            match model.loss_and_gradient(&features, &targets) {
                Ok(v) => v,
                Err(Error::InconsistentNoiseModel(_)) => (f64::INFINITY, Vec::new()),
                Err(e) => return Err(e),
            }
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                iteration,
                loss,
                checkpoint: Box::new(Checkpoint::capture(model, config, iteration)),
            });
        }
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        history.entries.push(HistoryEntry { phase, iteration, loss, lr });
        losses.push(loss);

        let done = iteration + 1;
        if let (Some(every), Some(matrix)) = (config.em_refresh_epochs, noise.as_deref_mut()) {
            if done % (every * epoch_iters) == 0 {
                *matrix = refresh_noise(model, items, matrix, config.em_smoothing)?;
                history.noise_refreshes.push(*matrix);
            }
        }
        if done % window == 0 && done >= 2 * window {
            let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
            let previous = mean(&losses[done - 2 * window..done - window]);
            let current = mean(&losses[done - window..]);
            if (previous - current) / previous.abs().max(f64::MIN_POSITIVE) < config.convergence_tolerance {
                break;
            }
        }
    }
    Ok(())
}

fn refresh_noise<M: Classifier>(model: &M, items: &[Item<'_>], current: &NoiseMatrix, smoothing: f64) -> Result<NoiseMatrix> {
    let mut posteriors = Vec::new();
    let mut labels = Vec::new();
    for item in items {
        if let Item::Forward(s) = item {
            let p = model.probabilities(&s.features);
            posteriors.push(noisemodel::posterior(&p, current, s.label)?);
            labels.push(s.label);
        }
    }
    noisemodel::update_noise_matrix(&posteriors, &labels, smoothing)
}
