//! Reference classifiers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};

use super::loss::{sample_loss, softmax, Target};

pub type Logits = [f64; NUM_CLASSES];

/// A differentiable 7-way classifier over flat feature vectors.
///
/// Parameters live in one flat vector so that checkpoints, finite-difference
/// checks and the optimizer can treat every model the same way.
pub trait Classifier: Send + Sync {
    fn spec(&self) -> ModelSpec;

    fn input_dim(&self) -> usize {
        self.spec().input_dim()
    }

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn forward(&self, features: &[f64]) -> Logits;

    /// Adds `d loss / d params` for one sample into `grad`, given
    /// `d loss / d logits`.
    fn backward(&self, features: &[f64], dlogits: &Logits, grad: &mut [f64]);

    /// Glorot-uniform weights, zero biases.
    fn init<R: Rng>(&mut self, rng: &mut R)
    where
        Self: Sized;

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let own = self.params_mut();
        if own.len() != params.len() {
            return Err(Error::Dimension { expected: own.len(), found: params.len() });
        }
        own.copy_from_slice(params);
        Ok(())
    }

    fn probabilities(&self, features: &[f64]) -> [f64; NUM_CLASSES] {
        softmax(&self.forward(features))
    }

    /// Argmax prediction; ties go to the lowest class code.
    fn predict(&self, features: &[f64]) -> ExpressionLabel {
        ExpressionLabel::ALL[argmax(&self.forward(features))]
    }

    /// Mean loss and mean parameter gradient over a batch.
    fn loss_and_gradient(&self, batch: &[&[f64]], targets: &[Target<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.len() != targets.len() || batch.is_empty() {
            return Err(Error::Dimension { expected: batch.len(), found: targets.len() });
        }
        let mut grad = vec![0.0; self.params().len()];
        let mut total = 0.0;
        for (x, target) in batch.iter().zip(targets) {
            if x.len() != self.input_dim() {
                return Err(Error::Dimension { expected: self.input_dim(), found: x.len() });
            }
            let logits = self.forward(x);
            let (loss, dlogits) = sample_loss(&logits, target)?;
            total += loss;
            self.backward(x, &dlogits, &mut grad);
        }
        let n = batch.len() as f64;
        for g in &mut grad {
            *g /= n;
        }
        Ok((total / n, grad))
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn glorot<R: Rng>(rng: &mut R, weights: &mut [f64], fan_in: usize, fan_out: usize) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for w in weights {
        *w = rng.random_range(-limit..=limit);
    }
}

/// Architecture description, sufficient to rebuild a model from a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Affine { input_dim: usize },
    Mlp { input_dim: usize, hidden: usize },
}

impl ModelSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            ModelSpec::Affine { input_dim } | ModelSpec::Mlp { input_dim, .. } => input_dim,
        }
    }

    pub fn build(self) -> AnyModel {
        match self {
            ModelSpec::Affine { input_dim } => AnyModel::Affine(AffineSoftmax::new(input_dim)),
            ModelSpec::Mlp { input_dim, hidden } => AnyModel::Mlp(Mlp::new(input_dim, hidden)),
        }
    }
}

/// Logits `W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSoftmax {
    input_dim: usize,
    // [W (7 x d) row-major | b (7)]
    params: Vec<f64>,
}

impl AffineSoftmax {
    pub fn new(input_dim: usize) -> Self {
        AffineSoftmax {
            input_dim,
            params: vec![0.0; NUM_CLASSES * input_dim + NUM_CLASSES],
        }
    }
}

impl Classifier for AffineSoftmax {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Affine { input_dim: self.input_dim }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Logits {
        let d = self.input_dim;
        let (w, b) = self.params.split_at(NUM_CLASSES * d);
        let mut out = [0.0; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            let row = &w[k * d..(k + 1) * d];
            out[k] = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[k];
        }
        out
    }

    fn backward(&self, x: &[f64], dlogits: &Logits, grad: &mut [f64]) {
        let d = self.input_dim;
        let (gw, gb) = grad.split_at_mut(NUM_CLASSES * d);
        for k in 0..NUM_CLASSES {
            let g = dlogits[k];
            for (gi, xi) in gw[k * d..(k + 1) * d].iter_mut().zip(x) {
                *gi += g * xi;
            }
            gb[k] += g;
        }
    }

    fn init<R: Rng>(&mut self, rng: &mut R) {
        let d = self.input_dim;
        let (w, b) = self.params.split_at_mut(NUM_CLASSES * d);
        glorot(rng, w, d, NUM_CLASSES);
        b.fill(0.0);
    }
}

/// One hidden rectifier layer: `W2 relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    input_dim: usize,
    hidden: usize,
    // [W1 (h x d) | b1 (h) | W2 (7 x h) | b2 (7)]
    params: Vec<f64>,
}

impl Mlp {
    pub fn new(input_dim: usize, hidden: usize) -> Self {
        let n = hidden * input_dim + hidden + NUM_CLASSES * hidden + NUM_CLASSES;
        Mlp { input_dim, hidden, params: vec![0.0; n] }
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (d, h) = (self.input_dim, self.hidden);
        let (w1, rest) = self.params.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(NUM_CLASSES * h);
        (w1, b1, w2, b2)
    }

    fn pre_activations(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        let (w1, b1, _, _) = self.split();
        (0..self.hidden)
            .map(|u| w1[u * d..(u + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[u])
            .collect()
    }
}

impl Classifier for Mlp {
    fn spec(&self) -> ModelSpec {
        ModelSpec::Mlp { input_dim: self.input_dim, hidden: self.hidden }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, x: &[f64]) -> Logits {
        let h = self.hidden;
        let act: Vec<f64> = self.pre_activations(x).into_iter().map(|v| v.max(0.0)).collect();
        let (_, _, w2, b2) = self.split();
        let mut out = [0.0; NUM_CLASSES];
        for k in 0..NUM_CLASSES {
            out[k] = w2[k * h..(k + 1) * h].iter().zip(&act).map(|(a, b)| a * b).sum::<f64>() + b2[k];
        }
        out
    }

    fn backward(&self, x: &[f64], dlogits: &Logits, grad: &mut [f64]) {
        let (d, h) = (self.input_dim, self.hidden);
        let pre = self.pre_activations(x);
        let (_, _, w2, _) = self.split();
        let mut dhidden = vec![0.0; h];
        for k in 0..NUM_CLASSES {
            for u in 0..h {
                dhidden[u] += dlogits[k] * w2[k * h + u];
            }
        }
        let (gw1, rest) = grad.split_at_mut(h * d);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(NUM_CLASSES * h);
        for k in 0..NUM_CLASSES {
            for u in 0..h {
                gw2[k * h + u] += dlogits[k] * pre[u].max(0.0);
            }
            gb2[k] += dlogits[k];
        }
        for u in 0..h {
            if pre[u] <= 0.0 {
                continue;
            }
            let g = dhidden[u];
            for (gi, xi) in gw1[u * d..(u + 1) * d].iter_mut().zip(x) {
                *gi += g * xi;
            }
            gb1[u] += g;
        }
    }

    fn init<R: Rng>(&mut self, rng: &mut R) {
        let (d, h) = (self.input_dim, self.hidden);
        let (w1, rest) = self.params.split_at_mut(h * d);
        let (b1, rest) = rest.split_at_mut(h);
        let (w2, b2) = rest.split_at_mut(NUM_CLASSES * h);
        glorot(rng, w1, d, h);
        b1.fill(0.0);
        glorot(rng, w2, h, NUM_CLASSES);
        b2.fill(0.0);
    }
}

/// Either reference model, for code that picks the architecture at runtime.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Affine(AffineSoftmax),
    Mlp(Mlp),
}

impl Classifier for AnyModel {
    fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Affine(m) => m.spec(),
            AnyModel::Mlp(m) => m.spec(),
        }
    }

    fn params(&self) -> &[f64] {
        match self {
            AnyModel::Affine(m) => m.params(),
            AnyModel::Mlp(m) => m.params(),
        }
    }

    fn params_mut(&mut self) -> &mut [f64] {
        match self {
            AnyModel::Affine(m) => m.params_mut(),
            AnyModel::Mlp(m) => m.params_mut(),
        }
    }

    fn forward(&self, x: &[f64]) -> Logits {
        match self {
            AnyModel::Affine(m) => m.forward(x),
            AnyModel::Mlp(m) => m.forward(x),
        }
    }

    fn backward(&self, x: &[f64], dlogits: &Logits, grad: &mut [f64]) {
        match self {
            AnyModel::Affine(m) => m.backward(x, dlogits, grad),
            AnyModel::Mlp(m) => m.backward(x, dlogits, grad),
        }
    }

    fn init<R: Rng>(&mut self, rng: &mut R) {
        match self {
            AnyModel::Affine(m) => m.init(rng),
            AnyModel::Mlp(m) => m.init(rng),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 0.0]), 1);
        assert_eq!(argmax(&[0.0; 7]), 0);
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(AffineSoftmax::new(16).params().len(), 7 * 16 + 7);
        assert_eq!(Mlp::new(16, 8).params().len(), 8 * 16 + 8 + 7 * 8 + 7);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut a = Mlp::new(10, 5);
        let mut b = Mlp::new(10, 5);
        a.init(&mut ChaCha8Rng::seed_from_u64(1));
        b.init(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        let limit = (6.0f64 / 15.0).sqrt();
        assert!(a.params()[..50].iter().all(|w| w.abs() <= limit));
        assert!(a.params()[50..55].iter().all(|&w| w == 0.0));
    }

    #[test]
    fn spec_rebuilds_same_shape() {
        let m = Mlp::new(4, 3);
        let rebuilt = m.spec().build();
        assert_eq!(rebuilt.params().len(), m.params().len());
        let mut any = rebuilt;
        assert!(any.set_params(&[0.0; 3]).is_err());
    }
}
