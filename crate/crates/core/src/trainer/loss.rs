//! Per-sample losses and their gradients with respect to logits.

use crate::error::Result;
use crate::noisemodel::{posterior_unchecked, Distribution, NoiseMatrix};
use crate::taxonomy::{ExpressionLabel, NUM_CLASSES};

/// Smallest probability fed to `ln`.
const PROB_FLOOR: f64 = 1e-300;

/// What a sample is scored against.
#[derive(Debug, Clone, Copy)]
pub enum Target<'a> {
    /// Cross-entropy against a hard label.
    Label(ExpressionLabel),
    /// Cross-entropy against a target distribution.
    Soft(Distribution),
    /// Cross-entropy of `p Q` against an observed noisy label.
    Forward { noisy: ExpressionLabel, matrix: &'a NoiseMatrix },
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

/// Loss and `d loss / d logits` for one sample.
///
/// Every mode has gradient `p - t` for some target distribution `t`: the
/// one-hot label, the soft target, or (forward mode) the posterior over true
/// labels given the noisy label. With `Q = I` the forward posterior is
/// exactly one-hot, so forward mode reproduces hard-label cross-entropy bit
/// for bit.
pub fn sample_loss(logits: &[f64; NUM_CLASSES], target: &Target<'_>) -> Result<(f64, [f64; NUM_CLASSES])> {
    let p = softmax(logits);
    let mut grad = p;
    let loss = match *target {
        Target::Label(label) => {
            let j = label.code();
            grad[j] -= 1.0;
            -p[j].max(PROB_FLOOR).ln()
        }
        Target::Soft(t) => {
            let mut loss = 0.0;
            for k in 0..NUM_CLASSES {
                grad[k] -= t[k];
                if t[k] > 0.0 {
                    loss -= t[k] * p[k].max(PROB_FLOOR).ln();
                }
            }
            loss
        }
        Target::Forward { noisy, matrix } => {
            let (post, likelihood) = posterior_unchecked(&p, matrix, noisy)?;
            for k in 0..NUM_CLASSES {
                grad[k] -= post[k];
            }
            -likelihood.max(PROB_FLOOR).ln()
        }
    };
    Ok((loss, grad))
}
