//! Elementwise activations, classification losses, and seeded dropout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the op's own output.
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let cols = out.cols();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert!(cols == 0 || sum > 0.0);
    }
    out
}

/// Mean cross-entropy of row-wise softmax against integer targets.
/// Returns (loss, dlogits) with the 1/n factor folded into the gradient.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> (f64, Tensor) {
    let n = logits.rows();
    assert_eq!(targets.len(), n, "one target per row");
    let probs = softmax(logits);
    let mut loss = 0.0;
    let mut grad = probs.clone();
    for (r, &t) in targets.iter().enumerate() {
        loss -= probs.at2(r, t).max(1e-300).ln();
        let g = grad.at2(r, t) - 1.0;
        grad.set2(r, t, g);
    }
    let scale = 1.0 / n as f64;
    for v in grad.data_mut() {
        *v *= scale;
    }
    (loss * scale, grad)
}

/// Mean binary cross-entropy on logits; numerically stable form.
/// Returns (loss, dlogits).
pub fn bce_with_logits(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(logits.len(), targets.len());
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(targets) {
        loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        grad.push((sigmoid(z) - y) / n);
    }
    (loss / n, grad)
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else 1/(1-p).
/// Pure function of (seed, step, site); training-mode only by convention.
pub fn dropout_mask(len: usize, p: f64, seed: u64, step: u64, site: u64) -> Vec<f64> {
    let key = seed
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add(step.wrapping_mul(0xbf58476d1ce4e5b9))
        .wrapping_add(site.wrapping_mul(0x94d049bb133111eb));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let keep = 1.0 - p;
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / keep })
        .collect()
}

pub fn apply_mask(x: &Tensor, mask: &[f64]) -> Tensor {
    assert_eq!(x.numel(), mask.len());
    let data = x.data().iter().zip(mask).map(|(a, m)| a * m).collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}
