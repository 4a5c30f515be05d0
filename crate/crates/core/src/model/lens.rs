//! Reading vocabulary distributions off hidden states.

use super::ops::softmax;
use super::ModelError;
use crate::trace::LensMatrix;

/// Tolerance on `|sum - 1|` for a [`Distribution`].
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

/// Probability vector over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, ModelError> {
        if probs.is_empty() {
            return Err(ModelError::EmptyInput("distribution"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ModelError::InvalidDistribution(
                "entries must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(ModelError::InvalidDistribution(format!("sums to {sum}")));
        }
        Ok(Distribution(probs))
    }

    pub fn point_mass(len: usize, index: usize) -> Result<Self, ModelError> {
        if index >= len {
            return Err(ModelError::TokenOutOfVocab {
                token: index as u32,
                vocab_size: len,
            });
        }
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        Ok(Distribution(probs))
    }

    pub fn uniform(len: usize) -> Result<Self, ModelError> {
        if len == 0 {
            return Err(ModelError::EmptyInput("distribution"));
        }
        Ok(Distribution(vec![1.0 / len as f64; len]))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Softmax of the inner products of `h` with every embedding row.
pub fn logit_lens<T: Copy + Into<f64>>(
    h: &[T],
    lens: &LensMatrix,
) -> Result<Distribution, ModelError> {
    if h.len() != lens.d_model() {
        return Err(ModelError::Shape(format!(
            "hidden state has {} entries, lens expects {}",
            h.len(),
            lens.d_model()
        )));
    }
    let h: Vec<f64> = h.iter().map(|&v| v.into()).collect();
    let logits: Vec<f64> = (0..lens.vocab_size())
        .map(|t| lens.row(t).iter().zip(&h).map(|(&e, x)| e as f64 * x).sum())
        .collect();
    Ok(Distribution(softmax(&logits)?))
}

/// Argmax with ties going to the lowest index.
pub fn greedy_decode(dist: &Distribution) -> u32 {
    let mut best = 0;
    for (i, &p) in dist.probs().iter().enumerate() {
        if p > dist.probs()[best] {
            best = i;
        }
    }
    best as u32
}
