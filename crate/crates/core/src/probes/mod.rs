//! Per-layer probes over batches of activation traces.
//!
//! A batch is a list of [`QuestionTraces`], each holding the traces of all
//! lexical variants of one question. Per-question statistics are the mean and
//! population standard deviation over variants; batch statistics are the
//! unweighted means of the per-question values.

mod attention;
mod ffn;
mod kl;
mod relations;
mod variety;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Distribution, ModelError};
use crate::stats::StatsError;
use crate::tokenizer::Vocab;
use crate::trace::{ActivationTrace, LensMatrix, ModelConfig};

pub use attention::{attention_constraint_score, attention_score, AttentionCurve};
pub use ffn::{
    ffn_paraphrase_similarity, paraphrase_similarity, target_probability_curve, PairDivisor,
    SimilarityCurve,
};
pub use kl::{golden_kl, kl_convergence, ConvergenceCurve, DEFAULT_KL_FLOOR};
pub use relations::{
    heatmap_welch, off_diagonal, relation_similarity, RelationDivisor, RelationHeatmap,
};
pub use variety::{response_variety, VarietyInput, VarietyReport, VarietyRow};

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("question {question:?} has {actual} variants, expected {expected}")]
    ParaphraseCountMismatch {
        question: String,
        expected: usize,
        actual: usize,
    },
    #[error("trace {prompt_id:?} does not share the batch model config")]
    ConfigMismatch { prompt_id: String },
    #[error("lens is {lens_vocab} x {lens_d}, traces are {vocab} x {d}")]
    LensMismatch {
        lens_vocab: usize,
        lens_d: usize,
        vocab: usize,
        d: usize,
    },
    #[error("trace {prompt_id:?} has no constraint tokens")]
    NoConstraints { prompt_id: String },
    #[error("trace {prompt_id:?}: constraint position {position} is not before the probe position {probe}")]
    FutureConstraint {
        prompt_id: String,
        position: usize,
        probe: usize,
    },
    #[error("relation {relation:?} has {actual} questions, expected {expected}")]
    UnequalRelationSizes {
        relation: String,
        expected: usize,
        actual: usize,
    },
    #[error("layer {layer} outside 1..={max}")]
    BadLayer { layer: usize, max: usize },
    #[error("answer {0:?} produces no tokens")]
    EmptyAnswer(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Traces of every lexical variant of one question.
#[derive(Debug, Clone)]
pub struct QuestionTraces<'a> {
    pub question_id: String,
    pub traces: Vec<&'a ActivationTrace>,
}

/// Per-question statistics over variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionStats {
    pub question_id: String,
    /// Indexed like the owning curve's `layers`.
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    /// `per_variant[j][k]` is variant j's value at `layers[k]`.
    pub per_variant: Vec<Vec<f64>>,
}

/// Batch mean and spread per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub layers: Vec<usize>,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
}

/// A batch value per layer plus the per-question values it averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarCurve {
    pub layers: Vec<usize>,
    pub batch: Vec<f64>,
    pub questions: Vec<(String, Vec<f64>)>,
}

/// Point mass on the first sub-word token of `answer`.
pub fn golden_distribution(
    answer: &str,
    vocab: &Vocab,
    vocab_size: usize,
) -> Result<(u32, Distribution), ProbeError> {
    let first = vocab
        .encode(answer)
        .first()
        .copied()
        .ok_or_else(|| ProbeError::EmptyAnswer(answer.to_string()))?;
    Ok((first, Distribution::point_mass(vocab_size, first as usize)?))
}

/// Checks that every question has the same number of variants and that all
/// traces share one config; returns that config and the variant count.
pub(crate) fn check_batch(
    batch: &[QuestionTraces<'_>],
) -> Result<(ModelConfig, usize), ProbeError> {
    let first = batch.first().ok_or(ProbeError::Empty("batch"))?;
    let p = first.traces.len();
    let config = first
        .traces
        .first()
        .ok_or(ProbeError::Empty("question variants"))?
        .config;
    for q in batch {
        if q.traces.len() != p {
            return Err(ProbeError::ParaphraseCountMismatch {
                question: q.question_id.clone(),
                expected: p,
                actual: q.traces.len(),
            });
        }
        if let Some(t) = q.traces.iter().find(|t| t.config != config) {
            return Err(ProbeError::ConfigMismatch {
                prompt_id: t.prompt_id.clone(),
            });
        }
    }
    Ok((config, p))
}

pub(crate) fn check_lens(lens: &LensMatrix, config: &ModelConfig) -> Result<(), ProbeError> {
    if !lens.matches(config) {
        return Err(ProbeError::LensMismatch {
            lens_vocab: lens.vocab_size(),
            lens_d: lens.d_model(),
            vocab: config.vocab_size,
            d: config.d_model,
        });
    }
    Ok(())
}

/// Turns `values[question][variant][layer]` into per-question mean/spread
/// and batch averages of both.
pub(crate) fn aggregate(
    layers: Vec<usize>,
    ids: Vec<String>,
    values: Vec<Vec<Vec<f64>>>,
) -> Result<(LayerCurve, Vec<QuestionStats>), ProbeError> {
    let n_layers = layers.len();
    let mut questions = Vec::with_capacity(values.len());
    for (question_id, per_variant) in ids.into_iter().zip(values) {
        let mut mean = Vec::with_capacity(n_layers);
        let mut spread = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let column: Vec<f64> = per_variant.iter().map(|v| v[k]).collect();
            let (m, s) = crate::stats::mean_std(&column)?;
            mean.push(m);
            spread.push(s);
        }
        questions.push(QuestionStats {
            question_id,
            mean,
            spread,
            per_variant,
        });
    }
    let nq = questions.len() as f64;
    let batch_mean = (0..n_layers)
        .map(|k| questions.iter().map(|q| q.mean[k]).sum::<f64>() / nq)
        .collect();
    let batch_spread = (0..n_layers)
        .map(|k| questions.iter().map(|q| q.spread[k]).sum::<f64>() / nq)
        .collect();
    Ok((
        LayerCurve {
            layers,
            mean: batch_mean,
            spread: batch_spread,
        },
        questions,
    ))
}
