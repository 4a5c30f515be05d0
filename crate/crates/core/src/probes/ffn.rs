//! Similarity of FFN up-projections across lexical variants, and the
//! companion target-probability curve.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kl::layer_distributions;
use super::{check_batch, check_lens, ProbeError, QuestionTraces, ScalarCurve};
use crate::stats::ZERO_NORM;
use crate::trace::LensMatrix;

/// Normalization of the pairwise cosine sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairDivisor {
    /// All `p^2` ordered pairs, self-pairs included.
    #[default]
    Verbatim,
    /// Mean over the `p(p-1)/2` unordered pairs of distinct variants.
    Distinct,
}

impl FromStr for PairDivisor {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "verbatim" => Ok(PairDivisor::Verbatim),
            "distinct" => Ok(PairDivisor::Distinct),
            _ => Err(format!(
                "unknown pair divisor {s:?} (expected verbatim or distinct)"
            )),
        }
    }
}

impl fmt::Display for PairDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairDivisor::Verbatim => "verbatim",
            PairDivisor::Distinct => "distinct",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurve {
    /// Layers 1..=L.
    pub similarity: ScalarCurve,
    /// Layers 0..=L.
    pub target_probability: ScalarCurve,
}

pub(crate) fn norms(vectors: &[&[f32]]) -> Vec<f64> {
    vectors
        .iter()
        .map(|v| v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt())
        .collect()
}

/// Cosine with precomputed norms; 0 for zero-norm vectors.
pub(crate) fn cosine_with(u: &[f32], v: &[f32], nu: f64, nv: f64) -> f64 {
    if nu < ZERO_NORM || nv < ZERO_NORM {
        log::debug!("zero up-projection, cosine defined as 0");
        return 0.0;
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

/// Pairwise cosine similarity of one question's variant vectors.
pub fn paraphrase_similarity(vectors: &[&[f32]], divisor: PairDivisor) -> Result<f64, ProbeError> {
    let p = vectors.len();
    if p == 0 {
        return Err(ProbeError::Empty("variant vectors"));
    }
    let n = norms(vectors);
    let mut off_diagonal = 0.0;
    for j in 0..p {
        for k in j + 1..p {
            off_diagonal += cosine_with(vectors[j], vectors[k], n[j], n[k]);
        }
    }
    match divisor {
        PairDivisor::Verbatim => {
            let diagonal = n.iter().filter(|&&x| x >= ZERO_NORM).count() as f64;
            Ok((diagonal + 2.0 * off_diagonal) / (p * p) as f64)
        }
        PairDivisor::Distinct => {
            if p < 2 {
                return Err(ProbeError::Empty("distinct variant pairs"));
            }
            Ok(off_diagonal / (p * (p - 1) / 2) as f64)
        }
    }
}

fn scalar_curve(
    layers: Vec<usize>,
    batch: &[QuestionTraces<'_>],
    values: Vec<Vec<f64>>,
) -> ScalarCurve {
    let nq = values.len() as f64;
    let means = (0..layers.len())
        .map(|k| values.iter().map(|v| v[k]).sum::<f64>() / nq)
        .collect();
    ScalarCurve {
        layers,
        batch: means,
        questions: batch
            .iter()
            .map(|q| q.question_id.clone())
            .zip(values)
            .collect(),
    }
}

/// Per-question similarity of up-projections at layers 1..=L; the batch value
/// is the mean over questions.
pub fn ffn_paraphrase_similarity(
    batch: &[QuestionTraces<'_>],
    divisor: PairDivisor,
) -> Result<ScalarCurve, ProbeError> {
    let (config, _) = check_batch(batch)?;
    let values = batch
        .par_iter()
        .map(|q| {
            (0..config.num_layers)
                .map(|l| {
                    let vectors: Vec<&[f32]> = q
                        .traces
                        .iter()
                        .map(|t| t.layers[l].up_projection.as_slice())
                        .collect();
                    paraphrase_similarity(&vectors, divisor)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(scalar_curve(
        (1..=config.num_layers).collect(),
        batch,
        values,
    ))
}

/// Mean lens probability of each trace's answer token, layers 0..=L.
pub fn target_probability_curve(
    batch: &[QuestionTraces<'_>],
    lens: &LensMatrix,
) -> Result<ScalarCurve, ProbeError> {
    let (config, p) = check_batch(batch)?;
    check_lens(lens, &config)?;
    let values = batch
        .par_iter()
        .map(|q| {
            let mut sums = vec![0.0; config.num_layers + 1];
            for t in &q.traces {
                let a = t.answer_first_token as usize;
                for (s, d) in sums.iter_mut().zip(layer_distributions(t, lens)?) {
                    *s += d.probs()[a];
                }
            }
            Ok(sums.into_iter().map(|s| s / p as f64).collect())
        })
        .collect::<Result<Vec<_>, ProbeError>>()?;
    Ok(scalar_curve(
        (0..=config.num_layers).collect(),
        batch,
        values,
    ))
}
