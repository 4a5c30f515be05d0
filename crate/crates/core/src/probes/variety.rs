//! Spread of answer quality across lexical variants.

use serde::{Deserialize, Serialize};

use super::ProbeError;
use crate::stats::{mean_std, token_f1, Normalizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyRow {
    pub question_id: String,
    pub popularity: f64,
    pub f1: Vec<f64>,
    /// Population standard deviation of `f1`.
    pub variety: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarietyReport {
    pub rows: Vec<VarietyRow>,
}

/// One input item: question id, popularity, gold answer and the decoded
/// answer of every variant.
pub type VarietyInput<'a> = (&'a str, f64, &'a str, &'a [String]);

pub fn response_variety(
    items: &[VarietyInput<'_>],
    normalizer: &Normalizer,
) -> Result<VarietyReport, ProbeError> {
    let rows = items
        .iter()
        .map(|&(id, popularity, gold, answers)| {
            let f1: Vec<f64> = answers
                .iter()
                .map(|a| token_f1(a, gold, normalizer))
                .collect();
            let (_, variety) = mean_std(&f1)?;
            Ok(VarietyRow {
                question_id: id.to_string(),
                popularity,
                f1,
                variety,
            })
        })
        .collect::<Result<_, ProbeError>>()?;
    Ok(VarietyReport { rows })
}
