//! Probe-row attention paid to constraint tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, check_batch, LayerCurve, ProbeError, QuestionStats, QuestionTraces};
use crate::trace::{ActivationTrace, LayerRecord};

/// Attention scores over layers 1..=L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionCurve {
    pub curve: LayerCurve,
    pub questions: Vec<QuestionStats>,
}

/// Max over constraint tokens of the head-averaged probe-row attention.
pub fn attention_score(record: &LayerRecord, constraints: &[usize]) -> f64 {
    let heads = record.attention_rows.len() as f64;
    constraints
        .iter()
        .map(|&c| {
            record
                .attention_rows
                .iter()
                .map(|row| row[c] as f64)
                .sum::<f64>()
                / heads
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_constraints(t: &ActivationTrace) -> Result<(), ProbeError> {
    if t.constraint_positions.is_empty() {
        return Err(ProbeError::NoConstraints {
            prompt_id: t.prompt_id.clone(),
        });
    }
    if let Some(&c) = t
        .constraint_positions
        .iter()
        .find(|&&c| c >= t.probe_position)
    {
        return Err(ProbeError::FutureConstraint {
            prompt_id: t.prompt_id.clone(),
            position: c,
            probe: t.probe_position,
        });
    }
    Ok(())
}

/// Uses each trace's own constraint positions.
pub fn attention_constraint_score(
    batch: &[QuestionTraces<'_>],
) -> Result<AttentionCurve, ProbeError> {
    let (config, _) = check_batch(batch)?;
    for t in batch.iter().flat_map(|q| &q.traces) {
        check_constraints(t)?;
    }
    let values = batch
        .par_iter()
        .map(|q| {
            q.traces
                .iter()
                .map(|t| {
                    t.layers
                        .iter()
                        .map(|r| attention_score(r, &t.constraint_positions))
                        .collect()
                })
                .collect()
        })
        .collect();
    let layers = (1..=config.num_layers).collect();
    let ids = batch.iter().map(|q| q.question_id.clone()).collect();
    let (curve, questions) = aggregate(layers, ids, values)?;
    Ok(AttentionCurve { curve, questions })
}
