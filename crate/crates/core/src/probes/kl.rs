//! Logit-lens convergence toward the golden answer token.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    aggregate, check_batch, check_lens, LayerCurve, ProbeError, QuestionStats, QuestionTraces,
};
use crate::model::{logit_lens, Distribution};
use crate::stats::kl_divergence;
use crate::trace::{ActivationTrace, LensMatrix};

/// Lens probabilities are floored here before taking logs.
pub const DEFAULT_KL_FLOOR: f64 = 1e-12;

/// KL of the golden distribution against the lens output, layers 0..=L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCurve {
    pub curve: LayerCurve,
    pub questions: Vec<QuestionStats>,
    pub floor: f64,
}

/// `KL(point mass at answer || dist)` in its reduced form `-ln max(p[a], floor)`.
pub fn golden_kl(dist: &[f64], answer: usize, floor: f64) -> f64 {
    -dist[answer].max(floor).ln()
}

/// Lens distributions of one trace for layers 0..=L.
pub(crate) fn layer_distributions(
    trace: &ActivationTrace,
    lens: &LensMatrix,
) -> Result<Vec<Distribution>, ProbeError> {
    (0..=trace.config.num_layers)
        .map(|l| Ok(logit_lens(trace.hidden_at(l), lens)?))
        .collect()
}

/// The golden distribution of each trace is a point mass on its
/// `answer_first_token`.
pub fn kl_convergence(
    batch: &[QuestionTraces<'_>],
    lens: &LensMatrix,
    floor: f64,
) -> Result<ConvergenceCurve, ProbeError> {
    let (config, _) = check_batch(batch)?;
    check_lens(lens, &config)?;
    let values = batch
        .par_iter()
        .map(|q| {
            q.traces
                .iter()
                .map(|t| {
                    let golden =
                        Distribution::point_mass(config.vocab_size, t.answer_first_token as usize)?;
                    layer_distributions(t, lens)?
                        .iter()
                        .map(|p| Ok(kl_divergence(golden.probs(), p.probs(), floor)?))
                        .collect::<Result<Vec<f64>, ProbeError>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let layers = (0..=config.num_layers).collect();
    let ids = batch.iter().map(|q| q.question_id.clone()).collect();
    let (curve, questions) = aggregate(layers, ids, values)?;
    Ok(ConvergenceCurve {
        curve,
        questions,
        floor,
    })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    fn lens4() -> LensMatrix {
        // identity rows: logits equal the hidden state
        LensMatrix::new(
            4,
            4,
            (0..16)
                .map(|i| if i % 5 == 0 { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap()
    }

    fn trace_with_hidden(id: &str, hidden: Vec<Vec<f32>>, answer: u32) -> ActivationTrace {
        let cfg = fixtures::config(hidden.len() - 1, 4, 2, 1, 4);
        let layers = hidden.len() - 1;
        fixtures::trace(
            cfg,
            id,
            hidden,
            vec![vec![vec![0.5, 0.5]]; layers],
            vec![vec![1.0, 0.0]; layers],
            vec![0],
            answer,
        )
    }

    #[test]
    fn uniform_lens_gives_ln4() {
        let t = trace_with_hidden("a", vec![vec![0.0; 4]; 2], 2);
        let batch = [QuestionTraces {
            question_id: "q".into(),
            traces: vec![&t],
        }];
        let c = kl_convergence(&batch, &lens4(), DEFAULT_KL_FLOOR).unwrap();
        assert_eq!(c.curve.layers, vec![0, 1]);
        for v in &c.curve.mean {
            assert!((v - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn confident_layer_approaches_zero() {
        let t = trace_with_hidden("a", vec![vec![0.0; 4], vec![0.0, 60.0, 0.0, 0.0]], 1);
        let batch = [QuestionTraces {
            question_id: "q".into(),
            traces: vec![&t],
        }];
        let c = kl_convergence(&batch, &lens4(), DEFAULT_KL_FLOOR).unwrap();
        assert!(c.curve.mean[1] < 1e-20);
    }

    #[test]
    fn floor_bounds_divergence() {
        let t = trace_with_hidden("a", vec![vec![0.0, 0.0, 0.0, 2000.0]; 2], 0);
        let batch = [QuestionTraces {
            question_id: "q".into(),
            traces: vec![&t],
        }];
        let c = kl_convergence(&batch, &lens4(), 1e-12).unwrap();
        assert!((c.curve.mean[0] - 12.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn mean_and_spread_over_variants() {
        // variant divergences ln 4 and ~0 at layer 1
        let a = trace_with_hidden("a/1", vec![vec![0.0; 4]; 2], 1);
        let b = trace_with_hidden("a/2", vec![vec![0.0; 4], vec![0.0, 80.0, 0.0, 0.0]], 1);
        let batch = [QuestionTraces {
            question_id: "a".into(),
            traces: vec![&a, &b],
        }];
        let c = kl_convergence(&batch, &lens4(), DEFAULT_KL_FLOOR).unwrap();
        let ln4 = 4f64.ln();
        assert!((c.curve.mean[1] - ln4 / 2.0).abs() < 1e-12);
        assert!((c.curve.spread[1] - ln4 / 2.0).abs() < 1e-12);
        assert_eq!(c.questions[0].per_variant.len(), 2);
    }

    #[test]
    fn mismatched_variant_counts_rejected() {
        let a = trace_with_hidden("a", vec![vec![0.0; 4]; 2], 1);
        let batch = [
            QuestionTraces {
                question_id: "a".into(),
                traces: vec![&a, &a],
            },
            QuestionTraces {
                question_id: "b".into(),
                traces: vec![&a],
            },
        ];
        assert!(matches!(
            kl_convergence(&batch, &lens4(), DEFAULT_KL_FLOOR),
            Err(ProbeError::ParaphraseCountMismatch {
                expected: 2,
                actual: 1,
                ..
            })
        ));
    }

    #[test]
    fn lens_shape_checked() {
        let a = trace_with_hidden("a", vec![vec![0.0; 4]; 2], 1);
        let batch = [QuestionTraces {
            question_id: "a".into(),
            traces: vec![&a],
        }];
        let lens = LensMatrix::new(5, 4, vec![0.0; 20]).unwrap();
        assert!(matches!(
            kl_convergence(&batch, &lens, DEFAULT_KL_FLOOR),
            Err(ProbeError::LensMismatch { .. })
        ));
    }

    #[test]
    fn reduced_form_matches_full_sum() {
        let p = [0.1, 0.2, 0.3, 0.4];
        for a in 0..4 {
            let mut g = [0.0; 4];
            g[a] = 1.0;
            let full = kl_divergence(&g, &p, DEFAULT_KL_FLOOR).unwrap();
            assert!((full - golden_kl(&p, a, DEFAULT_KL_FLOOR)).abs() < 1e-15);
        }
    }
}
