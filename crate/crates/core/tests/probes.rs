mod fixtures;
mod oracles;

use popprobe::probes::{
    attention_constraint_score, attention_score, ffn_paraphrase_similarity, kl_convergence,
    paraphrase_similarity, relation_similarity, target_probability_curve, PairDivisor,
    QuestionTraces, RelationDivisor, DEFAULT_KL_FLOOR,
};
use popprobe::trace::{ActivationTrace, LensMatrix, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        num_layers: 3,
        d_model: 4,
        d_inter: 6,
        d_mid: 4,
        num_heads: 2,
        vocab_size: 12,
        max_seq_len: 8,
    }
}

/// `questions x variants` random traces plus a random lens.
fn instance(
    seed: u64,
    questions: usize,
    variants: usize,
) -> (Vec<Vec<ActivationTrace>>, LensMatrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = config();
    let traces = (0..questions)
        .map(|q| {
            (0..variants)
                .map(|j| {
                    let n = rng.random_range(2..=8);
                    let tokens: Vec<u32> = (0..n).map(|_| rng.random_range(0..12)).collect();
                    let mut t =
                        fixtures::sample_trace(cfg, &format!("q{q}/{j}"), &tokens, rng.random());
                    t.answer_first_token = rng.random_range(0..12);
                    t
                })
                .collect()
        })
        .collect();
    let lens = LensMatrix::new(
        12,
        4,
        (0..48).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    (traces, lens)
}

fn batch(traces: &[Vec<ActivationTrace>]) -> Vec<QuestionTraces<'_>> {
    traces
        .iter()
        .enumerate()
        .map(|(i, ts)| QuestionTraces {
            question_id: format!("q{i}"),
            traces: ts.iter().collect(),
        })
        .collect()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn curves_match_brute_force() {
    for seed in 0..40 {
        let q = 1 + seed as usize % 5;
        let p = 1 + seed as usize % 3;
        let (traces, lens) = instance(seed, q, p);
        let b = batch(&traces);

        let kl: Vec<Vec<Vec<f64>>> = traces
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| {
                        let mut golden = vec![0.0; 12];
                        golden[t.answer_first_token as usize] = 1.0;
                        (0..=3)
                            .map(|l| {
                                oracles::full_kl(
                                    &golden,
                                    &oracles::naive_lens(t.hidden_at(l), &lens),
                                    1e-12,
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let (mean, spread) = oracles::batch_stats(&kl);
        let got = kl_convergence(&b, &lens, DEFAULT_KL_FLOOR).unwrap();
        assert!(close(&got.curve.mean, &mean, 1e-9), "seed {seed}");
        assert!(close(&got.curve.spread, &spread, 1e-9), "seed {seed}");
        assert_eq!(got.curve.layers, vec![0, 1, 2, 3]);

        let attn: Vec<Vec<Vec<f64>>> = traces
            .iter()
            .map(|ts| {
                ts.iter()
                    .map(|t| {
                        t.layers
                            .iter()
                            .map(|r| {
                                oracles::attn_score(&r.attention_rows, &t.constraint_positions)
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let (mean, spread) = oracles::batch_stats(&attn);
        let got = attention_constraint_score(&b).unwrap();
        assert!(close(&got.curve.mean, &mean, 1e-9));
        assert!(close(&got.curve.spread, &spread, 1e-9));

        let sim: Vec<f64> = (0..3)
            .map(|l| {
                traces
                    .iter()
                    .map(|ts| {
                        let vs: Vec<&[f32]> = ts
                            .iter()
                            .map(|t| t.layers[l].up_projection.as_slice())
                            .collect();
                        oracles::paraphrase_sim(&vs)
                    })
                    .sum::<f64>()
                    / q as f64
            })
            .collect();
        let got = ffn_paraphrase_similarity(&b, PairDivisor::Verbatim).unwrap();
        assert!(close(&got.batch, &sim, 1e-9));

        let prob: Vec<f64> = (0..=3)
            .map(|l| {
                traces
                    .iter()
                    .map(|ts| {
                        ts.iter()
                            .map(|t| {
                                oracles::naive_lens(t.hidden_at(l), &lens)
                                    [t.answer_first_token as usize]
                            })
                            .sum::<f64>()
                            / p as f64
                    })
                    .sum::<f64>()
                    / q as f64
            })
            .collect();
        let got = target_probability_curve(&b, &lens).unwrap();
        assert!(close(&got.batch, &prob, 1e-9));
    }
}

#[test]
fn heatmap_matches_brute_force_and_is_symmetric() {
    for seed in 0..20 {
        let m = 1 + seed as usize % 3;
        let (traces, _) = instance(100 + seed, 3, m);
        let groups: Vec<(String, Vec<&ActivationTrace>)> = traces
            .iter()
            .enumerate()
            .map(|(i, ts)| (format!("r{i}"), ts.iter().collect()))
            .collect();
        let h = relation_similarity(&groups, RelationDivisor::Mean).unwrap();
        for (k, &layer) in h.layers.iter().enumerate() {
            for x in 0..3 {
                for y in 0..3 {
                    let want = oracles::relation_sim(&groups[x].1, &groups[y].1, layer);
                    assert!((h.values[k][x][y] - want).abs() < 1e-9);
                    assert_eq!(h.values[k][x][y], h.values[k][y][x]);
                }
            }
        }
        if m >= 2 {
            let pairs = relation_similarity(&groups, RelationDivisor::Pairs).unwrap();
            let factor = (m * m) as f64 / (m * (m - 1) / 2) as f64;
            assert!((pairs.values[0][0][1] - factor * h.values[0][0][1]).abs() < 1e-12);
        }
    }
}

#[test]
fn distinct_divisor_relates_to_verbatim() {
    let (traces, _) = instance(7, 1, 3);
    let vs: Vec<&[f32]> = traces[0]
        .iter()
        .map(|t| t.layers[0].up_projection.as_slice())
        .collect();
    let v = paraphrase_similarity(&vs, PairDivisor::Verbatim).unwrap();
    let d = paraphrase_similarity(&vs, PairDivisor::Distinct).unwrap();
    // p^2 * v = p + 2 * C(p,2) * d
    assert!((9.0 * v - (3.0 + 6.0 * d)).abs() < 1e-12);
}

fn vectors(n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(prop::collection::vec(-3.0f32..3.0, dim), n)
}

proptest! {
    #[test]
    fn raising_constraint_attention_never_lowers_score(
        raw in prop::collection::vec(0.01f64..1.0, 6),
        constraints in prop::collection::btree_set(0usize..5, 1..4),
        pick in 0usize..3,
        boost in 0.0f64..0.9,
    ) {
        let (traces, _) = instance(1, 1, 1);
        let mut rec = traces[0][0].layers[0].clone();
        let sum: f64 = raw.iter().sum();
        let row: Vec<f32> = raw.iter().map(|x| (x / sum) as f32).collect();
        rec.attention_rows = vec![row.clone(), row.clone()];
        let constraints: Vec<usize> = constraints.into_iter().collect();
        let before = attention_score(&rec, &constraints);
        let c = constraints[pick % constraints.len()];
        // move a share of the non-constraint mass onto c
        let mut boosted: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        let free: f64 = (0..6).filter(|i| !constraints.contains(i)).map(|i| boosted[i]).sum();
        for (i, a) in boosted.iter_mut().enumerate() {
            if !constraints.contains(&i) {
                *a *= 1.0 - boost;
            }
        }
        boosted[c] += boost * free;
        rec.attention_rows[0] = boosted.iter().map(|&x| x as f32).collect();
        let after = attention_score(&rec, &constraints);
        prop_assert!(after >= before - 1e-7);
        prop_assert!((0.0..=1.0 + 1e-6).contains(&after));
    }

    #[test]
    fn similarity_is_one_iff_positive_multiples(
        base in prop::collection::vec(-3.0f32..3.0, 4),
        scales in prop::collection::vec(0.1f32..5.0, 2..5),
        other in prop::collection::vec(-3.0f32..3.0, 4),
    ) {
        prop_assume!(base.iter().map(|x| x * x).sum::<f32>() > 0.1);
        let vs: Vec<Vec<f32>> = scales.iter().map(|s| base.iter().map(|x| x * s).collect()).collect();
        let refs: Vec<&[f32]> = vs.iter().map(|v| v.as_slice()).collect();
        prop_assert!((paraphrase_similarity(&refs, PairDivisor::Verbatim).unwrap() - 1.0).abs() < 1e-6);
        let nb = base.iter().map(|x| x * x).sum::<f32>().sqrt();
        let no = other.iter().map(|x| x * x).sum::<f32>().sqrt();
        let cos = base.iter().zip(&other).map(|(a, b)| a * b).sum::<f32>() / (nb * no);
        prop_assume!(no > 0.1 && cos < 0.99);
        let mut mixed = refs.clone();
        mixed.push(&other);
        prop_assert!(paraphrase_similarity(&mixed, PairDivisor::Verbatim).unwrap() < 1.0 - 1e-6);
    }

    #[test]
    fn similarities_are_scale_invariant(vs in vectors(6, 5), c in 0.01f32..100.0) {
        let refs: Vec<&[f32]> = vs.iter().map(|v| v.as_slice()).collect();
        let scaled: Vec<Vec<f32>> = vs.iter().map(|v| v.iter().map(|x| x * c).collect()).collect();
        let srefs: Vec<&[f32]> = scaled.iter().map(|v| v.as_slice()).collect();
        let a = paraphrase_similarity(&refs, PairDivisor::Verbatim).unwrap();
        let b = paraphrase_similarity(&srefs, PairDivisor::Verbatim).unwrap();
        // scaling happens in f32, so the inputs themselves are perturbed by ~1e-7
        prop_assert!((a - b).abs() < 1e-6);
        let exact: Vec<Vec<f32>> = vs.iter().map(|v| v.iter().map(|x| x * 4.0).collect()).collect();
        let erefs: Vec<&[f32]> = exact.iter().map(|v| v.as_slice()).collect();
        prop_assert!((a - paraphrase_similarity(&erefs, PairDivisor::Verbatim).unwrap()).abs() < 1e-9);
    }
}

fn groups(ts: &[Vec<ActivationTrace>]) -> Vec<(String, Vec<&ActivationTrace>)> {
    ts.iter()
        .enumerate()
        .map(|(i, t)| (format!("r{i}"), t.iter().collect()))
        .collect()
}

#[test]
fn heatmap_scale_invariance() {
    let (traces, _) = instance(3, 2, 3);
    let mut scaled = traces.clone();
    for t in scaled.iter_mut().flatten() {
        for r in &mut t.layers {
            for x in &mut r.up_projection {
                *x *= 8.0;
            }
        }
    }
    let ha = relation_similarity(&groups(&traces), RelationDivisor::Mean).unwrap();
    let hb = relation_similarity(&groups(&scaled), RelationDivisor::Mean).unwrap();
    for (x, y) in ha
        .values
        .iter()
        .flatten()
        .flatten()
        .zip(hb.values.iter().flatten().flatten())
    {
        assert!((x - y).abs() < 1e-9);
    }
}
