mod fixtures;
mod oracles;

use popprobe::model::{logit_lens, softmax};
use popprobe::stats::{
    cosine_similarity, kl_divergence, student_t_sf, token_f1, welch_one_sided, Direction,
    Normalizer,
};
use popprobe::trace::{read_trace, write_trace, LensMatrix, ModelConfig};
use proptest::prelude::*;

fn probs(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>() + 1e-9;
        v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect()
    })
}

fn words() -> impl Strategy<Value = String> {
    prop::collection::vec(
        prop::sample::select(vec!["dublin", "City", "of", "new", "York", "the", "paris,"]),
        0..5,
    )
    .prop_map(|w| w.join(" "))
}

proptest! {
    #[test]
    fn trace_roundtrip(
        layers in 1usize..4,
        heads in 1usize..3,
        d_inter in 1usize..6,
        seq in 1usize..7,
        seed in any::<u64>(),
    ) {
        let cfg = ModelConfig {
            num_layers: layers,
            d_model: 2 * heads,
            d_inter,
            d_mid: 2 * heads,
            num_heads: heads,
            vocab_size: 9,
            max_seq_len: 8,
        };
        let tokens: Vec<u32> = (0..seq as u32).map(|i| (i * 7 + seed as u32) % 9).collect();
        let trace = fixtures::sample_trace(cfg, "x/1", &tokens, seed);
        let mut buf = Vec::new();
        let n = write_trace(&trace, &mut buf).unwrap();
        prop_assert_eq!(n as usize, buf.len());
        prop_assert_eq!(read_trace(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn softmax_is_shift_invariant(v in prop::collection::vec(-30.0f64..30.0, 1..12), c in -100.0f64..100.0) {
        let a = softmax(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let b = softmax(&shifted).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lens_is_invariant_under_rotation(
        h in prop::collection::vec(-2.0f64..2.0, 3),
        e in prop::collection::vec(-2.0f64..2.0, 15),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        // rotate the first two coordinates of h and of every embedding row
        let rot = |v: &[f64]| {
            let (c, s) = (angle.cos(), angle.sin());
            vec![c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
        };
        let lens = LensMatrix::new(5, 3, e.iter().map(|&x| x as f32).collect()).unwrap();
        let rows: Vec<f32> = e.chunks(3).flat_map(|r| rot(&r.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>())).map(|x| x as f32).collect();
        let rotated = LensMatrix::new(5, 3, rows).unwrap();
        let a = logit_lens(&h, &lens).unwrap();
        let b = logit_lens(&rot(&h), &rotated).unwrap();
        for (x, y) in a.probs().iter().zip(b.probs()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn cosine_is_scale_invariant(
        u in prop::collection::vec(-5.0f64..5.0, 1..10),
        c in 1e-3f64..1e3,
        seed in any::<u64>(),
    ) {
        let v: Vec<f64> = u.iter().enumerate().map(|(i, x)| x * ((seed >> (i % 60)) & 1) as f64 - 0.5 * i as f64).collect();
        let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
        let a = cosine_similarity(&u, &v).unwrap();
        let b = cosine_similarity(&scaled, &v).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn kl_is_nonnegative_and_zero_on_equal(p in probs(6), q in probs(6)) {
        prop_assert_eq!(kl_divergence(&p, &p, 1e-12).unwrap(), 0.0);
        prop_assert!(kl_divergence(&p, &q, 1e-12).unwrap() >= 0.0);
    }

    #[test]
    fn f1_is_symmetric(a in words(), b in words()) {
        let n = Normalizer::default();
        prop_assert_eq!(token_f1(&a, &b, &n), token_f1(&b, &a, &n));
        let equal = !oracles::token_counts(&a).is_empty()
            && oracles::token_counts(&a) == oracles::token_counts(&b);
        prop_assert_eq!(token_f1(&a, &b, &n) == 1.0, equal);
    }

    #[test]
    fn welch_directions_sum_to_one(
        a in prop::collection::vec(-10.0f64..10.0, 2..12),
        b in prop::collection::vec(-10.0f64..10.0, 2..12),
    ) {
        let g = welch_one_sided(&a, &b, Direction::Greater).unwrap();
        let l = welch_one_sided(&a, &b, Direction::Less).unwrap();
        prop_assume!(!g.degenerate);
        prop_assert!((g.p_value_one_sided + l.p_value_one_sided - 1.0).abs() < 1e-9);
        prop_assert!(g.degrees_of_freedom > 0.0);
    }
}

#[test]
fn t_survival_matches_numeric_integration() {
    for dof in [1.0, 2.5, 10.0, 98.0] {
        for i in 0..=40 {
            let t = -5.0 + 0.25 * i as f64;
            let oracle = if t >= 0.0 {
                oracles::t_sf_by_integration(t, dof)
            } else {
                1.0 - oracles::t_sf_by_integration(-t, dof)
            };
            let got = student_t_sf(t, dof);
            assert!(
                (got - oracle).abs() < 1e-8,
                "dof {dof}, t {t}: {got} vs {oracle}"
            );
        }
    }
}
