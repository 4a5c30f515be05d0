//! Straight-line reference implementations used by the integration and
//! acceptance tests. Nothing here calls the library's numeric code; weights
//! and traces are only read through their public fields.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::HashMap;

use popprobe::model::DecoderWeights;
use popprobe::trace::{ActivationTrace, LensMatrix};

pub struct NaiveLayer {
    pub hidden: Vec<f64>,
    /// `[head][key]` at the last position.
    pub attention: Vec<Vec<f64>>,
    pub up: Vec<f64>,
}

pub struct NaivePass {
    pub h0: Vec<f64>,
    pub layers: Vec<NaiveLayer>,
    /// Hidden states of every position after each layer.
    pub all_states: Vec<Vec<Vec<f64>>>,
}

fn sigmoid_times(y: f64) -> f64 {
    y * (1.0 / (1.0 + (-y).exp()))
}

/// Decoder forward pass written as explicit loops over positions, heads and
/// matrix indices.
pub fn naive_forward(tokens: &[u32], w: &DecoderWeights, residual: bool) -> NaivePass {
    let cfg = w.config;
    let (d, di, dm, nh) = (cfg.d_model, cfg.d_inter, cfg.d_mid, cfg.num_heads);
    let hd = dm / nh;
    let n = tokens.len();
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| (0..d).map(|j| w.embedding.get(t as usize, j)).collect())
        .collect();
    let h0 = x[n - 1].clone();
    let mut layers = Vec::new();
    let mut all_states = Vec::new();
    for lw in &w.layers {
        let mut q = vec![vec![0.0; dm]; n];
        let mut k = vec![vec![0.0; dm]; n];
        let mut v = vec![vec![0.0; dm]; n];
        for t in 0..n {
            for c in 0..dm {
                for r in 0..d {
                    q[t][c] += x[t][r] * lw.w_q.get(r, c);
                    k[t][c] += x[t][r] * lw.w_k.get(r, c);
                    v[t][c] += x[t][r] * lw.w_v.get(r, c);
                }
            }
        }
        let mut attn_out = vec![vec![0.0; dm]; n];
        let mut probe_rows = vec![vec![0.0; n]; nh];
        for h in 0..nh {
            for t in 0..n {
                let mut scores = vec![0.0; t + 1];
                for s in 0..=t {
                    let mut acc = 0.0;
                    for c in h * hd..(h + 1) * hd {
                        acc += q[t][c] * k[s][c];
                    }
                    scores[s] = acc / (hd as f64).sqrt();
                }
                let top = scores.iter().cloned().fold(f64::MIN, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
                let z: f64 = exps.iter().sum();
                for s in 0..=t {
                    let a = exps[s] / z;
                    if t == n - 1 {
                        probe_rows[h][s] = a;
                    }
                    for c in h * hd..(h + 1) * hd {
                        attn_out[t][c] += a * v[s][c];
                    }
                }
            }
        }
        let mid: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                (0..d)
                    .map(|j| attn_out[t][j] + if residual { x[t][j] } else { 0.0 })
                    .collect()
            })
            .collect();
        let mut out = vec![vec![0.0; d]; n];
        let mut probe_up = vec![0.0; di];
        for t in 0..n {
            let mut gate = vec![0.0; di];
            let mut up = vec![0.0; di];
            for c in 0..di {
                for r in 0..d {
                    gate[c] += mid[t][r] * lw.w_gate.get(r, c);
                    up[c] += mid[t][r] * lw.w_up.get(r, c);
                }
            }
            for j in 0..d {
                let mut acc = 0.0;
                for c in 0..di {
                    acc += sigmoid_times(gate[c]) * up[c] * lw.w_down.get(c, j);
                }
                out[t][j] = acc + if residual { mid[t][j] } else { 0.0 };
            }
            if t == n - 1 {
                probe_up = up;
            }
        }
        layers.push(NaiveLayer {
            hidden: out[n - 1].clone(),
            attention: probe_rows,
            up: probe_up,
        });
        all_states.push(out.clone());
        x = out;
    }
    NaivePass {
        h0,
        layers,
        all_states,
    }
}

pub fn naive_lens(h: &[f32], lens: &LensMatrix) -> Vec<f64> {
    let logits: Vec<f64> = (0..lens.vocab_size())
        .map(|t| {
            let mut acc = 0.0;
            for j in 0..lens.d_model() {
                acc += lens.row(t)[j] as f64 * h[j] as f64;
            }
            acc
        })
        .collect();
    let top = logits.iter().cloned().fold(f64::MIN, f64::max);
    let z: f64 = logits.iter().map(|l| (l - top).exp()).sum();
    logits.iter().map(|l| (l - top).exp() / z).collect()
}

pub fn full_kl(target: &[f64], predicted: &[f64], floor: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..target.len() {
        if target[i] != 0.0 {
            let p = if predicted[i] < floor {
                floor
            } else {
                predicted[i]
            };
            total += target[i] * (target[i] / p).ln();
        }
    }
    total
}

pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < 1e-30 || nv < 1e-30 {
        0.0
    } else {
        dot / (nu * nv)
    }
}

pub fn cosine32(u: &[f32], v: &[f32]) -> f64 {
    let u: Vec<f64> = u.iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    cosine(&u, &v)
}

/// Two-pass population mean and standard deviation.
pub fn population(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mut sum = 0.0;
    for v in values {
        sum += v;
    }
    let m = sum / n;
    let mut ss = 0.0;
    for v in values {
        ss += (v - m) * (v - m);
    }
    (m, (ss / n).sqrt())
}

fn f1_tokens(s: &str) -> Vec<String> {
    s.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| c.is_ascii_punctuation())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// F1 with overlap counted by removing matched gold tokens one at a time.
pub fn f1(predicted: &str, gold: &str) -> f64 {
    let p = f1_tokens(predicted);
    let mut g = f1_tokens(gold);
    let (np, ng) = (p.len(), g.len());
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let mut overlap = 0;
    for tok in &p {
        if let Some(i) = g.iter().position(|x| x == tok) {
            g.remove(i);
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let prec = overlap as f64 / np as f64;
    let rec = overlap as f64 / ng as f64;
    2.0 * prec * rec / (prec + rec)
}

/// Student-t density.
pub fn t_pdf(x: f64, dof: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let c = (ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0)).exp()
        / (dof * std::f64::consts::PI).sqrt();
    c * (1.0 + x * x / dof).powf(-(dof + 1.0) / 2.0)
}

/// `P(T > t)` as `1/2 - integral_0^t pdf`, composite Simpson.
pub fn t_sf_by_integration(t: f64, dof: f64) -> f64 {
    let n = 20_000;
    let h = t / n as f64;
    let mut acc = t_pdf(0.0, dof) + t_pdf(t, dof);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * t_pdf(i as f64 * h, dof);
    }
    0.5 - acc * h / 3.0
}

/// Welch statistic, Welch-Satterthwaite dof and one-sided p for
/// "mean(a) > mean(b)", using statrs for the t distribution.
pub fn welch_greater(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let var = |x: &[f64]| {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        (
            m,
            x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0),
        )
    };
    let (ma, va) = var(a);
    let (mb, vb) = var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let dof = se2.powi(2) / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).unwrap();
    (t, dof, 1.0 - dist.cdf(t))
}

/// Max over constraints of the head-averaged attention, looping explicitly.
pub fn attn_score(rows: &[Vec<f32>], constraints: &[usize]) -> f64 {
    let mut best = f64::MIN;
    for &c in constraints {
        let mut s = 0.0;
        for row in rows {
            s += row[c] as f64;
        }
        s /= rows.len() as f64;
        if s > best {
            best = s;
        }
    }
    best
}

/// Double loop over all ordered variant pairs divided by p^2.
pub fn paraphrase_sim(vectors: &[&[f32]]) -> f64 {
    let p = vectors.len();
    let mut total = 0.0;
    for j in 0..p {
        for k in 0..p {
            total += cosine32(vectors[j], vectors[k]);
        }
    }
    total / (p * p) as f64
}

/// Mean cosine over all m x m cross pairs of two relations at a layer.
pub fn relation_sim(x: &[&ActivationTrace], y: &[&ActivationTrace], layer: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for a in x {
        for b in y {
            total += cosine32(
                &a.layers[layer - 1].up_projection,
                &b.layers[layer - 1].up_projection,
            );
            count += 1;
        }
    }
    total / count as f64
}

/// Per-question and batch statistics from a `[question][variant][layer]`
/// table, recomputed from scratch.
pub fn batch_stats(values: &[Vec<Vec<f64>>]) -> (Vec<f64>, Vec<f64>) {
    let layers = values[0][0].len();
    let mut mean = vec![0.0; layers];
    let mut spread = vec![0.0; layers];
    for q in values {
        for l in 0..layers {
            let col: Vec<f64> = q.iter().map(|v| v[l]).collect();
            let (m, s) = population(&col);
            mean[l] += m / values.len() as f64;
            spread[l] += s / values.len() as f64;
        }
    }
    (mean, spread)
}

/// Multiset of token counts, for F1 symmetry checks.
pub fn token_counts(s: &str) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for t in f1_tokens(s) {
        *m.entry(t).or_default() += 1;
    }
    m
}
