//! Hand-constructed weights with known behaviour.
//!
//! [`planted_convergence_weights`] builds a decoder that, for each planted
//! subject token, moves the probe-position hidden state toward the embedding
//! row of that subject's answer token, reaching it at a chosen layer.
//!
//! Residual-stream layout (columns of the embedding matrix):
//!
//! | dims                | content                                           |
//! |---------------------|---------------------------------------------------|
//! | 0                   | bias, 1 for every token                           |
//! | 1                   | subject flag, 1 for planted subject tokens        |
//! | 2 .. 2+A            | one axis per distinct answer token                |
//! | 2+A .. 2+A+S        | one key axis per planted subject                  |
//! | rest                | small seeded noise for all other tokens           |
//!
//! Every head queries the bias dim and keys on the subject flag, so the last
//! position attends (almost) entirely to the subject token. Layer 1 values
//! copy the subject key block; later layers have zero values. FFN unit `j`
//! fires on subject `j`'s key and writes `answer_scale * (f_l - f_{l-1})`
//! onto the answer axis, where `f_l = min(1, l / converge_layer)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops::silu;
use super::{DecoderWeights, ModelError};
use crate::trace::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlantedFact {
    pub subject_token: u32,
    pub answer_token: u32,
    /// Layer at which the answer is fully written (1-based).
    pub converge_layer: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSpec {
    pub config: ModelConfig,
    pub facts: Vec<PlantedFact>,
    /// Answer-axis logit reached at convergence.
    pub answer_scale: f64,
    /// Attention logit gap between the subject and every other key.
    pub attention_gap: f64,
    /// Half-width of the noise on non-planted token embeddings.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedSpec {
    pub fn new(config: ModelConfig, facts: Vec<PlantedFact>, seed: u64) -> Self {
        PlantedSpec {
            config,
            facts,
            answer_scale: 12.0,
            attention_gap: 30.0,
            noise: 0.3,
            seed,
        }
    }
}

const GATE_DRIVE: f64 = 8.0;

/// Fraction of the answer written after `layer` blocks.
pub fn planted_fraction(layer: usize, converge_layer: usize) -> f64 {
    (layer as f64 / converge_layer as f64).min(1.0)
}

pub fn planted_convergence_weights(spec: &PlantedSpec) -> Result<DecoderWeights, ModelError> {
    let cfg = spec.config;
    let mut w = DecoderWeights::zeros(cfg)?;
    let err = |m: String| Err(ModelError::Planted(m));

    let mut subjects: BTreeMap<u32, usize> = BTreeMap::new();
    let mut answers: BTreeMap<u32, usize> = BTreeMap::new();
    for f in &spec.facts {
        if f.subject_token as usize >= cfg.vocab_size || f.answer_token as usize >= cfg.vocab_size {
            return err(format!(
                "fact {f:?} references a token outside the vocabulary"
            ));
        }
        if f.converge_layer == 0 || f.converge_layer > cfg.num_layers {
            return err(format!(
                "converge layer {} outside 1..={}",
                f.converge_layer, cfg.num_layers
            ));
        }
        if f.subject_token == f.answer_token {
            return err(format!(
                "subject and answer share token {}",
                f.subject_token
            ));
        }
        let n = subjects.len();
        if subjects.insert(f.subject_token, n).is_some() {
            return err(format!("subject token {} planted twice", f.subject_token));
        }
        let n = answers.len();
        answers.entry(f.answer_token).or_insert(n);
    }
    if let Some(t) = subjects.keys().find(|t| answers.contains_key(t)) {
        return err(format!("token {t} is both a subject and an answer"));
    }
    let (n_ans, n_subj) = (answers.len(), subjects.len());
    let answer_base = 2;
    let subject_base = answer_base + n_ans;
    let noise_base = subject_base + n_subj;
    if noise_base > cfg.d_model {
        return err(format!(
            "d_model {} too small for {n_ans} answers and {n_subj} subjects (need {noise_base})",
            cfg.d_model
        ));
    }
    if n_subj > cfg.d_inter {
        return err(format!(
            "d_inter {} < {n_subj} planted subjects",
            cfg.d_inter
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for tok in 0..cfg.vocab_size {
        w.embedding.set(tok, 0, 1.0);
        let t = tok as u32;
        if let Some(&s) = subjects.get(&t) {
            w.embedding.set(tok, 1, 1.0);
            w.embedding.set(tok, subject_base + s, 1.0);
        } else if let Some(&a) = answers.get(&t) {
            w.embedding.set(tok, answer_base + a, 1.0);
        } else {
            for d in noise_base..cfg.d_model {
                let v = rng.random_range(-spec.noise..=spec.noise) as f32;
                w.embedding.set(tok, d, v as f64);
            }
        }
    }

    // q . k / sqrt(hd) = hd * key_gain / sqrt(hd) = attention_gap
    let hd = cfg.head_dim() as f64;
    let key_gain = ((spec.attention_gap / hd.sqrt()) as f32) as f64;
    let drive = silu(GATE_DRIVE);
    for (l, layer) in w.layers.iter_mut().enumerate() {
        let layer_no = l + 1;
        for j in 0..cfg.d_mid {
            layer.w_q.set(0, j, 1.0);
            layer.w_k.set(1, j, key_gain);
        }
        if layer_no == 1 {
            for s in 0..n_subj {
                let d = subject_base + s;
                layer.w_v.set(d, d, 1.0);
            }
        }
        for f in &spec.facts {
            let unit = subjects[&f.subject_token];
            let axis = answer_base + answers[&f.answer_token];
            let step = planted_fraction(layer_no, f.converge_layer)
                - planted_fraction(layer_no - 1, f.converge_layer);
            layer.w_gate.set(0, unit, GATE_DRIVE);
            layer.w_up.set(subject_base + unit, unit, 1.0);
            if step > 0.0 {
                let v = (spec.answer_scale * step / drive) as f32;
                layer.w_down.set(unit, axis, v as f64);
            }
        }
    }
    w.validate()?;
    Ok(w)
}
