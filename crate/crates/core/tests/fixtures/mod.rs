//! Sample traces and corrupted trace files shared by integration and
//! acceptance tests.
#![allow(dead_code)]

use popprobe::model::{decoder_forward, DecoderWeights, ForwardOptions};
use popprobe::trace::{ActivationTrace, ModelConfig, TraceFileWriter};

pub fn small_config() -> ModelConfig {
    ModelConfig {
        num_layers: 3,
        d_model: 4,
        d_inter: 5,
        d_mid: 4,
        num_heads: 2,
        vocab_size: 10,
        max_seq_len: 8,
    }
}

/// A valid trace produced by a random decoder.
pub fn sample_trace(config: ModelConfig, id: &str, tokens: &[u32], seed: u64) -> ActivationTrace {
    let w = DecoderWeights::random(config, seed).unwrap();
    let mut t = decoder_forward(tokens, &w, ForwardOptions::default())
        .unwrap()
        .trace;
    t.prompt_id = id.to_string();
    t.constraint_positions = (0..tokens.len() - 1).step_by(2).collect();
    t.answer_first_token = (seed % config.vocab_size as u64) as u32;
    t
}

/// Two-record file: records "q1/1" and "q1/2" with 5 tokens each.
pub fn two_record_file() -> (Vec<u8>, Vec<ActivationTrace>) {
    let cfg = small_config();
    let traces = vec![
        sample_trace(cfg, "q1/1", &[1, 2, 3, 4, 5], 1),
        sample_trace(cfg, "q1/2", &[5, 4, 3, 2, 1], 2),
    ];
    let mut w = TraceFileWriter::create(std::io::Cursor::new(Vec::new()), cfg).unwrap();
    for t in &traces {
        w.append(t).unwrap();
    }
    (w.finish().unwrap().into_inner(), traces)
}

/// Byte offsets inside the first record of [`two_record_file`], computed
/// from the format table: 38-byte header, then id_len u16 + 4-byte id,
/// seq_len u32, 5 token ids, probe u32, constraint count u16 + 2 indices,
/// answer u32, h_0 (4 floats), then layer blocks of
/// 4 + 2*5 + 5 floats = 19 floats = 76 bytes.
pub mod offsets {
    pub const HEADER: usize = 38;
    pub const VERSION: usize = 4;
    pub const NUM_LAYERS: usize = 6;
    pub const RECORD0: usize = HEADER;
    pub const SEQ_LEN: usize = RECORD0 + 2 + 4;
    pub const TOKENS: usize = SEQ_LEN + 4;
    pub const PROBE: usize = TOKENS + 20;
    pub const CONSTRAINTS: usize = PROBE + 4 + 2;
    pub const ANSWER: usize = CONSTRAINTS + 8;
    pub const H0: usize = ANSWER + 4;
    pub const LAYER1: usize = H0 + 16;
    pub const LAYER_BLOCK: usize = 76;
    pub const RECORD_SIZE: usize = LAYER1 - RECORD0 + 3 * LAYER_BLOCK;
}

/// Expected outcome of reading a mutated file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    BadMagic,
    Version,
    Config,
    TruncatedHeader,
    /// Corrupt error naming this record and layer.
    Corrupt {
        record: usize,
        layer: Option<usize>,
    },
    /// Decoded but failed validation.
    Invalid {
        record: usize,
    },
}

pub struct Mutation {
    pub name: &'static str,
    pub bytes: Vec<u8>,
    pub expect: Expect,
}

fn put_u32(b: &mut [u8], at: usize, v: u32) {
    b[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// Ten corruptions of [`two_record_file`], each with the error it must
/// produce.
pub fn mutations() -> Vec<Mutation> {
    use offsets::*;
    let (good, _) = two_record_file();
    let m = |name, f: &dyn Fn(&mut Vec<u8>), expect| {
        let mut bytes = good.clone();
        f(&mut bytes);
        Mutation {
            name,
            bytes,
            expect,
        }
    };
    vec![
        m(
            "magic",
            &|b| b[..4].copy_from_slice(b"XXXX"),
            Expect::BadMagic,
        ),
        m("version", &|b| b[VERSION] = 2, Expect::Version),
        m(
            "zero layers",
            &|b| put_u32(b, NUM_LAYERS, 0),
            Expect::Config,
        ),
        m(
            "truncated header",
            &|b| b.truncate(20),
            Expect::TruncatedHeader,
        ),
        m(
            "truncated mid layer 2",
            &|b| b.truncate(LAYER1 + LAYER_BLOCK + 10),
            Expect::Corrupt {
                record: 0,
                layer: Some(2),
            },
        ),
        m(
            "missing second record",
            &|b| b.truncate(RECORD0 + RECORD_SIZE),
            Expect::Corrupt {
                record: 1,
                layer: None,
            },
        ),
        m(
            "trailing bytes",
            &|b| b.push(0),
            Expect::Corrupt {
                record: 2,
                layer: None,
            },
        ),
        m(
            "token out of vocab",
            &|b| put_u32(b, TOKENS + 4, 99),
            Expect::Invalid { record: 0 },
        ),
        m(
            "constraint after probe",
            &|b| put_u32(b, CONSTRAINTS, 4),
            Expect::Invalid { record: 0 },
        ),
        m(
            "probe out of range",
            &|b| put_u32(b, PROBE, 7),
            Expect::Invalid { record: 0 },
        ),
    ]
}

use popprobe::corpus::QuestionRecord;

pub fn record(id: &str, relation: &str, p_subj: f64, p_obj: f64) -> QuestionRecord {
    QuestionRecord {
        id: id.to_string(),
        subject: format!("S{id}"),
        relation: relation.to_string(),
        object: format!("O{id}"),
        p_subj,
        p_obj,
        question: format!("Q {id}?"),
    }
}

/// `n` records over three relations with coarse popularity values so that
/// ties are common.
pub fn random_corpus(n: usize, seed: u64) -> Vec<QuestionRecord> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let rel = ["capital", "genre", "sport"][rng.random_range(0..3)];
            let ps = rng.random_range(0..40) as f64;
            let po = rng.random_range(0..40) as f64;
            record(
                &format!("r{:04}", (i * 7919 + seed as usize) % 10_000),
                rel,
                ps,
                po,
            )
        })
        .collect()
}

/// Corpus cut into 3 global batches of 30 where relations "a" and "b" have
/// at least 5 questions in every batch while "c" has only 2 in batch 3 and
/// "d" is absent from batch 1. The surviving set must be {a, b}.
pub fn constructed_relation_corpus() -> (Vec<QuestionRecord>, Vec<String>) {
    let mut records = Vec::new();
    // (batch, relation, count): popularity decreases with batch, so each
    // batch's records stay together after sorting.
    let layout: [(usize, &str, usize); 11] = [
        (0, "a", 10),
        (0, "b", 10),
        (0, "c", 10),
        (1, "a", 8),
        (1, "b", 7),
        (1, "c", 10),
        (1, "d", 5),
        (2, "a", 9),
        (2, "b", 14),
        (2, "c", 2),
        (2, "d", 5),
    ];
    for (batch, rel, count) in layout {
        for k in 0..count {
            let pop = 1000.0 - 300.0 * batch as f64 - k as f64;
            records.push(record(&format!("{rel}{batch}{k:02}"), rel, pop, pop));
        }
    }
    (records, vec!["a".into(), "b".into()])
}
