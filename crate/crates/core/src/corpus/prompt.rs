//! Few-shot prompt construction.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, ParaphraseInstance, QuestionRecord};
use crate::tokenizer::Vocab;

pub const TASK_DESCRIPTOR: &str = "Answer the following questions in one word or phrase:";
pub const DEFAULT_DEMOS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_descriptor: String,
    /// (question, answer) pairs in prompt order.
    pub demonstrations: Vec<(String, String)>,
    pub target: ParaphraseInstance,
    pub demo_count: usize,
}

/// Prompt text with constraint spans relocated into it.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub text: String,
    pub constraint_spans: Vec<Range<usize>>,
}

/// Token ids of a prompt and the positions of its constraint tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPrompt {
    pub token_ids: Vec<u32>,
    pub constraint_positions: Vec<usize>,
}

impl PromptSpec {
    /// ```text
    /// Answer the following questions in one word or phrase:
    /// Q: <question 1>
    /// A: <answer 1>
    /// ...
    /// Q: <target>
    /// A:
    /// ```
    pub fn render(&self) -> RenderedPrompt {
        let mut text = String::with_capacity(64 * (self.demonstrations.len() + 2));
        text.push_str(&self.task_descriptor);
        text.push('\n');
        for (q, a) in &self.demonstrations {
            text.push_str("Q: ");
            text.push_str(q);
            text.push_str("\nA: ");
            text.push_str(a);
            text.push('\n');
        }
        text.push_str("Q: ");
        let offset = text.len();
        text.push_str(&self.target.text);
        text.push_str("\nA:");
        let constraint_spans = self
            .target
            .constraint_spans
            .iter()
            .map(|s| s.start + offset..s.end + offset)
            .collect();
        RenderedPrompt {
            text,
            constraint_spans,
        }
    }

    /// Tokenizes the rendered prompt. Every sub-word token overlapping a
    /// constraint span counts as a constraint token.
    pub fn encode(&self, vocab: &Vocab) -> EncodedPrompt {
        let rendered = self.render();
        let tokens = vocab.tokenize(&rendered.text);
        let constraint_positions = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| rendered.constraint_spans.iter().any(|s| t.overlaps(s)))
            .map(|(i, _)| i)
            .collect();
        EncodedPrompt {
            token_ids: tokens.into_iter().map(|t| t.id).collect(),
            constraint_positions,
        }
    }
}

/// Stable 64-bit FNV-1a mix of a run seed and a key.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in key.bytes().chain(seed.to_le_bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Samples `k` demonstrations of the target's relation (never the target
/// question itself) with a seeded generator.
pub fn build_prompt(
    target: &ParaphraseInstance,
    pool: &[QuestionRecord],
    k: usize,
    seed: u64,
) -> Result<PromptSpec, CorpusError> {
    let candidates: Vec<&QuestionRecord> = pool
        .iter()
        .filter(|r| r.relation == target.relation && r.id != target.question_id)
        .collect();
    if candidates.len() < k {
        return Err(CorpusError::InsufficientRecords {
            context: format!("demonstrations for {:?}", target.question_id),
            need: k,
            have: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let demonstrations = rand::seq::index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| {
            let r = candidates[i];
            (r.question.clone(), r.object.clone())
        })
        .collect();
    Ok(PromptSpec {
        task_descriptor: TASK_DESCRIPTOR.to_string(),
        demonstrations,
        target: target.clone(),
        demo_count: k,
    })
}
