//! Which prompts a run contains and how their traces group into batches.
//! Simulation and analysis both derive this from the manifest and corpus.

use anyhow::{anyhow, bail, Context, Result};
use popprobe::corpus::{
    build_prompt, derive_seed, equispaced_relation_batches, expand_paraphrases, sort_into_batches,
    EncodedPrompt, ParaphraseInstance, QuestionRecord, RelationBatches, TemplateTable,
};
use popprobe::tokenizer::Vocab;

use crate::manifest::{Mode, RunManifest};

/// Questions of one relation at one popularity batch or level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionGroup {
    pub relation: String,
    /// `Head`, `Tail`, `B2`, ... in paraphrase mode; `L1`, `L2`, ... in
    /// relations mode.
    pub label: String,
    /// 1-based batch index or level.
    pub level: usize,
    pub question_ids: Vec<String>,
}

impl QuestionGroup {
    /// Value of the `batch` report column.
    pub fn key(&self) -> String {
        format!("{}/{}", self.relation, self.label)
    }
}

pub fn prompt_id(question_id: &str, variant: usize) -> String {
    format!("{question_id}/{variant}")
}

pub fn level_label(level: usize) -> String {
    format!("L{level}")
}

pub fn paraphrase_groups(
    records: &[QuestionRecord],
    m: &RunManifest,
) -> Result<Vec<QuestionGroup>> {
    let mut groups = Vec::new();
    for rel in &m.relations {
        let batches = sort_into_batches(records, rel, m.batches, m.batch_size, m.scheme)?;
        groups.extend(batches.into_iter().map(|b| QuestionGroup {
            relation: rel.clone(),
            label: b.label.to_string(),
            level: b.index,
            question_ids: b.question_ids,
        }));
    }
    Ok(groups)
}

pub fn relation_levels(records: &[QuestionRecord], m: &RunManifest) -> Result<RelationBatches> {
    let selected: Vec<QuestionRecord> = records
        .iter()
        .filter(|r| m.relations.contains(&r.relation))
        .cloned()
        .collect();
    let per_relation = m
        .per_relation
        .ok_or_else(|| anyhow!("relations mode needs a per-relation question count"))?;
    Ok(equispaced_relation_batches(
        &selected,
        m.batches,
        m.batch_size,
        per_relation,
    )?)
}

/// Groups in the order their prompts are simulated.
pub fn groups(records: &[QuestionRecord], m: &RunManifest) -> Result<Vec<QuestionGroup>> {
    match m.mode {
        Mode::Paraphrase => paraphrase_groups(records, m),
        Mode::Relations => {
            let rb = relation_levels(records, m)?;
            Ok(rb
                .levels
                .into_iter()
                .enumerate()
                .flat_map(|(i, level)| {
                    level.into_iter().map(move |(relation, ids)| QuestionGroup {
                        relation,
                        label: level_label(i + 1),
                        level: i + 1,
                        question_ids: ids,
                    })
                })
                .collect())
        }
    }
}

/// Variant indices simulated per question: 1..=p, or 0 for the original
/// question in relations mode.
pub fn variants(m: &RunManifest) -> Vec<usize> {
    match m.mode {
        Mode::Paraphrase => (1..=m.paraphrases).collect(),
        Mode::Relations => vec![0],
    }
}

#[derive(Debug, Clone)]
pub struct PlannedPrompt {
    pub prompt_id: String,
    pub question_id: String,
    pub encoded: EncodedPrompt,
    pub answer_token: u32,
}

fn original_question(q: &QuestionRecord) -> ParaphraseInstance {
    let subject_span = q
        .question
        .find(&q.subject)
        .map(|s| s..s + q.subject.len())
        .unwrap_or(0..0);
    let constraint_spans = if subject_span.is_empty() {
        Vec::new()
    } else {
        vec![subject_span.clone()]
    };
    ParaphraseInstance {
        question_id: q.id.clone(),
        relation: q.relation.clone(),
        variant_index: 0,
        text: q.question.clone(),
        constraint_spans,
        subject_span,
    }
}

pub fn answer_token(vocab: &Vocab, answer: &str) -> Result<u32> {
    let first = *vocab
        .encode(answer)
        .first()
        .ok_or_else(|| anyhow!("answer {answer:?} produces no tokens"))?;
    if first == vocab.unk() {
        log::warn!("answer {answer:?} starts with an unknown token");
    }
    Ok(first)
}

/// Every prompt of the run, in simulation order.
pub fn plan_prompts(
    records: &[QuestionRecord],
    table: &TemplateTable,
    vocab: &Vocab,
    m: &RunManifest,
) -> Result<Vec<PlannedPrompt>> {
    let by_id: std::collections::HashMap<&str, &QuestionRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out = Vec::new();
    for group in groups(records, m)? {
        for qid in &group.question_ids {
            let q = by_id[qid.as_str()];
            let instances = match m.mode {
                Mode::Paraphrase => expand_paraphrases(q, table, m.paraphrases)?,
                Mode::Relations => vec![original_question(q)],
            };
            let answer = answer_token(vocab, q.answer())?;
            for inst in instances {
                let id = prompt_id(qid, inst.variant_index);
                let spec = build_prompt(&inst, records, m.demos, derive_seed(m.seed, &id))
                    .with_context(|| format!("building prompt {id}"))?;
                let encoded = spec.encode(vocab);
                if encoded.token_ids.len() > m.model.max_seq_len {
                    bail!(
                        "prompt {id} has {} tokens, more than max_seq_len {}; use fewer demonstrations",
                        encoded.token_ids.len(),
                        m.model.max_seq_len
                    );
                }
                out.push(PlannedPrompt {
                    prompt_id: id,
                    question_id: qid.clone(),
                    encoded,
                    answer_token: answer,
                });
            }
        }
    }
    Ok(out)
}
