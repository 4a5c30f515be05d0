//! Question records, paraphrase expansion, prompts and popularity batches.

mod batching;
mod prompt;
mod record;
pub mod synthetic;
mod templates;

use thiserror::Error;

pub use batching::{
    equispaced_relation_batches, popularity_order, sort_into_batches, BatchLabel, BatchScheme,
    PopularityBatch, RelationBatches,
};
pub use prompt::{
    build_prompt, derive_seed, EncodedPrompt, PromptSpec, RenderedPrompt, DEFAULT_DEMOS,
    TASK_DESCRIPTOR,
};
pub use record::{popularity, read_corpus, write_corpus, QuestionRecord};
pub use templates::{
    expand_paraphrases, ParaphraseInstance, Template, TemplateTable, DEFAULT_PARAPHRASES,
    DEFAULT_TEMPLATES, PLACEHOLDER,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("record {id:?}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("corpus line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("not enough records for {context}: need {need}, have {have}")]
    InsufficientRecords {
        context: String,
        need: usize,
        have: usize,
    },
    #[error("no relation has {min} questions in each of the {batches} batches")]
    NoRelationSurvives { min: usize, batches: usize },
    #[error("unknown relation {relation:?}; known relations: {}", known.join(", "))]
    UnknownRelation {
        relation: String,
        known: Vec<String>,
    },
    #[error("relation {relation:?} has {have} templates, {want} requested")]
    NotEnoughTemplates {
        relation: String,
        have: usize,
        want: usize,
    },
    #[error("template line {line}: {reason}")]
    Template { line: usize, reason: String },
    #[error("batching: {0}")]
    BadBatching(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
