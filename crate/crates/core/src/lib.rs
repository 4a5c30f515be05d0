//! Layer-wise probes of how a decoder-only transformer answers entity-centric
//! questions, and how that behaviour depends on the popularity of the entity.
//!
//! * [`trace`]: the binary activation-trace and lens formats.
//! * [`model`]: a small instrumented decoder that produces traces.
//! * [`tokenizer`] and [`corpus`]: question records, popularity batching,
//!   paraphrase templates and few-shot prompts.
//! * [`probes`]: logit-lens convergence, constraint attention, FFN
//!   similarity across paraphrases and relations, response variety.
//! * [`stats`]: the numeric kernels the probes share.

pub mod corpus;
pub mod model;
pub mod probes;
pub mod stats;
pub mod tokenizer;
pub mod trace;

pub use corpus::{
    sort_into_batches, BatchLabel, BatchScheme, CorpusError, PopularityBatch, QuestionRecord,
};
pub use model::{
    decoder_forward, logit_lens, DecoderWeights, Distribution, ForwardOptions, ModelError,
};
pub use probes::{
    AttentionCurve, ConvergenceCurve, ProbeError, QuestionTraces, RelationHeatmap, SimilarityCurve,
    VarietyReport,
};
pub use stats::{Direction, StatsError, WelchResult};
pub use tokenizer::Vocab;
pub use trace::{ActivationTrace, LayerRecord, LensMatrix, ModelConfig, TraceError};
