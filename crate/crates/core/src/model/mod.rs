//! A small instrumented decoder-only transformer.
//!
//! Each block applies multi-head self-attention then a gated FFN, with
//! optional residual connections. There are no normalization layers and no
//! positional encodings; the causal mask alone orders the sequence.

mod decoder;
mod layers;
mod lens;
mod ops;
pub mod synthetic;
mod tensor;

use thiserror::Error;

pub use decoder::{
    decoder_forward, decoder_states, greedy_generate, DecoderStates, DecoderWeights,
    ForwardOptions, ForwardPass, RANDOM_INIT_BOUND, WEIGHTS_MAGIC,
};
pub use layers::{ffn_forward, mhsa_forward, FfnOutput, LayerWeights, MhsaOutput};
pub use lens::{greedy_decode, logit_lens, Distribution, DISTRIBUTION_TOLERANCE};
pub use ops::{silu, softmax};
pub use tensor::Matrix;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("token {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfVocab { token: u32, vocab_size: usize },
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("weights contain non-finite values")]
    NonFinite,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("planted weights: {0}")]
    Planted(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-position hidden states of one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStream {
    pub states: Vec<Vec<f64>>,
}

impl HiddenStream {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn check_width(&self, d: usize) -> Result<(), ModelError> {
        match self.states.iter().find(|s| s.len() != d) {
            Some(s) => Err(ModelError::Shape(format!(
                "hidden state width {} != {d}",
                s.len()
            ))),
            None => Ok(()),
        }
    }
}
