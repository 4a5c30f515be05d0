//! Decoder stack, weight file and trace capture.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{ffn_forward, mhsa_forward, FfnOutput, LayerWeights, MhsaOutput};
use super::tensor::Matrix;
use super::{HiddenStream, ModelError};
use crate::trace::{ActivationTrace, LayerRecord, LensMatrix, ModelConfig, FORMAT_VERSION};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"IAWT";

/// Bound of the uniform distribution used by [`DecoderWeights::random`].
pub const RANDOM_INIT_BOUND: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub config: ModelConfig,
    /// `vocab_size x d_model`
    pub embedding: Matrix,
    pub layers: Vec<LayerWeights>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Add each sublayer's input back onto its output.
    pub residual: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { residual: true }
    }
}

impl DecoderWeights {
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        check_config(&config)?;
        Ok(DecoderWeights {
            config,
            embedding: Matrix::zeros(config.vocab_size, config.d_model),
            layers: (0..config.num_layers)
                .map(|_| LayerWeights::zeros(config.d_model, config.d_inter, config.d_mid))
                .collect(),
        })
    }

    /// Uniform `[-0.1, 0.1]` initialization, each value drawn as f32 so the
    /// weights survive a round trip through the weight file unchanged.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut w = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |m: &mut Matrix| {
            *m = Matrix::from_fn(m.rows(), m.cols(), |_, _| {
                rng.random_range(-RANDOM_INIT_BOUND..=RANDOM_INIT_BOUND) as f64
            });
        };
        fill(&mut w.embedding);
        for layer in &mut w.layers {
            for m in layer.matrices_mut() {
                fill(m);
            }
        }
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let c = &self.config;
        check_config(c)?;
        if self.embedding.shape() != (c.vocab_size, c.d_model) {
            return Err(ModelError::Shape(format!(
                "embedding is {:?}, expected ({}, {})",
                self.embedding.shape(),
                c.vocab_size,
                c.d_model
            )));
        }
        if self.layers.len() != c.num_layers {
            return Err(ModelError::Shape(format!(
                "{} layers, config says {}",
                self.layers.len(),
                c.num_layers
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            layer
                .check_shapes(c.d_model, c.d_inter, c.d_mid)
                .map_err(|e| ModelError::Shape(format!("layer {}: {e}", l + 1)))?;
        }
        if !self.embedding.is_finite()
            || self
                .layers
                .iter()
                .any(|l| l.matrices().iter().any(|(_, m)| !m.is_finite()))
        {
            return Err(ModelError::NonFinite);
        }
        Ok(())
    }

    /// The embedding matrix as a logit lens.
    pub fn lens(&self) -> LensMatrix {
        let data = self.embedding.data().iter().map(|&v| v as f32).collect();
        LensMatrix::new(self.config.vocab_size, self.config.d_model, data)
            .expect("embedding shape checked at construction")
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<u64, ModelError> {
        self.validate()?;
        let c = &self.config;
        let mut buf = Vec::new();
        buf.extend_from_slice(&WEIGHTS_MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        for v in [
            c.num_layers,
            c.d_model,
            c.d_inter,
            c.d_mid,
            c.num_heads,
            c.vocab_size,
            c.max_seq_len,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut put = |m: &Matrix| {
            for &v in m.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        };
        put(&self.embedding);
        for layer in &self.layers {
            for (_, m) in layer.matrices() {
                put(m);
            }
        }
        sink.write_all(&buf)?;
        sink.flush()?;
        Ok(buf.len() as u64)
    }

    pub fn read<R: Read>(mut source: R) -> Result<Self, ModelError> {
        let mut head = [0u8; 34];
        source
            .read_exact(&mut head)
            .map_err(|_| ModelError::Format("weight file header truncated".into()))?;
        if head[..4] != WEIGHTS_MAGIC {
            return Err(ModelError::Format(format!(
                "bad magic {:?}, expected {:?}",
                &head[..4],
                WEIGHTS_MAGIC
            )));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != FORMAT_VERSION {
            return Err(ModelError::Format(format!(
                "unsupported weight file version {version}"
            )));
        }
        let dim =
            |i: usize| u32::from_le_bytes(head[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
        let config = ModelConfig {
            num_layers: dim(0),
            d_model: dim(1),
            d_inter: dim(2),
            d_mid: dim(3),
            num_heads: dim(4),
            vocab_size: dim(5),
            max_seq_len: dim(6),
        };
        check_config(&config)?;
        let mut w = Self::zeros(config)?;
        let mut read_matrix = |m: &mut Matrix, what: &str| -> Result<(), ModelError> {
            let mut bytes = vec![0u8; 4 * m.rows() * m.cols()];
            source
                .read_exact(&mut bytes)
                .map_err(|_| ModelError::Format(format!("weight file truncated in {what}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            *m = Matrix::from_vec(m.rows(), m.cols(), data)?;
            Ok(())
        };
        read_matrix(&mut w.embedding, "embedding")?;
        for (l, layer) in w.layers.iter_mut().enumerate() {
            let names = ["w_gate", "w_up", "w_down", "w_q", "w_k", "w_v"];
            for (m, name) in layer.matrices_mut().into_iter().zip(names) {
                read_matrix(m, &format!("layer {} {name}", l + 1))?;
            }
        }
        let mut extra = [0u8; 1];
        if source.read(&mut extra)? != 0 {
            return Err(ModelError::Format("trailing bytes after weights".into()));
        }
        w.validate()?;
        Ok(w)
    }
}

fn check_config(config: &ModelConfig) -> Result<(), ModelError> {
    config
        .validate()
        .map_err(|e| ModelError::Config(e.to_string()))?;
    if config.d_mid != config.d_model {
        return Err(ModelError::Config(format!(
            "attention output width d_mid={} must equal d_model={} (no output projection)",
            config.d_mid, config.d_model
        )));
    }
    Ok(())
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn add_into(acc: &mut HiddenStream, other: &HiddenStream) {
    for (a, b) in acc.states.iter_mut().zip(&other.states) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Full forward pass capturing probe-position activations of every block.
pub struct ForwardPass {
    pub trace: ActivationTrace,
    /// Final hidden state at the probe position, full precision.
    pub final_hidden: Vec<f64>,
}

/// Hidden states of every position: `streams[0]` is the embedding stream,
/// `streams[l]` the output of block `l`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStates {
    pub streams: Vec<HiddenStream>,
}

fn check_tokens(token_ids: &[u32], cfg: &ModelConfig) -> Result<(), ModelError> {
    if token_ids.is_empty() {
        return Err(ModelError::EmptyInput("token_ids"));
    }
    if token_ids.len() > cfg.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: token_ids.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&t) = token_ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(ModelError::TokenOutOfVocab {
            token: t,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Runs every block. `visit` sees the embedding stream (layer 0, no block
/// outputs) and then each block's attention, FFN output and new stream.
fn run_blocks(
    token_ids: &[u32],
    weights: &DecoderWeights,
    options: ForwardOptions,
    mut visit: impl FnMut(usize, Option<(&MhsaOutput, &FfnOutput)>, &HiddenStream),
) -> Result<HiddenStream, ModelError> {
    let cfg = weights.config;
    check_tokens(token_ids, &cfg)?;
    let mut h = HiddenStream {
        states: token_ids
            .iter()
            .map(|&t| weights.embedding.row(t as usize).to_vec())
            .collect(),
    };
    visit(0, None, &h);
    for (l, lw) in weights.layers.iter().enumerate() {
        let attn = mhsa_forward(&h, lw, cfg.num_heads, true)?;
        let mut mid = attn.output.clone();
        if options.residual {
            add_into(&mut mid, &h);
        }
        let ffn = ffn_forward(&mid, lw)?;
        let mut out = ffn.output.clone();
        if options.residual {
            add_into(&mut out, &mid);
        }
        h = out;
        visit(l + 1, Some((&attn, &ffn)), &h);
    }
    Ok(h)
}

/// Hidden states of all positions after every block.
pub fn decoder_states(
    token_ids: &[u32],
    weights: &DecoderWeights,
    options: ForwardOptions,
) -> Result<DecoderStates, ModelError> {
    let mut streams = Vec::with_capacity(weights.config.num_layers + 1);
    run_blocks(token_ids, weights, options, |_, _, h| {
        streams.push(h.clone())
    })?;
    Ok(DecoderStates { streams })
}

/// Runs the decoder over `token_ids`, recording activations at the last
/// position. The returned trace has an empty prompt id, no constraint
/// positions and answer token 0; callers fill those in.
pub fn decoder_forward(
    token_ids: &[u32],
    weights: &DecoderWeights,
    options: ForwardOptions,
) -> Result<ForwardPass, ModelError> {
    let cfg = weights.config;
    let probe = token_ids.len().saturating_sub(1);
    let mut initial_hidden = Vec::new();
    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut last = run_blocks(token_ids, weights, options, |l, block, h| {
        let Some((attn, ffn)) = block else {
            initial_hidden = to_f32(&h.states[probe]);
            return;
        };
        layers.push(LayerRecord {
            layer_index: l,
            hidden: to_f32(&h.states[probe]),
            attention_rows: attn.rows_at(probe).into_iter().map(to_f32).collect(),
            up_projection: to_f32(&ffn.up_projection[probe]),
        });
    })?;
    let final_hidden = last.states.swap_remove(probe);
    Ok(ForwardPass {
        trace: ActivationTrace {
            config: cfg,
            prompt_id: String::new(),
            token_ids: token_ids.to_vec(),
            probe_position: probe,
            constraint_positions: Vec::new(),
            answer_first_token: 0,
            initial_hidden,
            layers,
        },
        final_hidden,
    })
}

/// Greedy generation reading next-token distributions through the tied
/// embedding, stopping at `max_new` tokens or when `stop` is produced.
pub fn greedy_generate(
    prompt: &[u32],
    weights: &DecoderWeights,
    options: ForwardOptions,
    max_new: usize,
    stop: Option<u32>,
) -> Result<Vec<u32>, ModelError> {
    let lens = weights.lens();
    let mut tokens = prompt.to_vec();
    let mut produced = Vec::new();
    for _ in 0..max_new {
        if tokens.len() >= weights.config.max_seq_len {
            break;
        }
        let pass = decoder_forward(&tokens, weights, options)?;
        let dist = super::lens::logit_lens(&pass.final_hidden, &lens)?;
        let next = super::lens::greedy_decode(&dist);
        if Some(next) == stop {
            break;
        }
        produced.push(next);
        tokens.push(next);
    }
    Ok(produced)
}
