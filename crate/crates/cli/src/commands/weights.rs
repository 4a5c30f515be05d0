use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use popprobe::corpus::{sort_into_batches, BatchScheme};
use popprobe::model::synthetic::{planted_convergence_weights, PlantedFact, PlantedSpec};
use popprobe::model::DecoderWeights;
use popprobe::ModelConfig;

use super::{create, load_corpus, load_vocab};
use crate::error::{ExitContext, EXIT_INPUT};
use crate::plan::answer_token;

#[derive(Debug, Clone, clap::Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 256)]
    pub d_inter: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 512)]
    pub max_seq_len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plant answers that converge earlier for more popular batches.
    #[arg(long, requires = "corpus")]
    pub planted: bool,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "capital")]
    pub relations: Vec<String>,
    #[arg(long, default_value_t = 2)]
    pub batches: usize,
    #[arg(long, default_value_t = 10)]
    pub batch_size: usize,
    #[arg(long, default_value_t = BatchScheme::HeadTail)]
    pub scheme: BatchScheme,
}

/// Layer at which batch `index` (1-based, of `n`) is fully answered:
/// `ceil(L/3)` for the most popular batch, `L` for the least.
pub fn converge_layer(index: usize, n: usize, layers: usize) -> usize {
    let first = layers.div_ceil(3);
    if n <= 1 {
        return first;
    }
    let t = (index - 1) as f64 / (n - 1) as f64;
    first + ((layers - first) as f64 * t).round() as usize
}

pub fn cmd_init_weights(args: &InitWeightsArgs) -> Result<()> {
    let vocab = load_vocab(&args.vocab)?;
    let config = ModelConfig {
        num_layers: args.layers,
        d_model: args.d_model,
        d_inter: args.d_inter,
        d_mid: args.d_model,
        num_heads: args.heads,
        vocab_size: vocab.len(),
        max_seq_len: args.max_seq_len,
    };
    config.validate().exit_code(EXIT_INPUT)?;
    let weights = if args.planted {
        let path = args
            .corpus
            .as_ref()
            .ok_or_else(|| anyhow!("--planted needs --corpus"))?;
        let records = load_corpus(path)?;
        let mut facts = Vec::new();
        for rel in &args.relations {
            let batches =
                sort_into_batches(&records, rel, args.batches, args.batch_size, args.scheme)
                    .exit_code(EXIT_INPUT)?;
            for b in &batches {
                let layer = converge_layer(b.index, args.batches, args.layers);
                for id in &b.question_ids {
                    let r = records.iter().find(|r| &r.id == id).unwrap();
                    let Some(subject_token) = vocab.id(&r.subject) else {
                        bail!(
                            "subject {:?} of {id} is not a single vocabulary token",
                            r.subject
                        );
                    };
                    facts.push(PlantedFact {
                        subject_token,
                        answer_token: answer_token(&vocab, r.answer())?,
                        converge_layer: layer,
                    });
                }
            }
        }
        planted_convergence_weights(&PlantedSpec::new(config, facts, args.seed))
            .exit_code(EXIT_INPUT)?
    } else {
        DecoderWeights::random(config, args.seed).exit_code(EXIT_INPUT)?
    };
    weights
        .write(create(&args.out)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
