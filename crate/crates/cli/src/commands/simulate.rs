use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use popprobe::corpus::{BatchScheme, DEFAULT_DEMOS, DEFAULT_PARAPHRASES};
use popprobe::model::{decoder_forward, ForwardOptions};
use popprobe::trace::{write_lens, ActivationTrace, TraceFileWriter};
use rayon::prelude::*;

use super::{create, load_corpus, load_templates, load_vocab, load_weights};
use crate::error::{ExitContext, EXIT_INPUT};
use crate::manifest::{sidecar_path, AnalysisParams, Mode, RunManifest, TOOL_VERSION};
use crate::plan::{plan_prompts, PlannedPrompt};

/// Prompts run in parallel per chunk, then written in order.
const CHUNK: usize = 256;

#[derive(Debug, Clone, clap::Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long)]
    pub weights: PathBuf,
    /// Output trace file; the manifest goes next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Lens output; defaults to the trace path with extension `ialn`.
    #[arg(long)]
    pub lens: Option<PathBuf>,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Paraphrase)]
    pub mode: Mode,
    /// Comma-separated relations.
    #[arg(long, value_delimiter = ',', default_value = "capital")]
    pub relations: Vec<String>,
    #[arg(long, default_value_t = 5)]
    pub batches: usize,
    #[arg(long, default_value_t = 50)]
    pub batch_size: usize,
    #[arg(long, default_value_t = BatchScheme::HeadTorsoTail)]
    pub scheme: BatchScheme,
    #[arg(long, default_value_t = DEFAULT_PARAPHRASES)]
    pub paraphrases: usize,
    /// Few-shot demonstrations per prompt.
    #[arg(long, default_value_t = DEFAULT_DEMOS)]
    pub demos: usize,
    /// Questions per relation and level (relations mode).
    #[arg(long, default_value_t = 50)]
    pub per_relation: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop residual connections.
    #[arg(long)]
    pub no_residual: bool,
}

impl SimulateArgs {
    /// Arguments with every default, for programmatic use.
    pub fn new(corpus: PathBuf, vocab: PathBuf, weights: PathBuf, out: PathBuf) -> Self {
        SimulateArgs {
            corpus,
            vocab,
            weights,
            out,
            lens: None,
            templates: None,
            mode: Mode::Paraphrase,
            relations: vec!["capital".into()],
            batches: 5,
            batch_size: 50,
            scheme: BatchScheme::HeadTorsoTail,
            paraphrases: DEFAULT_PARAPHRASES,
            demos: DEFAULT_DEMOS,
            per_relation: 50,
            seed: 0,
            no_residual: false,
        }
    }

    pub fn lens_path(&self) -> PathBuf {
        self.lens
            .clone()
            .unwrap_or_else(|| self.out.with_extension("ialn"))
    }
}

fn run_prompt(
    p: &PlannedPrompt,
    weights: &popprobe::DecoderWeights,
    options: ForwardOptions,
) -> Result<ActivationTrace> {
    let mut trace = decoder_forward(&p.encoded.token_ids, weights, options)
        .with_context(|| format!("forward pass of {}", p.prompt_id))?
        .trace;
    trace.prompt_id = p.prompt_id.clone();
    trace.constraint_positions = p.encoded.constraint_positions.clone();
    trace.answer_first_token = p.answer_token;
    Ok(trace)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let records = load_corpus(&args.corpus)?;
    let table = load_templates(args.templates.as_deref())?;
    let vocab = load_vocab(&args.vocab)?;
    let weights = load_weights(&args.weights)?;
    if weights.config.vocab_size != vocab.len() {
        return Err(anyhow!(
            "weights expect {} tokens but vocabulary {} has {}",
            weights.config.vocab_size,
            args.vocab.display(),
            vocab.len()
        ))
        .exit_code(EXIT_INPUT);
    }
    let mut relations = args.relations.clone();
    relations.sort();
    relations.dedup();
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        seed: args.seed,
        mode: args.mode,
        corpus: args.corpus.clone(),
        vocab: args.vocab.clone(),
        weights: args.weights.clone(),
        templates: args.templates.clone(),
        relations,
        batches: args.batches,
        batch_size: args.batch_size,
        scheme: args.scheme,
        paraphrases: args.paraphrases,
        demos: args.demos,
        per_relation: (args.mode == Mode::Relations).then_some(args.per_relation),
        residual: !args.no_residual,
        model: weights.config,
        analysis: AnalysisParams::default(),
    };
    let prompts = plan_prompts(&records, &table, &vocab, &manifest).exit_code(EXIT_INPUT)?;
    log::info!("simulating {} prompts", prompts.len());

    let options = ForwardOptions {
        residual: manifest.residual,
    };
    let mut writer = TraceFileWriter::create(create(&args.out)?, weights.config)?;
    for chunk in prompts.chunks(CHUNK) {
        let traces = chunk
            .par_iter()
            .map(|p| run_prompt(p, &weights, options))
            .collect::<Result<Vec<_>>>()?;
        for t in &traces {
            writer
                .append(t)
                .with_context(|| format!("writing trace {}", t.prompt_id))?;
        }
    }
    writer.finish()?;

    let lens_path = args.lens_path();
    write_lens(&weights.lens(), create(&lens_path)?)
        .with_context(|| format!("writing {}", lens_path.display()))?;
    manifest.write(&sidecar_path(&args.out))?;
    Ok(manifest)
}
