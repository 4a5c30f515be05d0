use std::path::PathBuf;

use anyhow::{Context, Result};
use popprobe::corpus::synthetic::{generate_corpus, SyntheticCorpusSpec};
use popprobe::corpus::{expand_paraphrases, write_corpus, TASK_DESCRIPTOR};
use popprobe::Vocab;

use super::{create, load_corpus, load_templates};
use crate::error::{ExitContext, EXIT_INPUT};

#[derive(Debug, Clone, clap::Args)]
pub struct GenCorpusArgs {
    /// Output corpus, tab-separated with a header row.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated relations; each needs templates.
    #[arg(long, value_delimiter = ',', default_value = "capital")]
    pub relations: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub per_relation: usize,
    /// Distinct answers per relation.
    #[arg(long, default_value_t = 20)]
    pub answers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Template file; defaults to the built-in templates.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

pub fn cmd_gen_corpus(args: &GenCorpusArgs) -> Result<()> {
    let table = load_templates(args.templates.as_deref())?;
    let spec = SyntheticCorpusSpec {
        relations: args.relations.clone(),
        per_relation: args.per_relation,
        answers_per_relation: args.answers,
        seed: args.seed,
        ..SyntheticCorpusSpec::default()
    };
    let records = generate_corpus(&spec, &table).exit_code(EXIT_INPUT)?;
    write_corpus(&records, create(&args.out)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} records to {}", records.len(), args.out.display());
    Ok(())
}

#[derive(Debug, Clone, clap::Args)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output vocabulary, one token per line.
    #[arg(long)]
    pub out: PathBuf,
    /// Maximum vocabulary size.
    #[arg(long, default_value_t = 4096)]
    pub size: usize,
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Paraphrase variants per question to cover.
    #[arg(long, default_value_t = 10)]
    pub paraphrases: usize,
}

/// Subjects and answers become whole tokens; the rest of the room goes to
/// the most frequent words of every prompt the corpus can produce.
pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let records = load_corpus(&args.corpus)?;
    let table = load_templates(args.templates.as_deref())?;
    let mut texts: Vec<String> = vec![TASK_DESCRIPTOR.to_string(), "Q: A:".to_string()];
    for r in &records {
        texts.push(r.question.clone());
        texts.push(r.answer().to_string());
        if let Some(ts) = table.templates(&r.relation) {
            let p = args.paraphrases.min(ts.len()).max(1);
            for inst in expand_paraphrases(r, &table, p).exit_code(EXIT_INPUT)? {
                texts.push(inst.text);
            }
        }
    }
    let required: Vec<&str> = records
        .iter()
        .flat_map(|r| [r.subject.as_str(), r.answer()])
        .collect();
    let vocab = Vocab::build(required, texts.iter().map(String::as_str), args.size)
        .exit_code(EXIT_INPUT)?;
    vocab
        .write(create(&args.out)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    log::info!("wrote {} tokens to {}", vocab.len(), args.out.display());
    Ok(())
}
