//! Subcommand implementations. Every `cmd_*` returns an `anyhow` error
//! tagged with the exit code the binary should use.

mod analyze;
mod corpus;
mod simulate;
mod validate;
mod weights;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{Context, Result};
use popprobe::corpus::{read_corpus, QuestionRecord, TemplateTable};
use popprobe::model::DecoderWeights;
use popprobe::trace::{read_lens, read_trace_file, LensMatrix, TraceError, TraceFile};
use popprobe::Vocab;

use crate::error::{ExitContext, EXIT_INPUT, EXIT_INVALID};

pub use analyze::{cmd_analyze, AnalyzeArgs, AnalyzeKind};
pub use corpus::{cmd_build_vocab, cmd_gen_corpus, BuildVocabArgs, GenCorpusArgs};
pub use simulate::{cmd_simulate, SimulateArgs};
pub use validate::{cmd_validate, ValidateArgs};
pub use weights::{cmd_init_weights, converge_layer, InitWeightsArgs};

fn open(path: &Path, what: &str) -> Result<BufReader<File>> {
    if path.is_dir() {
        return Err(anyhow::anyhow!("{what} {} is a directory", path.display()))
            .exit_code(EXIT_INPUT);
    }
    File::open(path)
        .map(BufReader::new)
        .with_context(|| format!("opening {what} {}", path.display()))
        .exit_code(EXIT_INPUT)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
}

pub(crate) fn load_corpus(path: &Path) -> Result<Vec<QuestionRecord>> {
    read_corpus(open(path, "corpus")?)
        .with_context(|| format!("reading corpus {}", path.display()))
        .exit_code(EXIT_INPUT)
}

pub(crate) fn load_templates(path: Option<&Path>) -> Result<TemplateTable> {
    match path {
        None => Ok(TemplateTable::builtin()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading templates {}", p.display()))
                .exit_code(EXIT_INPUT)?;
            TemplateTable::parse(&text)
                .with_context(|| format!("parsing templates {}", p.display()))
                .exit_code(EXIT_INPUT)
        }
    }
}

pub(crate) fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::read(open(path, "vocabulary")?)
        .with_context(|| format!("reading vocabulary {}", path.display()))
        .exit_code(EXIT_INPUT)
}

pub(crate) fn load_weights(path: &Path) -> Result<DecoderWeights> {
    DecoderWeights::read(open(path, "weights file")?)
        .with_context(|| format!("reading weights {}", path.display()))
        .exit_code(EXIT_INPUT)
}

pub(crate) fn load_lens(path: &Path) -> Result<LensMatrix> {
    read_lens(open(path, "lens file")?)
        .with_context(|| format!("reading lens {}", path.display()))
        .exit_code(EXIT_INVALID)
}

/// I/O failures are input errors; anything the reader rejects is invalid.
pub(crate) fn trace_exit_code(e: &TraceError) -> u8 {
    match e {
        TraceError::Io { .. } => EXIT_INPUT,
        _ => EXIT_INVALID,
    }
}

pub(crate) fn load_traces(path: &Path) -> Result<TraceFile> {
    let source = open(path, "trace file")?;
    read_trace_file(source).map_err(|e| {
        let code = trace_exit_code(&e);
        crate::error::coded(
            code,
            anyhow::Error::new(e).context(format!("reading traces {}", path.display())),
        )
    })
}
