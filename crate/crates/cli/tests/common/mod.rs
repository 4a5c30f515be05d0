//! Pipelines and hand-built runs shared by the cli test targets.
#![allow(dead_code)]

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use popprobe::corpus::{write_corpus, BatchScheme, QuestionRecord};
use popprobe::trace::{ActivationTrace, LayerRecord, ModelConfig, TraceFileWriter};
use popprobe_cli::manifest::{sidecar_path, AnalysisParams, Mode, RunManifest, TOOL_VERSION};
use popprobe_cli::{
    cmd_build_vocab, cmd_gen_corpus, cmd_init_weights, cmd_simulate, BuildVocabArgs, GenCorpusArgs,
    InitWeightsArgs, SimulateArgs,
};

pub const LAYERS: usize = 8;
pub const VOCAB: usize = 256;

pub struct Run {
    pub dir: PathBuf,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub weights: PathBuf,
    pub traces: PathBuf,
    pub lens: PathBuf,
}

/// A fresh directory under cargo's per-target scratch space.
pub fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Corpus, vocabulary and planted weights: Head answers converge by layer
/// ceil(L/3), Tail answers at layer L.
pub fn planted_inputs(dir: &Path) -> Run {
    let corpus = dir.join("corpus.tsv");
    let vocab = dir.join("vocab.txt");
    let weights = dir.join("weights.bin");
    cmd_gen_corpus(&GenCorpusArgs {
        out: corpus.clone(),
        relations: vec!["capital".into()],
        per_relation: 165,
        answers: 20,
        seed: 7,
        templates: None,
    })
    .unwrap();
    cmd_build_vocab(&BuildVocabArgs {
        corpus: corpus.clone(),
        out: vocab.clone(),
        size: VOCAB,
        templates: None,
        paraphrases: 10,
    })
    .unwrap();
    cmd_init_weights(&InitWeightsArgs {
        vocab: vocab.clone(),
        out: weights.clone(),
        layers: LAYERS,
        d_model: 64,
        d_inter: 64,
        heads: 4,
        max_seq_len: 128,
        seed: 3,
        planted: true,
        corpus: Some(corpus.clone()),
        relations: vec!["capital".into()],
        batches: 2,
        batch_size: 10,
        scheme: BatchScheme::HeadTail,
    })
    .unwrap();
    Run {
        dir: dir.to_path_buf(),
        traces: dir.join("traces.iatr"),
        lens: dir.join("traces.ialn"),
        corpus,
        vocab,
        weights,
    }
}

/// 2 batches x 10 questions x 10 paraphrases, no demonstrations.
pub fn planted_simulate_args(run: &Run) -> SimulateArgs {
    SimulateArgs {
        lens: Some(run.lens.clone()),
        batches: 2,
        batch_size: 10,
        scheme: BatchScheme::HeadTail,
        paraphrases: 10,
        demos: 0,
        seed: 11,
        ..SimulateArgs::new(
            run.corpus.clone(),
            run.vocab.clone(),
            run.weights.clone(),
            run.traces.clone(),
        )
    }
}

pub fn planted_run(dir: &Path) -> Run {
    let run = planted_inputs(dir);
    cmd_simulate(&planted_simulate_args(&run)).unwrap();
    run
}

pub fn record(id: &str, relation: &str, popularity: f64) -> QuestionRecord {
    QuestionRecord {
        id: id.into(),
        subject: format!("S{id}"),
        relation: relation.into(),
        object: format!("O{id}"),
        p_subj: popularity,
        p_obj: popularity,
        question: format!("What about S{id}?"),
    }
}

pub fn tiny_config(seq: usize, d_inter: usize) -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        d_model: 2,
        d_inter,
        d_mid: 2,
        num_heads: 1,
        vocab_size: 4,
        max_seq_len: seq,
    }
}

/// A trace with the given per-head attention rows and up-projection at
/// every layer.
pub fn crafted_trace(
    config: ModelConfig,
    prompt_id: &str,
    attention: Vec<Vec<f32>>,
    up: Vec<f32>,
    constraints: Vec<usize>,
) -> ActivationTrace {
    let seq = attention[0].len();
    ActivationTrace {
        config,
        prompt_id: prompt_id.into(),
        token_ids: vec![1; seq],
        probe_position: seq - 1,
        constraint_positions: constraints,
        answer_first_token: 2,
        initial_hidden: vec![0.1; config.d_model],
        layers: (1..=config.num_layers)
            .map(|l| LayerRecord {
                layer_index: l,
                hidden: vec![0.2; config.d_model],
                attention_rows: attention.clone(),
                up_projection: up.clone(),
            })
            .collect(),
    }
}

/// Writes a corpus, a trace file and its manifest sidecar for a run whose
/// traces were built by hand rather than simulated.
pub fn crafted_run(
    dir: &Path,
    records: &[QuestionRecord],
    manifest: impl FnOnce(&Path) -> RunManifest,
    traces: &[ActivationTrace],
) -> PathBuf {
    let corpus = dir.join("corpus.tsv");
    write_corpus(records, File::create(&corpus).unwrap()).unwrap();
    let m = manifest(&corpus);
    let path = dir.join("traces.iatr");
    let mut w =
        TraceFileWriter::create(BufWriter::new(File::create(&path).unwrap()), m.model).unwrap();
    for t in traces {
        w.append(t).unwrap();
    }
    w.finish().unwrap();
    m.write(&sidecar_path(&path)).unwrap();
    path
}

pub fn manifest(corpus: &Path, mode: Mode, model: ModelConfig) -> RunManifest {
    RunManifest {
        tool_version: TOOL_VERSION.into(),
        seed: 0,
        mode,
        corpus: corpus.to_path_buf(),
        vocab: corpus.with_file_name("vocab.txt"),
        weights: corpus.with_file_name("weights.bin"),
        templates: None,
        relations: vec!["capital".into()],
        batches: 2,
        batch_size: 1,
        scheme: BatchScheme::HeadTail,
        paraphrases: 2,
        demos: 0,
        per_relation: None,
        residual: true,
        model,
        analysis: AnalysisParams::default(),
    }
}

/// Every file in `dir` (non-recursive), sorted, with its bytes.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}
