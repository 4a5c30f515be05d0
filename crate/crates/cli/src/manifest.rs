//! The run manifest: every input and parameter that determines a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use popprobe::corpus::BatchScheme;
use popprobe::probes::{PairDivisor, RelationDivisor, DEFAULT_KL_FLOOR};
use popprobe::trace::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{ExitContext, EXIT_INPUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Every lexical variant of each question in popularity batches.
    Paraphrase,
    /// Original questions only, in equispaced per-relation levels.
    Relations,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Paraphrase => "paraphrase",
            Mode::Relations => "relations",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub kl_floor: f64,
    /// KL divergences are in nats.
    pub log_base: String,
    pub pair_divisor: PairDivisor,
    pub relation_divisor: RelationDivisor,
    /// Significance threshold for the heatmap Welch test.
    pub alpha: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            kl_floor: DEFAULT_KL_FLOOR,
            log_base: "e".into(),
            pair_divisor: PairDivisor::Verbatim,
            relation_divisor: RelationDivisor::Mean,
            alpha: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    pub mode: Mode,
    pub corpus: PathBuf,
    pub vocab: PathBuf,
    pub weights: PathBuf,
    /// `None` means the built-in templates.
    pub templates: Option<PathBuf>,
    /// Relations simulated, sorted.
    pub relations: Vec<String>,
    pub batches: usize,
    pub batch_size: usize,
    pub scheme: BatchScheme,
    pub paraphrases: usize,
    pub demos: usize,
    /// Questions per relation and level in relations mode.
    pub per_relation: Option<usize>,
    pub residual: bool,
    pub model: ModelConfig,
    pub analysis: AnalysisParams,
}

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Where the manifest of a trace file lives.
pub fn sidecar_path(trace: &Path) -> PathBuf {
    let mut s = trace.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading run manifest {}", path.display()))
            .exit_code(EXIT_INPUT)?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing run manifest {}", path.display()))
            .exit_code(EXIT_INPUT)
    }
}
