//! Activation traces and their on-disk format.
//!
//! A trace file holds one header followed by any number of records, one per
//! prompt. Every record stores the probe-position activations of every layer:
//! the hidden state, one attention row per head and the FFN up-projection.
//!
//! ```text
//! header  : "IATR" | version u16 | L d_model d_inter d_mid H |V| max_seq_len (u32 x7) | count u32
//! record  : id_len u16 | id utf-8 | seq_len u32 | token_ids u32[seq_len] | probe u32
//!           | n_constraints u16 | constraints u32[n] | answer u32 | h_0 f32[d_model]
//!           | L x ( hidden f32[d_model] | H x attn f32[seq_len] | up f32[d_inter] )
//! ```
//!
//! All integers and floats are little-endian. The embedding matrix used by the
//! logit lens lives in a separate companion file (`IALN`).

use std::fmt;
use std::io::{self, Read, Seek, SeekFrom, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TRACE_MAGIC: [u8; 4] = *b"IATR";
pub const LENS_MAGIC: [u8; 4] = *b"IALN";
pub const FORMAT_VERSION: u16 = 1;

/// Byte length of the trace file header.
pub const HEADER_SIZE: u64 = 4 + 2 + 7 * 4 + 4;
const COUNT_OFFSET: u64 = 4 + 2 + 7 * 4;

/// Tolerance on `|sum(attention row) - 1|`.
pub const ATTENTION_ROW_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad magic bytes {found:?}, expected {expected:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (this build reads version {FORMAT_VERSION})")]
    UnsupportedVersion { found: u16 },
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("corrupt trace at record {record}{}: {detail}", fmt_layer(*.layer))]
    Corrupt {
        record: usize,
        layer: Option<usize>,
        detail: String,
    },
    #[error("record {record} failed validation:\n{report}")]
    Invalid {
        record: usize,
        report: ValidationReport,
    },
    #[error("trace config does not match file config")]
    ConfigMismatch,
    #[error("{what} too long for the format ({len} > {max})")]
    Overflow {
        what: &'static str,
        len: usize,
        max: usize,
    },
    #[error("I/O error after {written} bytes: {source}")]
    Io { written: u64, source: io::Error },
}

fn fmt_layer(layer: Option<usize>) -> String {
    layer.map(|l| format!(", layer {l}")).unwrap_or_default()
}

impl From<io::Error> for TraceError {
    fn from(source: io::Error) -> Self {
        TraceError::Io { written: 0, source }
    }
}

pub type Result<T, E = TraceError> = std::result::Result<T, E>;

/// Dimensional hyperparameters of a decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub d_inter: usize,
    pub d_mid: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("num_layers", self.num_layers),
            ("d_model", self.d_model),
            ("d_inter", self.d_inter),
            ("d_mid", self.d_mid),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(TraceError::InvalidConfig(format!("{name} must be >= 1")));
            }
            if value > u32::MAX as usize {
                return Err(TraceError::InvalidConfig(format!("{name} exceeds u32")));
            }
        }
        if !self.d_mid.is_multiple_of(self.num_heads) {
            return Err(TraceError::InvalidConfig(format!(
                "d_mid {} not divisible by num_heads {}",
                self.d_mid, self.num_heads
            )));
        }
        if self.vocab_size < 2 {
            return Err(TraceError::InvalidConfig("vocab_size must be >= 2".into()));
        }
        Ok(())
    }

    /// Width of one attention head.
    pub fn head_dim(&self) -> usize {
        self.d_mid / self.num_heads
    }

    fn as_u32s(&self) -> [usize; 7] {
        [
            self.num_layers,
            self.d_model,
            self.d_inter,
            self.d_mid,
            self.num_heads,
            self.vocab_size,
            self.max_seq_len,
        ]
    }

    fn from_u32s(v: [u32; 7]) -> Self {
        ModelConfig {
            num_layers: v[0] as usize,
            d_model: v[1] as usize,
            d_inter: v[2] as usize,
            d_mid: v[3] as usize,
            num_heads: v[4] as usize,
            vocab_size: v[5] as usize,
            max_seq_len: v[6] as usize,
        }
    }
}

/// Probe-position activations of one decoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    /// 1-based block index.
    pub layer_index: usize,
    pub hidden: Vec<f32>,
    /// One row per head, each of length `seq_len`.
    pub attention_rows: Vec<Vec<f32>>,
    pub up_projection: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub config: ModelConfig,
    pub prompt_id: String,
    pub token_ids: Vec<u32>,
    pub probe_position: usize,
    pub constraint_positions: Vec<usize>,
    pub answer_first_token: u32,
    pub initial_hidden: Vec<f32>,
    pub layers: Vec<LayerRecord>,
}

impl ActivationTrace {
    pub fn seq_len(&self) -> usize {
        self.token_ids.len()
    }

    /// Hidden state at `layer` where 0 is the embedding stream.
    pub fn hidden_at(&self, layer: usize) -> &[f32] {
        if layer == 0 {
            &self.initial_hidden
        } else {
            &self.layers[layer - 1].hidden
        }
    }

    /// Serialized size of this trace as a record (header excluded).
    pub fn record_size(&self) -> u64 {
        record_size(
            &self.config,
            self.prompt_id.len(),
            self.seq_len(),
            self.constraint_positions.len(),
        )
    }
}

/// Size in bytes of one record for the given dimensions.
pub fn record_size(
    config: &ModelConfig,
    prompt_id_len: usize,
    seq_len: usize,
    constraints: usize,
) -> u64 {
    let (d, di, h, l) = (
        config.d_model as u64,
        config.d_inter as u64,
        config.num_heads as u64,
        config.num_layers as u64,
    );
    let seq = seq_len as u64;
    let fixed = 2 + prompt_id_len as u64 + 4 + 4 * seq + 4 + 2 + 4 * constraints as u64 + 4 + 4 * d;
    fixed + l * (4 * d + 4 * h * seq + 4 * di)
}

/// One violated invariant found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq)]
pub enum ValidationIssue {
    Config(String),
    ConfigMismatch,
    LayerCount {
        expected: usize,
        actual: usize,
    },
    LayerOrder {
        position: usize,
        layer_index: usize,
    },
    Length {
        field: &'static str,
        layer: Option<usize>,
        expected: usize,
        actual: usize,
    },
    Bounds {
        field: &'static str,
        index: usize,
        bound: usize,
    },
    NonFinite {
        field: &'static str,
        layer: Option<usize>,
        position: usize,
    },
    NegativeAttention {
        layer: usize,
        head: usize,
        position: usize,
    },
    AttentionRowSum {
        layer: usize,
        head: usize,
        sum: f64,
        deviation: f64,
    },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::Config(msg) => write!(f, "config: {msg}"),
            ValidationIssue::ConfigMismatch => write!(f, "trace config differs from expected config"),
            ValidationIssue::LayerCount { expected, actual } => {
                write!(f, "expected {expected} layer records, found {actual}")
            }
            ValidationIssue::LayerOrder { position, layer_index } => write!(
                f,
                "layer record {position} has index {layer_index}, expected {}",
                position + 1
            ),
            ValidationIssue::Length { field, layer, expected, actual } => write!(
                f,
                "{field}{}: length {actual}, expected {expected}",
                fmt_layer(*layer)
            ),
            ValidationIssue::Bounds { field, index, bound } => {
                write!(f, "{field}: index {index} out of bounds (limit {bound})")
            }
            ValidationIssue::NonFinite { field, layer, position } => write!(
                f,
                "{field}{}: non-finite value at position {position}",
                fmt_layer(*layer)
            ),
            ValidationIssue::NegativeAttention { layer, head, position } => write!(
                f,
                "attention layer {layer}, head {head}: negative weight at position {position}"
            ),
            ValidationIssue::AttentionRowSum { layer, head, sum, deviation } => write!(
                f,
                "attention layer {layer}, head {head}: row sums to {sum:.6} (deviation {deviation:.3e})"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "  - {issue}")?;
        }
        Ok(())
    }
}

fn check_finite(
    issues: &mut Vec<ValidationIssue>,
    field: &'static str,
    layer: Option<usize>,
    values: &[f32],
) {
    if let Some(position) = values.iter().position(|v| !v.is_finite()) {
        issues.push(ValidationIssue::NonFinite {
            field,
            layer,
            position,
        });
    }
}

fn check_len(
    issues: &mut Vec<ValidationIssue>,
    field: &'static str,
    layer: Option<usize>,
    expected: usize,
    actual: usize,
) {
    if expected != actual {
        issues.push(ValidationIssue::Length {
            field,
            layer,
            expected,
            actual,
        });
    }
}

/// Lists every invariant `trace` violates with respect to `config`.
pub fn validate_trace(trace: &ActivationTrace, config: &ModelConfig) -> ValidationReport {
    let mut issues = Vec::new();
    if let Err(e) = config.validate() {
        issues.push(ValidationIssue::Config(e.to_string()));
        return ValidationReport { issues };
    }
    if trace.config != *config {
        issues.push(ValidationIssue::ConfigMismatch);
    }
    let seq_len = trace.seq_len();
    if seq_len == 0 {
        issues.push(ValidationIssue::Length {
            field: "token_ids",
            layer: None,
            expected: 1,
            actual: 0,
        });
    }
    if seq_len > config.max_seq_len {
        issues.push(ValidationIssue::Bounds {
            field: "seq_len",
            index: seq_len,
            bound: config.max_seq_len,
        });
    }
    for &tok in &trace.token_ids {
        if tok as usize >= config.vocab_size {
            issues.push(ValidationIssue::Bounds {
                field: "token_ids",
                index: tok as usize,
                bound: config.vocab_size,
            });
        }
    }
    if trace.probe_position >= seq_len {
        issues.push(ValidationIssue::Bounds {
            field: "probe_position",
            index: trace.probe_position,
            bound: seq_len,
        });
    }
    for &c in &trace.constraint_positions {
        if c >= trace.probe_position {
            issues.push(ValidationIssue::Bounds {
                field: "constraint_positions",
                index: c,
                bound: trace.probe_position,
            });
        }
    }
    if trace.answer_first_token as usize >= config.vocab_size {
        issues.push(ValidationIssue::Bounds {
            field: "answer_first_token",
            index: trace.answer_first_token as usize,
            bound: config.vocab_size,
        });
    }
    check_len(
        &mut issues,
        "initial_hidden",
        None,
        config.d_model,
        trace.initial_hidden.len(),
    );
    check_finite(&mut issues, "initial_hidden", None, &trace.initial_hidden);

    if trace.layers.len() != config.num_layers {
        issues.push(ValidationIssue::LayerCount {
            expected: config.num_layers,
            actual: trace.layers.len(),
        });
    }
    for (pos, rec) in trace.layers.iter().enumerate() {
        let layer = Some(rec.layer_index);
        if rec.layer_index != pos + 1 {
            issues.push(ValidationIssue::LayerOrder {
                position: pos,
                layer_index: rec.layer_index,
            });
        }
        check_len(
            &mut issues,
            "hidden",
            layer,
            config.d_model,
            rec.hidden.len(),
        );
        check_finite(&mut issues, "hidden", layer, &rec.hidden);
        check_len(
            &mut issues,
            "up_projection",
            layer,
            config.d_inter,
            rec.up_projection.len(),
        );
        check_finite(&mut issues, "up_projection", layer, &rec.up_projection);
        check_len(
            &mut issues,
            "attention_rows",
            layer,
            config.num_heads,
            rec.attention_rows.len(),
        );
        for (head, row) in rec.attention_rows.iter().enumerate() {
            check_len(&mut issues, "attention_row", layer, seq_len, row.len());
            if row.iter().any(|v| !v.is_finite()) {
                check_finite(&mut issues, "attention_row", layer, row);
                continue;
            }
            if let Some(position) = row.iter().position(|&v| v < 0.0) {
                issues.push(ValidationIssue::NegativeAttention {
                    layer: rec.layer_index,
                    head,
                    position,
                });
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            let deviation = (sum - 1.0).abs();
            if deviation > ATTENTION_ROW_TOLERANCE {
                issues.push(ValidationIssue::AttentionRowSum {
                    layer: rec.layer_index,
                    head,
                    sum,
                    deviation,
                });
            }
        }
    }
    ValidationReport { issues }
}

fn encode_header(config: &ModelConfig, count: u32, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&TRACE_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in config.as_u32s() {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&count.to_le_bytes());
}

fn put_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_record(trace: &ActivationTrace, buf: &mut Vec<u8>) -> Result<()> {
    let id = trace.prompt_id.as_bytes();
    if id.len() > u16::MAX as usize {
        return Err(TraceError::Overflow {
            what: "prompt_id",
            len: id.len(),
            max: u16::MAX as usize,
        });
    }
    if trace.constraint_positions.len() > u16::MAX as usize {
        return Err(TraceError::Overflow {
            what: "constraint_positions",
            len: trace.constraint_positions.len(),
            max: u16::MAX as usize,
        });
    }
    buf.reserve(trace.record_size() as usize);
    buf.extend_from_slice(&(id.len() as u16).to_le_bytes());
    buf.extend_from_slice(id);
    buf.extend_from_slice(&(trace.token_ids.len() as u32).to_le_bytes());
    for t in &trace.token_ids {
        buf.extend_from_slice(&t.to_le_bytes());
    }
    buf.extend_from_slice(&(trace.probe_position as u32).to_le_bytes());
    buf.extend_from_slice(&(trace.constraint_positions.len() as u16).to_le_bytes());
    for &c in &trace.constraint_positions {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    buf.extend_from_slice(&trace.answer_first_token.to_le_bytes());
    put_f32s(buf, &trace.initial_hidden);
    for layer in &trace.layers {
        put_f32s(buf, &layer.hidden);
        for row in &layer.attention_rows {
            put_f32s(buf, row);
        }
        put_f32s(buf, &layer.up_projection);
    }
    Ok(())
}

fn ensure_valid(trace: &ActivationTrace, record: usize) -> Result<()> {
    let report = validate_trace(trace, &trace.config);
    if report.is_empty() {
        Ok(())
    } else {
        Err(TraceError::Invalid { record, report })
    }
}

/// Tracks how many bytes reached the sink so I/O failures can report it.
struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> Write for CountingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

fn write_counted<W: Write>(sink: W, bytes: &[u8]) -> Result<u64> {
    let mut w = CountingWriter {
        inner: sink,
        written: 0,
    };
    match w.write_all(bytes).and_then(|_| w.flush()) {
        Ok(()) => Ok(w.written),
        Err(source) => Err(TraceError::Io {
            written: w.written,
            source,
        }),
    }
}

/// Writes `trace` as a complete single-record trace file and returns the
/// number of bytes written.
pub fn write_trace<W: Write>(trace: &ActivationTrace, sink: W) -> Result<u64> {
    ensure_valid(trace, 0)?;
    let mut buf = Vec::with_capacity((HEADER_SIZE + trace.record_size()) as usize);
    encode_header(&trace.config, 1, &mut buf);
    encode_record(trace, &mut buf)?;
    write_counted(sink, &buf)
}

/// Appends records to a multi-record trace file, keeping the header count
/// current after every append.
pub struct TraceFileWriter<W: Write + Seek> {
    sink: W,
    config: ModelConfig,
    count: u32,
    buf: Vec<u8>,
}

impl<W: Write + Seek> TraceFileWriter<W> {
    /// Starts a new file at the current position of `sink`.
    pub fn create(mut sink: W, config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut buf = Vec::with_capacity(HEADER_SIZE as usize);
        encode_header(&config, 0, &mut buf);
        sink.seek(SeekFrom::Start(0))?;
        write_counted(&mut sink, &buf)?;
        Ok(TraceFileWriter {
            sink,
            config,
            count: 0,
            buf: Vec::new(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn count(&self) -> u32 {
        self.count
    }

    /// Appends one record; nothing is written if the trace is invalid.
    pub fn append(&mut self, trace: &ActivationTrace) -> Result<u64> {
        if trace.config != self.config {
            return Err(TraceError::ConfigMismatch);
        }
        ensure_valid(trace, self.count as usize)?;
        self.buf.clear();
        encode_record(trace, &mut self.buf)?;
        let n = write_counted(&mut self.sink, &self.buf)?;
        self.count += 1;
        self.sink.seek(SeekFrom::Start(COUNT_OFFSET))?;
        self.sink.write_all(&self.count.to_le_bytes())?;
        self.sink.seek(SeekFrom::End(0))?;
        Ok(n)
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

impl TraceFileWriter<std::fs::File> {
    /// Reopens an existing trace file for appending.
    pub fn open_append(path: &std::path::Path) -> Result<Self> {
        let mut file = std::fs::OpenOptions::new()
            .read(true)
            .write(true)
            .open(path)?;
        let (config, count) = read_header(&mut file)?;
        file.seek(SeekFrom::End(0))?;
        Ok(TraceFileWriter {
            sink: file,
            config,
            count,
            buf: Vec::new(),
        })
    }
}

fn read_header<R: Read>(source: &mut R) -> Result<(ModelConfig, u32)> {
    let mut head = [0u8; HEADER_SIZE as usize];
    read_full(source, &mut head[..4]).map_err(|_| TraceError::TruncatedHeader)?;
    let found: [u8; 4] = head[..4].try_into().unwrap();
    if found != TRACE_MAGIC {
        return Err(TraceError::BadMagic {
            expected: TRACE_MAGIC,
            found,
        });
    }
    read_full(source, &mut head[4..]).map_err(|_| TraceError::TruncatedHeader)?;
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(TraceError::UnsupportedVersion { found: version });
    }
    let mut dims = [0u32; 7];
    for (i, d) in dims.iter_mut().enumerate() {
        let off = 6 + 4 * i;
        *d = u32::from_le_bytes(head[off..off + 4].try_into().unwrap());
    }
    let config = ModelConfig::from_u32s(dims);
    config.validate()?;
    let count = u32::from_le_bytes(head[34..38].try_into().unwrap());
    Ok((config, count))
}

fn read_full<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<()> {
    source.read_exact(buf)
}

/// Streaming reader over the records of a trace file.
pub struct TraceReader<R: Read> {
    source: R,
    config: ModelConfig,
    count: u32,
    next: u32,
    scratch: Vec<u8>,
    done: bool,
}

impl<R: Read> TraceReader<R> {
    pub fn new(mut source: R) -> Result<Self> {
        let (config, count) = read_header(&mut source)?;
        Ok(TraceReader {
            source,
            config,
            count,
            next: 0,
            scratch: Vec::new(),
            done: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn record_count(&self) -> u32 {
        self.count
    }

    fn corrupt(&self, layer: Option<usize>, detail: impl Into<String>) -> TraceError {
        TraceError::Corrupt {
            record: self.next as usize,
            layer,
            detail: detail.into(),
        }
    }

    fn bytes(&mut self, n: usize, layer: Option<usize>, what: &str) -> Result<&[u8]> {
        self.scratch.resize(n, 0);
        match self.source.read_exact(&mut self.scratch) {
            Ok(()) => Ok(&self.scratch),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                Err(self.corrupt(layer, format!("stream truncated while reading {what}")))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn u16(&mut self, layer: Option<usize>, what: &str) -> Result<u16> {
        let b = self.bytes(2, layer, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, layer: Option<usize>, what: &str) -> Result<u32> {
        let b = self.bytes(4, layer, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, layer: Option<usize>, what: &str) -> Result<Vec<f32>> {
        let b = self.bytes(4 * n, layer, what)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn read_record(&mut self) -> Result<ActivationTrace> {
        let cfg = self.config;
        let id_len = self.u16(None, "prompt_id length")? as usize;
        let id_bytes = self.bytes(id_len, None, "prompt_id")?.to_vec();
        let prompt_id = String::from_utf8(id_bytes)
            .map_err(|_| self.corrupt(None, "prompt_id is not valid UTF-8"))?;
        let seq_len = self.u32(None, "seq_len")? as usize;
        if seq_len == 0 || seq_len > cfg.max_seq_len {
            return Err(self.corrupt(
                None,
                format!("seq_len {seq_len} outside 1..={}", cfg.max_seq_len),
            ));
        }
        let tok_bytes = self.bytes(4 * seq_len, None, "token_ids")?;
        let token_ids: Vec<u32> = tok_bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let probe_position = self.u32(None, "probe_position")? as usize;
        let n_constraints = self.u16(None, "constraint count")? as usize;
        let mut constraint_positions = Vec::with_capacity(n_constraints);
        for _ in 0..n_constraints {
            constraint_positions.push(self.u32(None, "constraint positions")? as usize);
        }
        let answer_first_token = self.u32(None, "answer_first_token")?;
        let initial_hidden = self.f32s(cfg.d_model, None, "h_0")?;
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 1..=cfg.num_layers {
            let at = Some(l);
            let hidden = self.f32s(cfg.d_model, at, "hidden state")?;
            let mut attention_rows = Vec::with_capacity(cfg.num_heads);
            for _ in 0..cfg.num_heads {
                attention_rows.push(self.f32s(seq_len, at, "attention row")?);
            }
            let up_projection = self.f32s(cfg.d_inter, at, "up-projection")?;
            layers.push(LayerRecord {
                layer_index: l,
                hidden,
                attention_rows,
                up_projection,
            });
        }
        Ok(ActivationTrace {
            config: cfg,
            prompt_id,
            token_ids,
            probe_position,
            constraint_positions,
            answer_first_token,
            initial_hidden,
            layers,
        })
    }

    fn check_trailing(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        loop {
            match self.source.read(&mut probe) {
                Ok(0) => return Ok(()),
                Ok(_) => {
                    return Err(self.corrupt(
                        None,
                        format!("trailing bytes after {} declared records", self.count),
                    ))
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl<R: Read> Iterator for TraceReader<R> {
    type Item = Result<ActivationTrace>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next == self.count {
            self.done = true;
            return match self.check_trailing() {
                Ok(()) => None,
                Err(e) => Some(Err(e)),
            };
        }
        let result = self.read_record().and_then(|trace| {
            let report = validate_trace(&trace, &self.config);
            if report.is_empty() {
                Ok(trace)
            } else {
                Err(TraceError::Invalid {
                    record: self.next as usize,
                    report,
                })
            }
        });
        if result.is_err() {
            self.done = true;
        }
        self.next += 1;
        Some(result)
    }
}

/// Decoded contents of a multi-record trace file.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub config: ModelConfig,
    pub records: Vec<ActivationTrace>,
}

pub fn read_trace_file<R: Read>(source: R) -> Result<TraceFile> {
    let reader = TraceReader::new(source)?;
    let config = *reader.config();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok(TraceFile { config, records })
}

/// Reads a file holding exactly one record.
pub fn read_trace<R: Read>(source: R) -> Result<ActivationTrace> {
    let mut file = read_trace_file(source)?;
    if file.records.len() != 1 {
        return Err(TraceError::Corrupt {
            record: 0,
            layer: None,
            detail: format!("expected a single record, found {}", file.records.len()),
        });
    }
    Ok(file.records.pop().unwrap())
}

/// Embedding matrix used to project hidden states onto the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LensMatrix {
    vocab_size: usize,
    d_model: usize,
    /// Row-major `vocab_size x d_model`.
    data: Vec<f32>,
}

impl LensMatrix {
    pub fn new(vocab_size: usize, d_model: usize, data: Vec<f32>) -> Result<Self> {
        if vocab_size == 0 || d_model == 0 || data.len() != vocab_size * d_model {
            return Err(TraceError::InvalidConfig(format!(
                "lens data length {} does not match {vocab_size} x {d_model}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TraceError::InvalidConfig(format!(
                "non-finite lens entry at row {}, column {}",
                i / d_model,
                i % d_model
            )));
        }
        Ok(LensMatrix {
            vocab_size,
            d_model,
            data,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn row(&self, token: usize) -> &[f32] {
        &self.data[token * self.d_model..(token + 1) * self.d_model]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Checks the lens against a trace config.
    pub fn matches(&self, config: &ModelConfig) -> bool {
        self.vocab_size == config.vocab_size && self.d_model == config.d_model
    }
}

pub fn write_lens<W: Write>(lens: &LensMatrix, sink: W) -> Result<u64> {
    let mut buf = Vec::with_capacity(14 + 4 * lens.data.len());
    buf.extend_from_slice(&LENS_MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(lens.vocab_size as u32).to_le_bytes());
    buf.extend_from_slice(&(lens.d_model as u32).to_le_bytes());
    put_f32s(&mut buf, &lens.data);
    write_counted(sink, &buf)
}

pub fn read_lens<R: Read>(mut source: R) -> Result<LensMatrix> {
    let mut head = [0u8; 14];
    source
        .read_exact(&mut head[..4])
        .map_err(|_| TraceError::TruncatedHeader)?;
    let found: [u8; 4] = head[..4].try_into().unwrap();
    if found != LENS_MAGIC {
        return Err(TraceError::BadMagic {
            expected: LENS_MAGIC,
            found,
        });
    }
    source
        .read_exact(&mut head[4..])
        .map_err(|_| TraceError::TruncatedHeader)?;
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != FORMAT_VERSION {
        return Err(TraceError::UnsupportedVersion { found: version });
    }
    let vocab_size = u32::from_le_bytes(head[6..10].try_into().unwrap()) as usize;
    let d_model = u32::from_le_bytes(head[10..14].try_into().unwrap()) as usize;
    let mut bytes = vec![0u8; 4 * vocab_size * d_model];
    source
        .read_exact(&mut bytes)
        .map_err(|_| TraceError::Corrupt {
            record: 0,
            layer: None,
            detail: "lens matrix truncated".into(),
        })?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    LensMatrix::new(vocab_size, d_model, data)
}
