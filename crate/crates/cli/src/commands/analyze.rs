use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use popprobe::model::{greedy_decode, logit_lens};
use popprobe::probes::{
    attention_constraint_score, ffn_paraphrase_similarity, heatmap_welch, kl_convergence,
    relation_similarity, response_variety, target_probability_curve, LayerCurve, PairDivisor,
    QuestionStats, RelationDivisor, ScalarCurve,
};
use popprobe::stats::Normalizer;
use popprobe::trace::TraceFile;
use popprobe::{ActivationTrace, Direction, LensMatrix, QuestionRecord, QuestionTraces};

use super::{load_corpus, load_lens, load_traces, load_vocab};
use crate::error::{coded, ExitContext, EXIT_INPUT, EXIT_INVALID};
use crate::manifest::{sidecar_path, Mode, RunManifest};
use crate::plan::{groups, prompt_id, variants, QuestionGroup};
use crate::plot::{heatmap, line_chart, Series};
use crate::report::{
    write_csv, AnswerRow, CurveRow, HeatmapRow, QuestionRow, VarietyCsvRow, WelchRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AnalyzeKind {
    /// Logit-lens KL divergence to the answer, per layer.
    Kl,
    /// Attention from the probe position to constraint tokens.
    Attn,
    /// Up-projection similarity across paraphrases and answer probability.
    Ffn,
    /// Cross-relation up-projection similarity heatmaps.
    Relations,
    /// Spread of answer F1 across paraphrases.
    Variety,
}

impl AnalyzeKind {
    fn name(self) -> &'static str {
        match self {
            AnalyzeKind::Kl => "kl",
            AnalyzeKind::Attn => "attn",
            AnalyzeKind::Ffn => "ffn",
            AnalyzeKind::Relations => "relations",
            AnalyzeKind::Variety => "variety",
        }
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub kind: AnalyzeKind,
    #[arg(long)]
    pub traces: PathBuf,
    /// Defaults to the corpus recorded in the run manifest.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Lens file; required by kl, ffn and variety.
    #[arg(long)]
    pub lens: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub kl_floor: Option<f64>,
    #[arg(long)]
    pub pair_divisor: Option<PairDivisor>,
    #[arg(long)]
    pub relation_divisor: Option<RelationDivisor>,
    /// Significance level of the heatmap Welch test.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Also write SVG charts.
    #[arg(long)]
    pub plot: bool,
    /// Layer drawn in heatmap charts; defaults to the last.
    #[arg(long)]
    pub heatmap_layer: Option<usize>,
}

impl AnalyzeArgs {
    pub fn new(kind: AnalyzeKind, traces: PathBuf, lens: Option<PathBuf>, out: PathBuf) -> Self {
        AnalyzeArgs {
            kind,
            traces,
            corpus: None,
            lens,
            out,
            kl_floor: None,
            pair_divisor: None,
            relation_divisor: None,
            alpha: None,
            plot: false,
            heatmap_layer: None,
        }
    }
}

struct Inputs {
    manifest: RunManifest,
    records: Vec<QuestionRecord>,
    groups: Vec<QuestionGroup>,
    traces: TraceFile,
}

impl Inputs {
    fn index(&self) -> HashMap<&str, &ActivationTrace> {
        self.traces
            .records
            .iter()
            .map(|t| (t.prompt_id.as_str(), t))
            .collect()
    }

    fn record(&self, id: &str) -> &QuestionRecord {
        self.records
            .iter()
            .find(|r| r.id == id)
            .expect("planned ids come from the corpus")
    }
}

fn question_traces<'a>(
    group: &QuestionGroup,
    index: &HashMap<&str, &'a ActivationTrace>,
    variants: &[usize],
) -> Result<Vec<QuestionTraces<'a>>> {
    group
        .question_ids
        .iter()
        .map(|qid| {
            let traces = variants
                .iter()
                .map(|&v| {
                    let id = prompt_id(qid, v);
                    index.get(id.as_str()).copied().ok_or_else(|| {
                        coded(EXIT_INVALID, anyhow!("trace file has no record {id:?}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(QuestionTraces {
                question_id: qid.clone(),
                traces,
            })
        })
        .collect()
}

fn require_lens(args: &AnalyzeArgs, manifest: &RunManifest) -> Result<LensMatrix> {
    let path = args
        .lens
        .as_ref()
        .ok_or_else(|| anyhow!("analysis {} needs --lens", args.kind.name()))
        .exit_code(EXIT_INPUT)?;
    let lens = load_lens(path)?;
    if !lens.matches(&manifest.model) {
        return Err(anyhow!(
            "lens {} is {}x{}, traces need {}x{}",
            path.display(),
            lens.vocab_size(),
            lens.d_model(),
            manifest.model.vocab_size,
            manifest.model.d_model
        ))
        .exit_code(EXIT_INVALID);
    }
    Ok(lens)
}

fn require_mode(manifest: &RunManifest, mode: Mode, kind: AnalyzeKind) -> Result<()> {
    if manifest.mode != mode {
        return Err(anyhow!(
            "analysis {} needs traces simulated in {mode} mode, these are {}",
            kind.name(),
            manifest.mode
        ))
        .exit_code(EXIT_INPUT);
    }
    Ok(())
}

fn load_inputs(args: &AnalyzeArgs) -> Result<Inputs> {
    let mut manifest = RunManifest::read(&sidecar_path(&args.traces))?;
    if let Some(c) = &args.corpus {
        manifest.corpus = c.clone();
    }
    let a = &mut manifest.analysis;
    if let Some(v) = args.kl_floor {
        a.kl_floor = v;
    }
    if let Some(v) = args.pair_divisor {
        a.pair_divisor = v;
    }
    if let Some(v) = args.relation_divisor {
        a.relation_divisor = v;
    }
    if let Some(v) = args.alpha {
        a.alpha = v;
    }
    let traces = load_traces(&args.traces)?;
    if traces.config != manifest.model {
        return Err(anyhow!("trace file config differs from its run manifest"))
            .exit_code(EXIT_INVALID);
    }
    let records = load_corpus(&manifest.corpus)?;
    let groups = groups(&records, &manifest).exit_code(EXIT_INPUT)?;
    Ok(Inputs {
        manifest,
        records,
        groups,
        traces,
    })
}

fn curve_rows(rows: &mut Vec<CurveRow>, batch: &str, curve: &LayerCurve) {
    for (i, &layer) in curve.layers.iter().enumerate() {
        for (stat, v) in [("mean", curve.mean[i]), ("spread", curve.spread[i])] {
            rows.push(CurveRow {
                layer,
                batch: batch.into(),
                stat: stat.into(),
                value: v,
            });
        }
    }
}

fn question_rows(rows: &mut Vec<QuestionRow>, batch: &str, layers: &[usize], qs: &[QuestionStats]) {
    for q in qs {
        for (i, &layer) in layers.iter().enumerate() {
            for (stat, v) in [("mean", q.mean[i]), ("spread", q.spread[i])] {
                rows.push(QuestionRow {
                    layer,
                    batch: batch.into(),
                    question_id: q.question_id.clone(),
                    stat: stat.into(),
                    value: v,
                });
            }
        }
    }
}

fn scalar_rows(
    rows: &mut Vec<CurveRow>,
    qrows: &mut Vec<QuestionRow>,
    batch: &str,
    stat: &str,
    curve: &ScalarCurve,
) {
    for (i, &layer) in curve.layers.iter().enumerate() {
        rows.push(CurveRow {
            layer,
            batch: batch.into(),
            stat: stat.into(),
            value: curve.batch[i],
        });
        for (qid, vals) in &curve.questions {
            qrows.push(QuestionRow {
                layer,
                batch: batch.into(),
                question_id: qid.clone(),
                stat: stat.into(),
                value: vals[i],
            });
        }
    }
}

fn series_for(rows: &[CurveRow], stat: &str, band: Option<&str>) -> Vec<Series> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.stat == stat) {
        if !names.contains(&r.batch.as_str()) {
            names.push(&r.batch);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let pick = |s: &str| -> Vec<&CurveRow> {
                rows.iter()
                    .filter(|r| r.batch == name && r.stat == s)
                    .collect()
            };
            let main = pick(stat);
            Series {
                name: name.to_string(),
                x: main.iter().map(|r| r.layer as f64).collect(),
                y: main.iter().map(|r| r.value).collect(),
                band: band.map(|b| pick(b).iter().map(|r| r.value).collect()),
            }
        })
        .collect()
}

fn write_svg(path: &Path, svg: String) -> Result<()> {
    fs::write(path, svg).with_context(|| format!("writing {}", path.display()))
}

fn analyze_curves(args: &AnalyzeArgs, inputs: &Inputs) -> Result<()> {
    require_mode(&inputs.manifest, Mode::Paraphrase, args.kind)?;
    let m = &inputs.manifest;
    let lens = match args.kind {
        AnalyzeKind::Attn => None,
        _ => Some(require_lens(args, m)?),
    };
    let index = inputs.index();
    let vs = variants(m);
    let mut rows = Vec::new();
    let mut qrows = Vec::new();
    for g in &inputs.groups {
        let batch = question_traces(g, &index, &vs)?;
        let key = g.key();
        let probe_err = |e: popprobe::ProbeError| {
            coded(
                EXIT_INVALID,
                anyhow::Error::new(e).context(format!("batch {key}")),
            )
        };
        match args.kind {
            AnalyzeKind::Kl => {
                let c = kl_convergence(&batch, lens.as_ref().unwrap(), m.analysis.kl_floor)
                    .map_err(probe_err)?;
                curve_rows(&mut rows, &key, &c.curve);
                question_rows(&mut qrows, &key, &c.curve.layers, &c.questions);
            }
            AnalyzeKind::Attn => {
                let c = attention_constraint_score(&batch).map_err(probe_err)?;
                curve_rows(&mut rows, &key, &c.curve);
                question_rows(&mut qrows, &key, &c.curve.layers, &c.questions);
            }
            AnalyzeKind::Ffn => {
                let sim = ffn_paraphrase_similarity(&batch, m.analysis.pair_divisor)
                    .map_err(probe_err)?;
                let target =
                    target_probability_curve(&batch, lens.as_ref().unwrap()).map_err(probe_err)?;
                scalar_rows(&mut rows, &mut qrows, &key, "mean", &sim);
                scalar_rows(&mut rows, &mut qrows, &key, "target_prob", &target);
            }
            _ => unreachable!(),
        }
    }
    let name = args.kind.name();
    write_csv(&args.out.join(format!("{name}.csv")), &rows)?;
    write_csv(&args.out.join(format!("{name}_questions.csv")), &qrows)?;
    if args.plot {
        let charts: Vec<(&str, &str, Option<&str>)> = match args.kind {
            AnalyzeKind::Kl => vec![("kl", "mean", Some("spread"))],
            AnalyzeKind::Attn => vec![("attn", "mean", Some("spread"))],
            _ => vec![
                ("ffn_similarity", "mean", None),
                ("ffn_target_prob", "target_prob", None),
            ],
        };
        for (file, stat, band) in charts {
            let svg = line_chart(file, "layer", stat, &series_for(&rows, stat, band));
            write_svg(&args.out.join(format!("{file}.svg")), svg)?;
        }
    }
    Ok(())
}

fn analyze_relations(args: &AnalyzeArgs, inputs: &Inputs) -> Result<()> {
    require_mode(&inputs.manifest, Mode::Relations, args.kind)?;
    let m = &inputs.manifest;
    let index = inputs.index();
    let vs = variants(m);
    let levels = inputs.groups.iter().map(|g| g.level).max().unwrap_or(0);
    let mut heatmaps = Vec::with_capacity(levels);
    for level in 1..=levels {
        let mut per_relation = Vec::new();
        for g in inputs.groups.iter().filter(|g| g.level == level) {
            let traces = question_traces(g, &index, &vs)?
                .into_iter()
                .flat_map(|q| q.traces)
                .collect();
            per_relation.push((g.relation.clone(), traces));
        }
        let h = relation_similarity(&per_relation, m.analysis.relation_divisor)
            .with_context(|| format!("level {level}"))
            .exit_code(EXIT_INVALID)?;
        heatmaps.push(h);
    }
    let mut rows = Vec::new();
    for (i, h) in heatmaps.iter().enumerate() {
        for (k, &layer) in h.layers.iter().enumerate() {
            for (x, rx) in h.relations.iter().enumerate() {
                for (y, ry) in h.relations.iter().enumerate() {
                    rows.push(HeatmapRow {
                        layer,
                        batch_level: i + 1,
                        relation_x: rx.clone(),
                        relation_y: ry.clone(),
                        value: h.values[k][x][y],
                    });
                }
            }
        }
    }
    write_csv(&args.out.join("heatmap.csv"), &rows)?;

    let relations = heatmaps.first().map_or(0, |h| h.relations.len());
    if levels >= 2 && relations >= 3 {
        let (head, tail) = (&heatmaps[0], &heatmaps[levels - 1]);
        let mut welch = Vec::new();
        for &layer in &head.layers {
            let w = heatmap_welch(head, tail, layer, Direction::Greater).exit_code(EXIT_INVALID)?;
            welch.push(WelchRow {
                layer,
                head_level: 1,
                tail_level: levels,
                t_statistic: w.t_statistic,
                degrees_of_freedom: w.degrees_of_freedom,
                p_value: w.p_value_one_sided,
                alpha: m.analysis.alpha,
                reject: w.rejects_at(m.analysis.alpha),
                degenerate: w.degenerate,
            });
        }
        write_csv(&args.out.join("welch.csv"), &welch)?;
    } else {
        log::warn!(
            "Welch test skipped: needs 2 levels and 3 relations, have {levels} and {relations}"
        );
    }

    if args.plot {
        let layer = args.heatmap_layer.unwrap_or(m.model.num_layers);
        for (i, h) in heatmaps.iter().enumerate() {
            let k = h
                .layers
                .iter()
                .position(|&l| l == layer)
                .ok_or_else(|| anyhow!("heatmap layer {layer} outside 1..={}", m.model.num_layers))
                .exit_code(EXIT_INPUT)?;
            let svg = heatmap(
                &format!("level {} layer {layer}", i + 1),
                &h.relations,
                &h.values[k],
            );
            write_svg(&args.out.join(format!("heatmap_level{}.svg", i + 1)), svg)?;
        }
    }
    Ok(())
}

fn analyze_variety(args: &AnalyzeArgs, inputs: &Inputs) -> Result<()> {
    require_mode(&inputs.manifest, Mode::Paraphrase, args.kind)?;
    let m = &inputs.manifest;
    let lens = require_lens(args, m)?;
    let vocab = load_vocab(&m.vocab)?;
    let index = inputs.index();
    let vs = variants(m);
    let normalizer = Normalizer::default();
    let mut rows = Vec::new();
    let mut answer_rows = Vec::new();
    for g in &inputs.groups {
        let batch = question_traces(g, &index, &vs)?;
        let key = g.key();
        let mut decoded = Vec::with_capacity(batch.len());
        for q in &batch {
            let answers = q
                .traces
                .iter()
                .map(|t| {
                    let dist = logit_lens(t.hidden_at(m.model.num_layers), &lens)?;
                    Ok(vocab.token(greedy_decode(&dist)).to_string())
                })
                .collect::<Result<Vec<String>, popprobe::ModelError>>()
                .exit_code(EXIT_INVALID)?;
            decoded.push(answers);
        }
        let items: Vec<_> = batch
            .iter()
            .zip(&decoded)
            .map(|(q, answers)| {
                let r = inputs.record(&q.question_id);
                (
                    q.question_id.as_str(),
                    r.popularity(),
                    r.answer(),
                    answers.as_slice(),
                )
            })
            .collect();
        let report = response_variety(&items, &normalizer).exit_code(EXIT_INVALID)?;
        for (row, (_, _, gold, answers)) in report.rows.iter().zip(&items) {
            rows.push(VarietyCsvRow {
                batch: key.clone(),
                question_id: row.question_id.clone(),
                popularity: row.popularity,
                mean_f1: row.f1.iter().sum::<f64>() / row.f1.len() as f64,
                variety: row.variety,
            });
            for ((v, answer), f1) in vs.iter().zip(answers.iter()).zip(&row.f1) {
                answer_rows.push(AnswerRow {
                    batch: key.clone(),
                    question_id: row.question_id.clone(),
                    variant: *v,
                    answer: answer.clone(),
                    gold: gold.to_string(),
                    f1: *f1,
                });
            }
        }
    }
    write_csv(&args.out.join("variety.csv"), &rows)?;
    write_csv(&args.out.join("variety_answers.csv"), &answer_rows)?;
    if args.plot {
        let series: Vec<Series> = inputs
            .groups
            .iter()
            .map(|g| {
                let key = g.key();
                let mine: Vec<&VarietyCsvRow> = rows.iter().filter(|r| r.batch == key).collect();
                Series {
                    name: key,
                    x: mine
                        .iter()
                        .map(|r| r.popularity.max(1e-300).log10())
                        .collect(),
                    y: mine.iter().map(|r| r.variety).collect(),
                    band: None,
                }
            })
            .collect();
        write_svg(
            &args.out.join("variety.svg"),
            line_chart("variety", "log10 popularity", "F1 std", &series),
        )?;
    }
    Ok(())
}

/// Runs one analysis and writes its reports (plus the effective manifest)
/// into `args.out`.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<()> {
    let inputs = load_inputs(args)?;
    if inputs.groups.is_empty() {
        bail!("run manifest selects no questions");
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    match args.kind {
        AnalyzeKind::Kl | AnalyzeKind::Attn | AnalyzeKind::Ffn => analyze_curves(args, &inputs)?,
        AnalyzeKind::Relations => analyze_relations(args, &inputs)?,
        AnalyzeKind::Variety => analyze_variety(args, &inputs)?,
    }
    inputs.manifest.write(&args.out.join("manifest.json"))
}
