//! Paraphrase templates with constraint-token markup.
//!
//! File format: `[relation]` opens a section, each following non-empty line
//! is one template. `<SUBJECT>` is the subject slot (exactly once per line)
//! and `{{...}}` wraps constraint tokens. Lines starting with `#` are
//! comments.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{CorpusError, QuestionRecord};

pub const PLACEHOLDER: &str = "<SUBJECT>";
const OPEN: &str = "{{";
const CLOSE: &str = "}}";

/// Templates for the six relations shipped with the tool.
pub const DEFAULT_TEMPLATES: &str = include_str!("../../data/templates.txt");

/// Default number of lexical variants per question.
pub const DEFAULT_PARAPHRASES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text { text: String, group: Option<usize> },
    Subject { group: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    source: String,
    pieces: Vec<Piece>,
    groups: usize,
}

impl Template {
    pub fn parse(line: &str) -> Result<Self, String> {
        let mut pieces = Vec::new();
        let mut groups = 0;
        let mut current: Option<usize> = None;
        let mut rest = line;
        let mut subjects = 0;
        while !rest.is_empty() {
            let next_open = rest.find(OPEN);
            let next_close = rest.find(CLOSE);
            let next_slot = rest.find(PLACEHOLDER);
            let candidates = [next_open, next_close, next_slot];
            let cut = candidates
                .iter()
                .flatten()
                .min()
                .copied()
                .unwrap_or(rest.len());
            if cut > 0 {
                pieces.push(Piece::Text {
                    text: rest[..cut].to_string(),
                    group: current,
                });
                rest = &rest[cut..];
                continue;
            }
            if rest.starts_with(OPEN) {
                if current.is_some() {
                    return Err("nested {{".into());
                }
                current = Some(groups);
                groups += 1;
                rest = &rest[OPEN.len()..];
            } else if rest.starts_with(CLOSE) {
                if current.is_none() {
                    return Err("unmatched }}".into());
                }
                current = None;
                rest = &rest[CLOSE.len()..];
            } else {
                subjects += 1;
                pieces.push(Piece::Subject { group: current });
                rest = &rest[PLACEHOLDER.len()..];
            }
        }
        if current.is_some() {
            return Err("unclosed {{".into());
        }
        if subjects != 1 {
            return Err(format!(
                "expected exactly one {PLACEHOLDER}, found {subjects}"
            ));
        }
        Ok(Template {
            source: line.to_string(),
            pieces,
            groups,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Fills the subject slot once (the subject text is never re-scanned)
    /// and returns the text, constraint spans and subject span.
    pub fn fill(&self, subject: &str) -> (String, Vec<Range<usize>>, Range<usize>) {
        let mut text = String::new();
        let mut group_spans: Vec<Option<Range<usize>>> = vec![None; self.groups];
        let mut subject_span = 0..0;
        for piece in &self.pieces {
            let start = text.len();
            let group = match piece {
                Piece::Text { text: t, group } => {
                    text.push_str(t);
                    *group
                }
                Piece::Subject { group } => {
                    text.push_str(subject);
                    subject_span = start..text.len();
                    *group
                }
            };
            if let Some(g) = group {
                let end = text.len();
                let span = group_spans[g].get_or_insert(start..end);
                span.end = end;
            }
        }
        let mut spans: Vec<Range<usize>> = group_spans
            .into_iter()
            .flatten()
            .map(|r| trim_span(&text, r))
            .filter(|r| !r.is_empty())
            .collect();
        if !spans
            .iter()
            .any(|s| s.start <= subject_span.start && subject_span.end <= s.end)
        {
            spans.push(subject_span.clone());
        }
        spans.sort_by_key(|s| (s.start, s.end));
        spans.dedup();
        (text, spans, subject_span)
    }
}

fn trim_span(text: &str, r: Range<usize>) -> Range<usize> {
    let s = &text[r.clone()];
    let lead = s.len() - s.trim_start().len();
    let trail = s.len() - s.trim_end().len();
    r.start + lead..r.end - trail
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemplateTable {
    relations: BTreeMap<String, Vec<Template>>,
}

impl TemplateTable {
    pub fn parse(src: &str) -> Result<Self, CorpusError> {
        let mut relations: BTreeMap<String, Vec<Template>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in src.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| CorpusError::Template {
                line: i + 1,
                reason,
            };
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if name.is_empty() {
                    return Err(err("empty relation name".into()));
                }
                if relations.contains_key(name) {
                    return Err(err(format!("relation {name:?} defined twice")));
                }
                relations.insert(name.to_string(), Vec::new());
                current = Some(name.to_string());
                continue;
            }
            let rel = current
                .as_ref()
                .ok_or_else(|| err("template before any [relation] header".into()))?;
            let t = Template::parse(line).map_err(err)?;
            relations.get_mut(rel).unwrap().push(t);
        }
        Ok(TemplateTable { relations })
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("shipped templates parse")
    }

    pub fn relations(&self) -> impl Iterator<Item = &str> {
        self.relations.keys().map(String::as_str)
    }

    pub fn templates(&self, relation: &str) -> Option<&[Template]> {
        self.relations.get(relation).map(Vec::as_slice)
    }
}

/// One lexical variant of a question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseInstance {
    pub question_id: String,
    pub relation: String,
    /// 1-based.
    pub variant_index: usize,
    pub text: String,
    /// Byte ranges of constraint tokens in `text`, sorted.
    pub constraint_spans: Vec<Range<usize>>,
    pub subject_span: Range<usize>,
}

/// The first `p` templates of the question's relation filled with its subject.
pub fn expand_paraphrases(
    q: &QuestionRecord,
    table: &TemplateTable,
    p: usize,
) -> Result<Vec<ParaphraseInstance>, CorpusError> {
    let templates = table
        .templates(&q.relation)
        .ok_or_else(|| CorpusError::UnknownRelation {
            relation: q.relation.clone(),
            known: table.relations().map(String::from).collect(),
        })?;
    if p == 0 || templates.len() < p {
        return Err(CorpusError::NotEnoughTemplates {
            relation: q.relation.clone(),
            have: templates.len(),
            want: p,
        });
    }
    Ok(templates[..p]
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let (text, constraint_spans, subject_span) = t.fill(&q.subject);
            ParaphraseInstance {
                question_id: q.id.clone(),
                relation: q.relation.clone(),
                variant_index: j + 1,
                text,
                constraint_spans,
                subject_span,
            }
        })
        .collect())
}
