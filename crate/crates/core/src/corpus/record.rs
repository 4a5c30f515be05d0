use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One entity-centric question: a (subject, relation, object) triplet with
/// page-view popularity for subject and object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    #[serde(alias = "subj")]
    pub subject: String,
    #[serde(alias = "prop")]
    pub relation: String,
    #[serde(alias = "obj")]
    pub object: String,
    #[serde(rename = "s_pop")]
    pub p_subj: f64,
    #[serde(rename = "o_pop")]
    pub p_obj: f64,
    pub question: String,
}

impl QuestionRecord {
    /// Mean of subject and object popularity.
    pub fn popularity(&self) -> f64 {
        popularity(self)
    }

    pub fn answer(&self) -> &str {
        &self.object
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |why: &str| {
            Err(CorpusError::InvalidRecord {
                id: self.id.clone(),
                reason: why.to_string(),
            })
        };
        if self.id.is_empty() {
            return bad("empty id");
        }
        if self.subject.trim().is_empty() {
            return bad("empty subject");
        }
        if self.relation.trim().is_empty() {
            return bad("empty relation");
        }
        if self.object.trim().is_empty() {
            return bad("empty answer");
        }
        for (name, v) in [("s_pop", self.p_subj), ("o_pop", self.p_obj)] {
            if !v.is_finite() || v < 0.0 {
                return bad(&format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

pub fn popularity(q: &QuestionRecord) -> f64 {
    (q.p_subj + q.p_obj) / 2.0
}

/// Reads a tab-separated corpus with a header row. Columns may use either
/// the long names (`subject`, `relation`, `object`) or the PopQA ones
/// (`subj`, `prop`, `obj`); unknown columns are ignored.
pub fn read_corpus<R: Read>(source: R) -> Result<Vec<QuestionRecord>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .from_reader(source);
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<QuestionRecord>().enumerate() {
        let rec = row.map_err(|e| CorpusError::Parse {
            line: i + 2,
            reason: e.to_string(),
        })?;
        rec.validate()?;
        out.push(rec);
    }
    let mut ids = std::collections::HashSet::new();
    for r in &out {
        if !ids.insert(r.id.as_str()) {
            return Err(CorpusError::InvalidRecord {
                id: r.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(out)
}

/// Writes records with PopQA-style column names.
pub fn write_corpus<W: Write>(records: &[QuestionRecord], sink: W) -> Result<(), CorpusError> {
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Never)
        .from_writer(sink);
    writer.write_record(["id", "subj", "prop", "obj", "s_pop", "o_pop", "question"])?;
    for r in records {
        for field in [&r.id, &r.subject, &r.relation, &r.object, &r.question] {
            if field.contains(['\t', '\n', '\r']) {
                return Err(CorpusError::InvalidRecord {
                    id: r.id.clone(),
                    reason: "field contains a tab or newline".into(),
                });
            }
        }
        writer.write_record([
            r.id.as_str(),
            &r.subject,
            &r.relation,
            &r.object,
            &r.p_subj.to_string(),
            &r.p_obj.to_string(),
            &r.question,
        ])?;
    }
    writer.flush()?;
    Ok(())
}
