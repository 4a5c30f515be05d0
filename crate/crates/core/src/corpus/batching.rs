//! Popularity-ranked partitions of the corpus.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{CorpusError, QuestionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchScheme {
    HeadTorsoTail,
    HeadTail,
}

impl FromStr for BatchScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "head-torso-tail" => Ok(BatchScheme::HeadTorsoTail),
            "head-tail" => Ok(BatchScheme::HeadTail),
            other => Err(format!(
                "unknown batch scheme {other:?} (expected head-torso-tail or head-tail)"
            )),
        }
    }
}

impl fmt::Display for BatchScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchScheme::HeadTorsoTail => "head-torso-tail",
            BatchScheme::HeadTail => "head-tail",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BatchLabel {
    Head,
    Torso,
    Tail,
    /// An unlabeled batch, 1-based.
    Index(usize),
}

impl fmt::Display for BatchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BatchLabel::Head => f.write_str("Head"),
            BatchLabel::Torso => f.write_str("Torso"),
            BatchLabel::Tail => f.write_str("Tail"),
            BatchLabel::Index(i) => write!(f, "B{i}"),
        }
    }
}

impl BatchScheme {
    /// Label of batch `index` (1-based) out of `n`. Torso is the middle
    /// batch, which is B3 for the usual five.
    pub fn label(&self, index: usize, n: usize) -> BatchLabel {
        match self {
            _ if index == 1 => BatchLabel::Head,
            _ if index == n => BatchLabel::Tail,
            BatchScheme::HeadTorsoTail if index == n.div_ceil(2) => BatchLabel::Torso,
            _ => BatchLabel::Index(index),
        }
    }

    fn min_batches(&self) -> usize {
        match self {
            BatchScheme::HeadTorsoTail => 3,
            BatchScheme::HeadTail => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityBatch {
    /// 1-based rank, B1 most popular.
    pub index: usize,
    pub label: BatchLabel,
    pub question_ids: Vec<String>,
    pub batch_size: usize,
    pub mean_popularity: f64,
}

/// Descending popularity, ties by ascending id.
pub fn popularity_order(a: &QuestionRecord, b: &QuestionRecord) -> Ordering {
    b.popularity()
        .total_cmp(&a.popularity())
        .then_with(|| a.id.cmp(&b.id))
}

fn sorted<'a>(records: impl Iterator<Item = &'a QuestionRecord>) -> Vec<&'a QuestionRecord> {
    let mut v: Vec<&QuestionRecord> = records.collect();
    v.sort_by(|a, b| popularity_order(a, b));
    v
}

fn mean_pop(records: &[&QuestionRecord]) -> f64 {
    records.iter().map(|r| r.popularity()).sum::<f64>() / records.len().max(1) as f64
}

/// Splits the most popular `n * size` questions of `relation` into `n`
/// consecutive batches.
pub fn sort_into_batches(
    records: &[QuestionRecord],
    relation: &str,
    n: usize,
    size: usize,
    scheme: BatchScheme,
) -> Result<Vec<PopularityBatch>, CorpusError> {
    if n < scheme.min_batches() || size == 0 {
        return Err(CorpusError::BadBatching(format!(
            "scheme {scheme} needs at least {} batches of size >= 1, got {n} x {size}",
            scheme.min_batches()
        )));
    }
    let ranked = sorted(records.iter().filter(|r| r.relation == relation));
    let need = n * size;
    if ranked.len() < need {
        return Err(CorpusError::InsufficientRecords {
            context: format!("relation {relation:?}"),
            need,
            have: ranked.len(),
        });
    }
    Ok(ranked[..need]
        .chunks(size)
        .enumerate()
        .map(|(i, chunk)| PopularityBatch {
            index: i + 1,
            label: scheme.label(i + 1, n),
            question_ids: chunk.iter().map(|r| r.id.clone()).collect(),
            batch_size: size,
            mean_popularity: mean_pop(chunk),
        })
        .collect())
}

/// Per-level, per-relation question sets of near-equal popularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationBatches {
    /// Relations present with enough questions in every level, sorted.
    pub relations: Vec<String>,
    /// `levels[i][relation]` = question ids, most popular first.
    pub levels: Vec<BTreeMap<String, Vec<String>>>,
    pub per_relation: usize,
}

/// Cuts the whole corpus into `n` global popularity batches of
/// `batch_size`, then keeps the relations with at least `per_relation_min`
/// questions in every batch, truncated to exactly that many.
pub fn equispaced_relation_batches(
    records: &[QuestionRecord],
    n: usize,
    batch_size: usize,
    per_relation_min: usize,
) -> Result<RelationBatches, CorpusError> {
    if n == 0 || batch_size == 0 || per_relation_min == 0 {
        return Err(CorpusError::BadBatching(
            "batches, batch size and per-relation minimum must be >= 1".into(),
        ));
    }
    let ranked = sorted(records.iter());
    let need = n * batch_size;
    if ranked.len() < need {
        return Err(CorpusError::InsufficientRecords {
            context: "corpus".into(),
            need,
            have: ranked.len(),
        });
    }
    let grouped: Vec<BTreeMap<&str, Vec<&QuestionRecord>>> = ranked[..need]
        .chunks(batch_size)
        .map(|chunk| {
            let mut m: BTreeMap<&str, Vec<&QuestionRecord>> = BTreeMap::new();
            for r in chunk {
                m.entry(r.relation.as_str()).or_default().push(r);
            }
            m
        })
        .collect();
    let relations: Vec<String> = grouped[0]
        .keys()
        .filter(|rel| {
            grouped.iter().all(|level| {
                level
                    .get(*rel)
                    .is_some_and(|qs| qs.len() >= per_relation_min)
            })
        })
        .map(|r| r.to_string())
        .collect();
    if relations.is_empty() {
        return Err(CorpusError::NoRelationSurvives {
            min: per_relation_min,
            batches: n,
        });
    }
    let levels = grouped
        .iter()
        .map(|level| {
            relations
                .iter()
                .map(|rel| {
                    let ids = level[rel.as_str()][..per_relation_min]
                        .iter()
                        .map(|r| r.id.clone())
                        .collect();
                    (rel.clone(), ids)
                })
                .collect()
        })
        .collect();
    Ok(RelationBatches {
        relations,
        levels,
        per_relation: per_relation_min,
    })
}
