//! Seeded desk-scale stand-in for an entity-centric QA corpus.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, QuestionRecord, TemplateTable};

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ra", "te", "vo", "zu", "ne", "si", "pa", "do", "ri", "ga", "fe", "lu", "mo",
    "na", "be", "xi", "tor", "qua", "wen", "dar", "hul",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub relations: Vec<String>,
    pub per_relation: usize,
    /// Size of each relation's answer pool.
    pub answers_per_relation: usize,
    /// Log-normal parameters of subject and object page views.
    pub popularity_mu: f64,
    pub popularity_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            relations: vec!["capital".into()],
            per_relation: 100,
            answers_per_relation: 20,
            popularity_mu: 7.0,
            popularity_sigma: 2.0,
            seed: 0,
        }
    }
}

fn name(rng: &mut ChaCha8Rng, syllables: usize) -> String {
    let mut s = String::new();
    for _ in 0..syllables {
        s.push_str(SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
    }
    let mut chars = s.chars();
    let first = chars.next().unwrap().to_ascii_uppercase();
    std::iter::once(first).chain(chars).collect()
}

fn unique_name(rng: &mut ChaCha8Rng, syllables: usize, taken: &mut HashSet<String>) -> String {
    loop {
        let n = name(rng, syllables);
        if taken.insert(n.to_lowercase()) {
            return n;
        }
    }
}

/// Generates `per_relation` questions per relation. Subjects are unique
/// single words; answers are drawn from a per-relation pool. The question
/// text is the relation's first template.
pub fn generate_corpus(
    spec: &SyntheticCorpusSpec,
    table: &TemplateTable,
) -> Result<Vec<QuestionRecord>, CorpusError> {
    let pop = LogNormal::new(spec.popularity_mu, spec.popularity_sigma)
        .map_err(|e| CorpusError::BadBatching(format!("popularity distribution: {e}")))?;
    if spec.answers_per_relation == 0 {
        return Err(CorpusError::BadBatching(
            "answer pool must be nonempty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken: HashSet<String> = HashSet::new();
    for rel in table.relations() {
        for t in table.templates(rel).unwrap() {
            for w in t.source().split(|c: char| !c.is_alphanumeric()) {
                taken.insert(w.to_lowercase());
            }
        }
    }
    let mut out = Vec::with_capacity(spec.relations.len() * spec.per_relation);
    for rel in &spec.relations {
        let template = table
            .templates(rel)
            .and_then(|t| t.first())
            .ok_or_else(|| CorpusError::UnknownRelation {
                relation: rel.clone(),
                known: table.relations().map(String::from).collect(),
            })?;
        let answers: Vec<String> = (0..spec.answers_per_relation)
            .map(|_| unique_name(&mut rng, 2, &mut taken))
            .collect();
        let slug = rel.replace(char::is_whitespace, "_");
        for i in 0..spec.per_relation {
            let subject = unique_name(&mut rng, 3, &mut taken);
            let object = answers[rng.random_range(0..answers.len())].clone();
            let p_subj = pop.sample(&mut rng).round();
            let p_obj = pop.sample(&mut rng).round();
            let (question, _, _) = template.fill(&subject);
            out.push(QuestionRecord {
                id: format!("{slug}-{i:05}"),
                subject,
                relation: rel.clone(),
                object,
                p_subj,
                p_obj,
                question,
            });
        }
    }
    Ok(out)
}
