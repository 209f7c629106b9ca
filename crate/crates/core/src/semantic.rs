//! Concept relevance for an event query, concept selection, weak labels and
//! the pseudo-positive / pseudo-negative split of weakly described videos.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, phrase_vector, EmbeddingTable, PhraseVector};
use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub concept_id: String,
    pub name: String,
    pub source: String,
}

/// Ordered concept list; its order is the column order of every score matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptVocabulary {
    concepts: Vec<Concept>,
}

impl ConceptVocabulary {
    pub fn new(concepts: Vec<Concept>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &concepts {
            if c.concept_id.is_empty() {
                return Err(Error::domain("empty concept_id"));
            }
            if !seen.insert(c.concept_id.as_str()) {
                return Err(Error::domain(format!(
                    "duplicate concept_id {:?}",
                    c.concept_id
                )));
            }
        }
        Ok(ConceptVocabulary { concepts })
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn concepts(&self) -> &[Concept] {
        &self.concepts
    }

    pub fn get(&self, idx: usize) -> &Concept {
        &self.concepts[idx]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.concepts.iter().map(|c| c.concept_id.as_str())
    }

    /// Phrase vectors of every concept name, `None` where the name is fully
    /// out of vocabulary.
    pub fn embed(&self, table: &EmbeddingTable) -> ConceptEmbeddings {
        let vectors = self
            .concepts
            .iter()
            .map(|c| phrase_vector(&text::tokenize(&c.name), table).ok())
            .collect();
        ConceptEmbeddings { vectors }
    }
}

/// Precomputed concept-name phrase vectors, aligned to a vocabulary.
#[derive(Debug, Clone)]
pub struct ConceptEmbeddings {
    vectors: Vec<Option<PhraseVector>>,
}

impl ConceptEmbeddings {
    /// Clamped cosine of `query` against every concept.
    pub fn relevance(&self, query: &PhraseVector) -> RelevanceVector {
        let mut values = Vec::with_capacity(self.vectors.len());
        let mut uncovered = Vec::new();
        for (k, v) in self.vectors.iter().enumerate() {
            match v {
                Some(pv) => {
                    let c =
                        cosine(&query.vector, &pv.vector).expect("unit vectors of table dimension");
                    values.push(c.max(0.0));
                }
                None => {
                    values.push(0.0);
                    uncovered.push(k);
                }
            }
        }
        RelevanceVector { values, uncovered }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventQuery {
    pub event_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
}

impl EventQuery {
    pub fn validate(&self) -> Result<()> {
        if self.event_id.is_empty() {
            return Err(Error::domain("event with empty event_id"));
        }
        if self.name.trim().is_empty() {
            return Err(Error::domain(format!(
                "event {} has an empty name",
                self.event_id
            )));
        }
        Ok(())
    }

    /// Name and description joined, as used for semantic matching.
    pub fn text(&self) -> String {
        format!("{} {}", self.name, self.description)
    }

    pub fn phrase_vector(&self, table: &EmbeddingTable) -> Result<PhraseVector> {
        phrase_vector(&text::tokenize(&self.text()), table)
    }
}

/// Per-concept relevance in `[0, 1]`, aligned to the vocabulary order.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    pub values: Vec<f64>,
    /// Concepts whose names have no in-vocabulary token; their value is 0.
    pub uncovered: Vec<usize>,
}

impl RelevanceVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values at `indices`, in that order.
    pub fn restrict(&self, indices: &[usize]) -> Vec<f64> {
        indices.iter().map(|&k| self.values[k]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Weak,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weak" => Ok(Split::Weak),
            "test" => Ok(Split::Test),
            other => Err(Error::domain(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Weak => "weak",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub video_id: String,
    pub split: Split,
    pub description: String,
}

/// Checks id uniqueness and that weak records carry a description.
pub fn validate_videos(records: &[VideoRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if r.video_id.is_empty() {
            return Err(Error::domain("empty video_id"));
        }
        if !seen.insert(r.video_id.as_str()) {
            return Err(Error::domain(format!(
                "duplicate video_id {:?}",
                r.video_id
            )));
        }
        if r.split == Split::Weak && r.description.trim().is_empty() {
            return Err(Error::domain(format!(
                "weak video {:?} has no description",
                r.video_id
            )));
        }
    }
    Ok(())
}

/// Indices (into the weak record list) of pseudo-positive and pseudo-negative videos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PseudoLabels {
    positives: Vec<usize>,
    negatives: Vec<usize>,
}

impl PseudoLabels {
    /// `n` bounds the valid index range.
    pub fn new(positives: Vec<usize>, negatives: Vec<usize>, n: usize) -> Result<Self> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::domain(
                "pseudo labels need at least one positive and one negative",
            ));
        }
        let pos: HashSet<_> = positives.iter().collect();
        if pos.len() != positives.len() {
            return Err(Error::domain("duplicate pseudo-positive index"));
        }
        let neg: HashSet<_> = negatives.iter().collect();
        if neg.len() != negatives.len() {
            return Err(Error::domain("duplicate pseudo-negative index"));
        }
        if pos.intersection(&neg).next().is_some() {
            return Err(Error::domain(
                "pseudo-positive and pseudo-negative sets overlap",
            ));
        }
        if let Some(&bad) = positives.iter().chain(&negatives).find(|&&i| i >= n) {
            return Err(Error::domain(format!(
                "pseudo-label index {bad} out of range {n}"
            )));
        }
        Ok(PseudoLabels {
            positives,
            negatives,
        })
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn negatives(&self) -> &[usize] {
        &self.negatives
    }

    /// `p` in the push loss normalizer.
    pub fn n_positive(&self) -> usize {
        self.positives.len()
    }
}

/// Clamped cosine relevance of every concept to the event text.
pub fn concept_relevance(
    query: &EventQuery,
    vocab: &ConceptVocabulary,
    table: &EmbeddingTable,
) -> Result<RelevanceVector> {
    let q = query.phrase_vector(table)?;
    Ok(vocab.embed(table).relevance(&q))
}

/// Indices of the `k` most relevant concepts, descending, ties by ascending concept_id.
pub fn select_concepts(
    relevance: &RelevanceVector,
    vocab: &ConceptVocabulary,
    k: usize,
) -> Result<Vec<usize>> {
    let m = relevance.len();
    if m != vocab.len() {
        return Err(Error::domain(format!(
            "relevance has {m} entries, vocabulary {}",
            vocab.len()
        )));
    }
    if k == 0 || k > m {
        return Err(Error::domain(format!("cannot select {k} of {m} concepts")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        relevance.values[b]
            .total_cmp(&relevance.values[a])
            .then_with(|| vocab.get(a).concept_id.cmp(&vocab.get(b).concept_id))
    });
    order.truncate(k);
    Ok(order)
}

/// Relevance of every concept to a weak video's cleaned description.
pub fn weak_labels(
    record: &VideoRecord,
    vocab: &ConceptVocabulary,
    table: &EmbeddingTable,
) -> Result<RelevanceVector> {
    weak_labels_with(record, &vocab.embed(table), table)
}

/// [`weak_labels`] against precomputed concept embeddings.
pub fn weak_labels_with(
    record: &VideoRecord,
    concepts: &ConceptEmbeddings,
    table: &EmbeddingTable,
) -> Result<RelevanceVector> {
    if record.split != Split::Weak {
        return Err(Error::domain(format!(
            "weak labels requested for test video {:?}",
            record.video_id
        )));
    }
    let cleaned = text::clean_text(&record.description);
    let q = phrase_vector(&cleaned, table)?;
    Ok(concepts.relevance(&q))
}

/// Ranks weak videos by similarity of their cleaned description to the event
/// text; the top `n_pos` become pseudo-positives and the bottom `n_neg`
/// pseudo-negatives. Descriptions with no in-vocabulary token score 0.
pub fn partition_pseudo(
    query: &EventQuery,
    weak_records: &[VideoRecord],
    table: &EmbeddingTable,
    n_pos: usize,
    n_neg: usize,
) -> Result<PseudoLabels> {
    check_partition_sizes(weak_records.len(), n_pos, n_neg)?;
    let q = query.phrase_vector(table)?;
    let mut uncovered = 0;
    let mut sims = Vec::with_capacity(weak_records.len());
    for r in weak_records {
        if r.split != Split::Weak {
            return Err(Error::domain(format!(
                "video {:?} is not in the weak split",
                r.video_id
            )));
        }
        match phrase_vector(&text::clean_text(&r.description), table) {
            Ok(pv) => sims.push(cosine(&q.vector, &pv.vector)?),
            Err(Error::Coverage(_)) => {
                uncovered += 1;
                sims.push(0.0);
            }
            Err(e) => return Err(e),
        }
    }
    if uncovered > 0 {
        log::warn!(
            "event={} weak_descriptions_without_coverage={uncovered}",
            query.event_id
        );
    }
    let ids: Vec<&str> = weak_records.iter().map(|r| r.video_id.as_str()).collect();
    partition_by_similarity(&sims, &ids, n_pos, n_neg)
}

fn check_partition_sizes(l: usize, n_pos: usize, n_neg: usize) -> Result<()> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain("n_pos and n_neg must be at least 1"));
    }
    if n_pos + n_neg > l {
        return Err(Error::domain(format!(
            "need {} weak videos for {n_pos} positives and {n_neg} negatives, have {l}",
            n_pos + n_neg
        )));
    }
    Ok(())
}

/// The ranking step of [`partition_pseudo`] given precomputed similarities.
pub fn partition_by_similarity(
    sims: &[f64],
    ids: &[&str],
    n_pos: usize,
    n_neg: usize,
) -> Result<PseudoLabels> {
    if sims.len() != ids.len() {
        return Err(Error::domain("similarity and id lists differ in length"));
    }
    check_partition_sizes(sims.len(), n_pos, n_neg)?;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| match sims[b].total_cmp(&sims[a]) {
        Ordering::Equal => ids[a].cmp(ids[b]),
        o => o,
    });
    let positives = order[..n_pos].to_vec();
    let negatives = order[order.len() - n_neg..].to_vec();
    PseudoLabels::new(positives, negatives, sims.len())
}
