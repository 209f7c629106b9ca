//! One event end to end: concept selection, weak supervision, composition
//! and ranking of the test videos.

use std::collections::BTreeMap;

use crate::composer::{self, fit, fuse_supervised, normalize_scores, CompositionConfig, FitResult};
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{borda_baseline, RankedList};
use crate::io::ScoreTable;
use crate::semantic::{
    concept_relevance, partition_pseudo, select_concepts, weak_labels_with, ConceptVocabulary,
    EventQuery, PseudoLabels, RelevanceVector, Split, VideoRecord,
};

/// Shared, read-only inputs of every event.
#[derive(Debug, Clone, Copy)]
pub struct Corpus<'a> {
    pub table: &'a EmbeddingTable,
    pub vocab: &'a ConceptVocabulary,
    pub videos: &'a [VideoRecord],
    pub scores: &'a ScoreTable,
    pub supervised: Option<&'a BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineParams {
    /// Number of concepts selected per event.
    pub k_concepts: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub composition: CompositionConfig,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            k_concepts: 30,
            n_pos: 20,
            n_neg: 100,
            composition: CompositionConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EventResult {
    pub event_id: String,
    pub relevance: RelevanceVector,
    /// Selected concept columns, most relevant first.
    pub selected: Vec<usize>,
    /// Weak label of every weak video over the selected concepts; `None` when
    /// its description has no in-vocabulary token.
    pub weak_labels: Vec<(String, Option<Vec<f64>>)>,
    pub labels: PseudoLabels,
    pub fit: FitResult,
    /// Test videos ranked by the learned composition.
    pub ranking: RankedList,
    /// Test videos ranked by the fixed relevance weights.
    pub initial_ranking: RankedList,
    pub borda: RankedList,
}

pub fn run_event(
    corpus: &Corpus,
    query: &EventQuery,
    params: &PipelineParams,
) -> Result<EventResult> {
    query.validate()?;
    let relevance = concept_relevance(query, corpus.vocab, corpus.table)?;
    let selected = select_concepts(&relevance, corpus.vocab, params.k_concepts)?;
    let rel_sel = relevance.restrict(&selected);

    let weak: Vec<VideoRecord> = corpus
        .videos
        .iter()
        .filter(|v| v.split == Split::Weak)
        .cloned()
        .collect();
    let concept_vectors = corpus.vocab.embed(corpus.table);
    let weak_labels = weak
        .iter()
        .map(|r| {
            let label = match weak_labels_with(r, &concept_vectors, corpus.table) {
                Ok(v) => Some(v.restrict(&selected)),
                Err(Error::Coverage(_)) => None,
                Err(e) => return Err(e),
            };
            Ok((r.video_id.clone(), label))
        })
        .collect::<Result<Vec<_>>>()?;

    let labels = partition_pseudo(query, &weak, corpus.table, params.n_pos, params.n_neg)?;
    let s = normalize_scores(&corpus.scores.matrix_for(corpus.videos, &selected)?);

    let (composed, prior) = match corpus.supervised {
        Some(sup) => {
            let column = s
                .video_ids()
                .iter()
                .map(|id| {
                    sup.get(id).copied().ok_or_else(|| {
                        Error::Coverage(format!("video {id:?} has no supervised score"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            (
                fuse_supervised(&s, &column)?,
                composer::fused_relevance(&rel_sel),
            )
        }
        None => (s.clone(), rel_sel.clone()),
    };
    let fitted = fit(&composed, &labels, &prior, &params.composition)?;

    let l = composed.n_weak();
    let test_ids = &composed.video_ids()[l..];
    let ranking = RankedList::from_scores(test_ids, &fitted.scores[l..])?;
    let initial_ranking = RankedList::from_scores(test_ids, &fitted.initial_scores[l..])?;
    let borda = borda_baseline(&s.test_rows(), &rel_sel)?;

    Ok(EventResult {
        event_id: query.event_id.clone(),
        relevance,
        selected,
        weak_labels,
        labels,
        fit: fitted,
        ranking,
        initial_ranking,
        borda,
    })
}
