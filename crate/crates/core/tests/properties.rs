use std::collections::HashSet;

use ndarray::Array2;
use proptest::prelude::*;

use eventrank_core::composer::{
    fit, push_from_scores, CompositionConfig, ScoreMatrix, SolverKind, WeightMatrix,
};
use eventrank_core::embedding::{cosine, phrase_vector, EmbeddingTable};
use eventrank_core::eval::{average_precision, EvalReport, RankedList};
use eventrank_core::graph::{
    candidate_sets, simplex_project, update_neighbors, GammaMode, NeighborMatrix,
};
use eventrank_core::semantic::{
    partition_pseudo, select_concepts, Concept, ConceptVocabulary, EventQuery, PseudoLabels,
    RelevanceVector, Split, VideoRecord,
};
use eventrank_core::synth::{brute_force_push, brute_force_simplex, fixture_table};
use eventrank_core::text::clean_text;

fn vec_of(
    len: std::ops::RangeInclusive<usize>,
    lo: f64,
    hi: f64,
) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn score_matrix(n: usize, m: usize, l: usize, data: Vec<f64>) -> ScoreMatrix {
    ScoreMatrix::new(
        (0..n).map(|i| format!("v{i:03}")).collect(),
        (0..m).map(|c| format!("c{c}")).collect(),
        Array2::from_shape_vec((n, m), data).unwrap(),
        l,
    )
    .unwrap()
}

/// A labelled instance: matrix, pseudo labels over the first `l` rows, relevance.
fn instance() -> impl Strategy<Value = (ScoreMatrix, PseudoLabels, Vec<f64>)> {
    (6usize..=24, 1usize..=4).prop_flat_map(|(n, m)| {
        (Just(n), Just(m), 4usize..=n - 1).prop_flat_map(|(n, m, l)| {
            (
                vec_of(n * m..=n * m, 0.0, 1.0),
                Just(n),
                Just(m),
                Just(l),
                1usize..l,
                vec_of(m..=m, 0.0, 1.0),
                any::<u64>(),
            )
                .prop_map(|(data, n, m, l, p, rel, shuffle)| {
                    let s = score_matrix(n, m, l, data);
                    let mut idx: Vec<usize> = (0..l).collect();
                    let mut state = shuffle | 1;
                    for i in (1..l).rev() {
                        state ^= state << 13;
                        state ^= state >> 7;
                        state ^= state << 17;
                        idx.swap(i, (state % (i as u64 + 1)) as usize);
                    }
                    let labels =
                        PseudoLabels::new(idx[..p].to_vec(), idx[p..].to_vec(), l).unwrap();
                    (s, labels, rel)
                })
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn cosine_is_symmetric_and_scale_invariant(
        (u, v) in (2usize..=8).prop_flat_map(|d| (nonzero_vec(d), nonzero_vec(d))),
        alpha in 0.01f64..100.0,
    ) {
        let c = cosine(&u, &v).unwrap();
        prop_assert!((c - cosine(&v, &u).unwrap()).abs() <= 1e-15);
        let scaled: Vec<f64> = u.iter().map(|x| alpha * x).collect();
        prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() <= 1e-12);
    }

    #[test]
    fn phrase_vectors_of_single_tokens_and_permutations(
        vectors in prop::collection::vec(nonzero_vec(4), 3..=6),
        picks in prop::collection::vec(0usize..6, 1..=8),
    ) {
        let names = ["alpha", "bravo", "charli", "delta", "echo", "foxtrot"];
        let table = EmbeddingTable::from_entries(names.iter().zip(vectors.clone())).unwrap();
        let single = phrase_vector(&[names[0]], &table).unwrap();
        let norm = vectors[0].iter().map(|x| x * x).sum::<f64>().sqrt();
        for (a, b) in single.vector.iter().zip(&vectors[0]) {
            prop_assert!((a - b / norm).abs() <= 1e-12);
        }

        let tokens: Vec<&str> = picks.iter().map(|&i| names[i % vectors.len()]).collect();
        let mut reversed = tokens.clone();
        reversed.reverse();
        let a = phrase_vector(&tokens, &table);
        let b = phrase_vector(&reversed, &table);
        if let (Ok(a), Ok(b)) = (a, b) {
            for (x, y) in a.vector.iter().zip(&b.vector) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn clean_text_is_idempotent(words in prop::collection::vec("[a-z]{1,12}", 1..20)) {
        let once = clean_text(&words.join(" "));
        prop_assert_eq!(clean_text(&once.join(" ")), once);
    }

    #[test]
    fn relevance_lies_in_unit_interval(
        vectors in prop::collection::vec(nonzero_vec(5), 6),
        query in prop::collection::vec(0usize..6, 1..4),
    ) {
        let names = ["alpha", "bravo", "charli", "delta", "echo", "foxtrot"];
        let table = EmbeddingTable::from_entries(names.iter().zip(vectors)).unwrap();
        let vocab = ConceptVocabulary::new(
            names
                .iter()
                .enumerate()
                .map(|(k, n)| Concept { concept_id: format!("c{k}"), name: n.to_string(), source: "t".into() })
                .collect(),
        )
        .unwrap();
        let q: Vec<&str> = query.iter().map(|&i| names[i]).collect();
        if let Ok(pv) = phrase_vector(&q, &table) {
            let rel = vocab.embed(&table).relevance(&pv);
            prop_assert!(rel.values.iter().all(|&r| (0.0..=1.0).contains(&r)));
        }
    }

    #[test]
    fn selection_ignores_positive_rescaling(
        values in vec_of(1..=12, 0.0, 1.0),
        alpha in 0.01f64..100.0,
        k_frac in 0.0f64..1.0,
    ) {
        let m = values.len();
        let k = 1 + ((m - 1) as f64 * k_frac) as usize;
        let vocab = ConceptVocabulary::new(
            (0..m)
                .map(|c| Concept { concept_id: format!("c{c:02}"), name: format!("n{c}"), source: "t".into() })
                .collect(),
        )
        .unwrap();
        let rel = RelevanceVector { values: values.clone(), uncovered: vec![] };
        let scaled = RelevanceVector { values: values.iter().map(|v| v * alpha).collect(), uncovered: vec![] };
        prop_assert_eq!(
            select_concepts(&rel, &vocab, k).unwrap(),
            select_concepts(&scaled, &vocab, k).unwrap()
        );
    }

    #[test]
    fn pseudo_partition_is_disjoint(
        picks in prop::collection::vec(prop::collection::vec(0usize..16, 1..5), 2..30),
        n_pos_frac in 0.0f64..1.0,
        n_neg_frac in 0.0f64..1.0,
    ) {
        let table = fixture_table();
        let words: Vec<&str> = table.tokens().collect();
        let records: Vec<VideoRecord> = picks
            .iter()
            .enumerate()
            .map(|(i, p)| VideoRecord {
                video_id: format!("w{i:03}"),
                split: Split::Weak,
                description: p.iter().map(|&k| words[k % words.len()]).collect::<Vec<_>>().join(" "),
            })
            .collect();
        let l = records.len();
        let n_pos = 1 + ((l - 2) as f64 * n_pos_frac) as usize;
        let n_neg = 1 + ((l - n_pos - 1) as f64 * n_neg_frac) as usize;
        let query = EventQuery { event_id: "E".into(), name: "dog show".into(), description: String::new() };
        let labels = partition_pseudo(&query, &records, &table, n_pos, n_neg).unwrap();
        let pos: HashSet<usize> = labels.positives().iter().copied().collect();
        let neg: HashSet<usize> = labels.negatives().iter().copied().collect();
        prop_assert!(pos.is_disjoint(&neg));
        prop_assert_eq!(pos.len() + neg.len(), n_pos + n_neg);
    }

    #[test]
    fn simplex_projection_matches_enumeration(v in vec_of(1..=6, -3.0, 3.0)) {
        let a = simplex_project(&v);
        let b = brute_force_simplex(&v).unwrap();
        let gap: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!(gap <= 1e-8);
    }

    #[test]
    fn neighbor_update_properties(
        d in vec_of(2..=20, 0.0, 5.0),
        shift in -3.0f64..3.0,
        gamma in 0.01f64..10.0,
        which in any::<prop::sample::Index>(),
        bump in 0.0f64..2.0,
    ) {
        let a = update_neighbors(&d, gamma).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);

        // translation along the all-ones direction
        let moved: Vec<f64> = d.iter().map(|x| x + shift).collect();
        let b = update_neighbors(&moved, gamma).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }

        // raising one distance never raises its probability
        let j = which.index(d.len());
        let mut raised = d.clone();
        raised[j] += bump;
        prop_assert!(update_neighbors(&raised, gamma).unwrap()[j] <= a[j] + 1e-12);

        // a huge regularizer approaches the uniform prior
        let flat = update_neighbors(&d, 1e9).unwrap();
        let u = 1.0 / d.len() as f64;
        prop_assert!(flat.iter().all(|&x| (x - u).abs() <= 1e-6));
    }

    #[test]
    fn push_matches_enumeration(
        (f, labels) in instance().prop_map(|(s, labels, rel)| {
            let w = WeightMatrix::broadcast(&rel, s.n_rows()).unwrap();
            (w.scores(&s).unwrap(), labels)
        })
    ) {
        prop_assert!((push_from_scores(&f, &labels) - brute_force_push(&f, &labels)).abs() <= 1e-12);
    }

    #[test]
    fn scale_coupling(
        (s, labels, rel) in instance(),
        alpha in 0.1f64..10.0,
    ) {
        let w = WeightMatrix::broadcast(&rel, s.n_rows()).unwrap();
        let scaled_s = score_matrix(
            s.n_rows(),
            s.n_cols(),
            s.n_weak(),
            s.data().iter().map(|x| x * alpha).collect(),
        );
        let scaled_w = WeightMatrix::new(w.data().mapv(|x| x / alpha)).unwrap();
        let f = w.scores(&s).unwrap();
        let g = scaled_w.scores(&scaled_s).unwrap();
        for (x, y) in f.iter().zip(&g) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!((push_from_scores(&f, &labels) - push_from_scores(&g, &labels)).abs() <= 1e-9);

        let cands = candidate_sets(&s.rows(), 50);
        let gamma = GammaMode::Global(0.5).resolve(&f, &cands).unwrap();
        let base = NeighborMatrix::uniform(cands, gamma).unwrap();
        let a = base.updated(&f).unwrap();
        let b = base.updated(&g).unwrap();
        for i in 0..a.n_rows() {
            for (x, y) in a.row(i).iter().zip(b.row(i)) {
                prop_assert!((x - y).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn average_precision_bounds_and_monotone_invariance(
        scores in vec_of(2..=30, -5.0, 5.0),
        mask in prop::collection::vec(any::<bool>(), 30),
    ) {
        let ids: Vec<String> = (0..scores.len()).map(|i| format!("v{i:02}")).collect();
        let mut positives: Vec<String> = ids.iter().zip(&mask).filter(|(_, &m)| m).map(|(id, _)| id.clone()).collect();
        if positives.is_empty() {
            positives.push(ids[0].clone());
        }
        let ranking = RankedList::from_scores(&ids, &scores).unwrap();
        let ap = average_precision(&ranking, &positives).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
        prop_assert!(ap > 0.0);

        let transformed: Vec<f64> = scores.iter().map(|x| (0.7 * x).exp() + 3.0).collect();
        let other = RankedList::from_scores(&ids, &transformed).unwrap();
        prop_assert_eq!(average_precision(&other, &positives).unwrap(), ap);
    }

    #[test]
    fn map_of_equal_aps_is_exact(ap in 0.0f64..=1.0, n in 1usize..50) {
        let report = EvalReport::new((0..n).map(|i| (format!("E{i}"), ap)).collect()).unwrap();
        prop_assert_eq!(report.map, ap);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fit_descends_and_keeps_weights_feasible(
        (s, labels, rel) in instance(),
        lambda in prop::sample::select(vec![0.1, 1.0, 10.0]),
        cap in prop::sample::select(vec![Some(1.0), Some(3.0), None]),
        solver in prop::sample::select(vec![SolverKind::Reference, SolverKind::Proximal]),
    ) {
        let config = CompositionConfig { lambda, weight_cap: cap, solver, ..CompositionConfig::default() };
        let res = fit(&s, &labels, &rel, &config).unwrap();
        for pair in res.objective_trace.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-10, "trace rose: {:?}", pair);
        }
        prop_assert!(res.weights.data().iter().all(|&x| x >= 0.0));
        if let Some(b) = cap {
            prop_assert!(res.weights.row_l1_norms().iter().all(|&n| n <= b));
        }
    }
}
