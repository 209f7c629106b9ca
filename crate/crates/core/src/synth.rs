//! Synthetic instances with planted ground truth, plus brute-force oracles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::io::{self, GroundTruth, ScoreTable};
use crate::semantic::{Concept, ConceptVocabulary, EventQuery, PseudoLabels, Split, VideoRecord};

pub const EVENT_ID: &str = "E001";

/// Fraction of positive videos in each split.
const PREVALENCE: f64 = 0.25;

/// Toy embedding table shared by the generator and the tests. Event words
/// span the first three axes; every other word leans slightly toward them so
/// that its concept still gets a small nonzero relevance.
pub fn fixture_table() -> EmbeddingTable {
    let rows: [(&str, [f64; 8]); 16] = [
        ("dog", [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("show", [0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("parade", [0.0, 0.6, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("crowd", [0.3, 0.5, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0]),
        ("kitchen", [0.1, 0.1, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
        ("cook", [0.05, 0.1, 0.0, 0.9, 0.0, 0.0, 0.0, 0.3]),
        ("car", [0.1, 0.05, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
        ("road", [0.05, 0.1, 0.0, 0.0, 0.6, 0.8, 0.0, 0.0]),
        ("tree", [0.12, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
        ("guitar", [0.0, 0.15, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        ("beach", [0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.7, 0.7]),
        ("rain", [0.0, 0.1, 0.0, 0.0, 0.3, 0.0, 0.9, 0.0]),
        ("man", [0.05, 0.05, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5]),
        ("woman", [0.05, 0.05, 0.0, 0.5, 0.5, 0.5, 0.5, 0.0]),
        ("play", [0.0, 0.2, 0.0, 0.0, 0.0, 0.0, 0.3, 0.9]),
        ("walk", [0.2, 0.0, 0.0, 0.0, 0.0, 0.6, 0.7, 0.0]),
    ];
    EmbeddingTable::from_entries(rows.iter().map(|(t, v)| (*t, v.to_vec())))
        .expect("fixture rows are valid")
}

const INFORMATIVE_NAMES: [&str; 4] = ["dog show", "dog", "show", "parade"];
const UNINFORMATIVE_NAMES: [&str; 8] = [
    "kitchen", "car", "road", "tree", "guitar", "beach", "rain", "cook",
];
const POSITIVE_TEMPLATES: [&str; 4] = [
    "a dog show with a dog on parade",
    "dog show crowd at the parade",
    "a show dog walking in a parade",
    "the crowd at a dog show",
];
const NEGATIVE_TEMPLATES: [&str; 6] = [
    "a man cooking in the kitchen",
    "a car on the road in the rain",
    "a woman playing guitar under a tree",
    "walking on the beach",
    "a man walking down the road",
    "rain over the trees",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthInstance {
    pub seed: u64,
    pub sigma: f64,
    pub table: EmbeddingTable,
    pub vocab: ConceptVocabulary,
    pub event: EventQuery,
    /// Weak videos first, then test videos.
    pub videos: Vec<VideoRecord>,
    /// Raw scores, one row per video in `videos` order.
    pub scores: ScoreTable,
    /// True label of every video in `videos` order.
    pub labels: Vec<bool>,
    /// Planted informative concept columns.
    pub informative: Vec<usize>,
    /// Suggested pseudo-label sizes: half of each weak class.
    pub n_pos: usize,
    pub n_neg: usize,
}

fn class_sizes(n: usize) -> usize {
    ((n as f64 * PREVALENCE).round() as usize).clamp(1, n - 1)
}

/// Generates an instance with `l` weak and `u` test videos over `m` concepts,
/// `n_informative` of which separate the classes before noise.
pub fn gen_instance(
    seed: u64,
    l: usize,
    u: usize,
    m: usize,
    n_informative: usize,
    sigma: f64,
) -> Result<SynthInstance> {
    if l < 4 || u < 4 {
        return Err(Error::domain("need at least 4 weak and 4 test videos"));
    }
    if m == 0 || n_informative > m {
        return Err(Error::domain(format!(
            "cannot plant {n_informative} informative concepts among {m}"
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::domain("sigma must be finite and nonnegative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut columns: Vec<usize> = (0..m).collect();
    columns.shuffle(&mut rng);
    let mut informative = columns[..n_informative].to_vec();
    informative.sort_unstable();
    let (mut next_inf, mut next_un) = (0, 0);
    let concepts = (0..m)
        .map(|c| {
            let name = if informative.contains(&c) {
                next_inf += 1;
                INFORMATIVE_NAMES[(next_inf - 1) % INFORMATIVE_NAMES.len()]
            } else {
                next_un += 1;
                UNINFORMATIVE_NAMES[(next_un - 1) % UNINFORMATIVE_NAMES.len()]
            };
            Concept {
                concept_id: format!("c{:03}", c + 1),
                name: name.to_string(),
                source: "synth".to_string(),
            }
        })
        .collect();
    let vocab = ConceptVocabulary::new(concepts)?;

    let mut labels = Vec::with_capacity(l + u);
    for n in [l, u] {
        let mut split = vec![false; n];
        split[..class_sizes(n)].fill(true);
        split.shuffle(&mut rng);
        labels.extend(split);
    }

    let mut videos = Vec::with_capacity(l + u);
    for (i, &positive) in labels.iter().enumerate() {
        let (video_id, split, description) = if i < l {
            let templates: &[&str] = if positive {
                &POSITIVE_TEMPLATES
            } else {
                &NEGATIVE_TEMPLATES
            };
            let text = templates[rng.random_range(0..templates.len())];
            (format!("w{:03}", i + 1), Split::Weak, text.to_string())
        } else {
            (format!("t{:03}", i - l + 1), Split::Test, String::new())
        };
        videos.push(VideoRecord {
            video_id,
            split,
            description,
        });
    }

    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("positive sd");
    let mut data = Array2::zeros((l + u, m));
    for (i, &positive) in labels.iter().enumerate() {
        for c in 0..m {
            let clean = if informative.contains(&c) {
                if positive {
                    rng.random_range(0.7..=1.0)
                } else {
                    rng.random_range(0.0..=0.3)
                }
            } else {
                rng.random_range(0.0..=1.0)
            };
            let e = if sigma > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            data[(i, c)] = f64::clamp(clean + e, 0.0, 1.0);
        }
    }
    let scores = ScoreTable {
        video_ids: videos.iter().map(|v| v.video_id.clone()).collect(),
        concept_ids: vocab.ids().map(String::from).collect(),
        data,
    };

    let weak_pos = labels[..l].iter().filter(|&&x| x).count();
    Ok(SynthInstance {
        seed,
        sigma,
        table: fixture_table(),
        vocab,
        event: EventQuery {
            event_id: EVENT_ID.to_string(),
            name: "dog show".to_string(),
            description: "a dog show with a dog on parade".to_string(),
        },
        videos,
        scores,
        labels,
        informative,
        n_pos: (weak_pos / 2).max(1),
        n_neg: ((l - weak_pos) / 2).max(1),
    })
}

/// Paths of the files written by [`SynthInstance::write`].
#[derive(Debug, Clone)]
pub struct InstanceFiles {
    pub embeddings: PathBuf,
    pub vocabulary: PathBuf,
    pub videos: PathBuf,
    pub events: PathBuf,
    pub scores: PathBuf,
    pub ground_truth: PathBuf,
    pub supervised: Option<PathBuf>,
}

impl SynthInstance {
    pub fn n_weak(&self) -> usize {
        self.videos
            .iter()
            .filter(|v| v.split == Split::Weak)
            .count()
    }

    /// Test-split ground truth for the planted event.
    pub fn ground_truth(&self) -> GroundTruth {
        let labels = self
            .videos
            .iter()
            .zip(&self.labels)
            .filter(|(v, _)| v.split == Split::Test)
            .map(|(v, &y)| (v.video_id.clone(), y))
            .collect();
        BTreeMap::from([(self.event.event_id.clone(), labels)])
    }

    pub fn test_positives(&self) -> Vec<String> {
        self.videos
            .iter()
            .zip(&self.labels)
            .filter(|(v, &y)| y && v.split == Split::Test)
            .map(|(v, _)| v.video_id.clone())
            .collect()
    }

    /// A supervised classifier that scores every video by its true label.
    pub fn perfect_supervised(&self) -> Vec<(String, f64)> {
        self.videos
            .iter()
            .zip(&self.labels)
            .map(|(v, &y)| (v.video_id.clone(), if y { 1.0 } else { 0.0 }))
            .collect()
    }

    /// Writes the instance in the pipeline's input formats.
    pub fn write(&self, dir: impl AsRef<Path>, with_supervised: bool) -> Result<InstanceFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = InstanceFiles {
            embeddings: dir.join("embeddings.txt"),
            vocabulary: dir.join("vocabulary.csv"),
            videos: dir.join("videos.tsv"),
            events: dir.join("events.jsonl"),
            scores: dir.join("scores.csv"),
            ground_truth: dir.join("ground_truth.csv"),
            supervised: with_supervised.then(|| dir.join("supervised.csv")),
        };
        io::write_embeddings(&files.embeddings, &self.table)?;
        io::write_vocabulary(&files.vocabulary, &self.vocab)?;
        io::write_videos(&files.videos, &self.videos)?;
        io::write_events(&files.events, std::slice::from_ref(&self.event))?;
        io::write_scores(&files.scores, &self.scores)?;
        io::write_ground_truth(&files.ground_truth, &self.ground_truth())?;
        if let Some(p) = &files.supervised {
            io::write_supervised(p, &self.perfect_supervised())?;
        }
        Ok(files)
    }
}

/// Euclidean projection onto the probability simplex by enumerating every
/// support set.
pub fn brute_force_simplex(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n == 0 || n > 6 {
        return Err(Error::domain(format!(
            "brute force needs dimension 1..=6, got {n}"
        )));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        // minimize ‖a - v‖² on the support subject to Σ a = 1
        let shift = (1.0 - support.iter().map(|&i| v[i]).sum::<f64>()) / support.len() as f64;
        let mut a = vec![0.0; n];
        for &i in &support {
            a[i] = v[i] + shift;
        }
        if a.iter().any(|&x| x < 0.0) {
            continue;
        }
        let dist: f64 = a.iter().zip(v).map(|(x, y)| (x - y) * (x - y)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, a));
        }
    }
    Ok(best
        .expect("the full support with the largest entry is always feasible")
        .1)
}

/// `max_{j∈N} (1/p) Σ_{i∈P} (1 - f_i + f_j)_+` by enumerating every pair.
pub fn brute_force_push(f: &[f64], labels: &PseudoLabels) -> f64 {
    let p = labels.positives().len() as f64;
    let mut worst = f64::NEG_INFINITY;
    for &j in labels.negatives() {
        let mut total = 0.0;
        for &i in labels.positives() {
            let margin = 1.0 - (f[i] - f[j]);
            if margin > 0.0 {
                total += margin;
            }
        }
        worst = worst.max(total / p);
    }
    worst
}

/// Central-difference gradient estimate.
pub fn finite_diff_gradient(g: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = g(&probe);
            probe[k] = x[k] - h;
            let down = g(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::composer::{normalize_scores, ScoreMatrix};
    use crate::eval::{average_precision, borda_baseline};

    #[test]
    fn same_seed_same_instance() {
        assert_eq!(
            gen_instance(3, 12, 8, 5, 2, 0.2).unwrap(),
            gen_instance(3, 12, 8, 5, 2, 0.2).unwrap()
        );
        assert_ne!(
            gen_instance(3, 12, 8, 5, 2, 0.2).unwrap().scores,
            gen_instance(4, 12, 8, 5, 2, 0.2).unwrap().scores
        );
    }

    #[test]
    fn parameter_checks() {
        assert!(gen_instance(0, 3, 8, 5, 1, 0.0).is_err());
        assert!(gen_instance(0, 8, 8, 2, 3, 0.0).is_err());
        assert!(gen_instance(0, 8, 8, 2, 1, -1.0).is_err());
    }

    #[test]
    fn noiseless_informative_column_separates() {
        let inst = gen_instance(11, 20, 20, 4, 1, 0.0).unwrap();
        let c = inst.informative[0];
        let pos_min = (0..40)
            .filter(|&i| inst.labels[i])
            .map(|i| inst.scores.data[(i, c)])
            .fold(f64::INFINITY, f64::min);
        let neg_max = (0..40)
            .filter(|&i| !inst.labels[i])
            .map(|i| inst.scores.data[(i, c)])
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(pos_min >= 0.7 && neg_max <= 0.3);
    }

    fn test_part(inst: &SynthInstance) -> ScoreMatrix {
        let l = inst.n_weak();
        let rows: Vec<usize> = (l..inst.videos.len()).collect();
        let data = inst.scores.data.select(ndarray::Axis(0), &rows);
        normalize_scores(
            &ScoreMatrix::new(
                rows.iter()
                    .map(|&i| inst.videos[i].video_id.clone())
                    .collect(),
                inst.scores.concept_ids.clone(),
                data,
                0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn noise_lowers_borda_ap() {
        let clean = gen_instance(5, 40, 40, 4, 1, 0.0).unwrap();
        let noisy = gen_instance(5, 40, 40, 4, 1, 0.4).unwrap();
        let ap = |inst: &SynthInstance| {
            let rel = vec![1.0; 4];
            let r = borda_baseline(&test_part(inst), &rel).unwrap();
            average_precision(&r, &inst.test_positives()).unwrap()
        };
        assert!(ap(&noisy) < ap(&clean));
    }

    #[test]
    fn simplex_oracle_examples() {
        let a = brute_force_simplex(&[0.5, 0.5, 0.5]).unwrap();
        for x in a {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(brute_force_simplex(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert!(brute_force_simplex(&[0.0; 7]).is_err());
    }

    #[test]
    fn push_oracle_example() {
        let labels = PseudoLabels::new(vec![0, 1], vec![2], 3).unwrap();
        assert_eq!(brute_force_push(&[2.0, 0.5, 1.0], &labels), 0.75);
    }

    #[test]
    fn finite_differences() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        for h in [1e-2, 1e-4] {
            let g = finite_diff_gradient(|x| 3.0 * x[0] - 0.5 * x[1], &[0.25, -0.5], h);
            assert!((g[0] - 3.0).abs() < 1e-12 && (g[1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn weak_descriptions_are_covered_by_the_fixture() {
        let inst = gen_instance(2, 16, 4, 6, 2, 0.1).unwrap();
        for v in inst.videos.iter().filter(|v| v.split == Split::Weak) {
            crate::semantic::weak_labels(v, &inst.vocab, &inst.table).unwrap();
        }
    }
}
