//! Subcommands of the `eventrank` binary.
//!
//! Every command returns an [`Outcome`] on success; an `Err` is a validation
//! failure that happened before any event was processed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{Map, Value};

use eventrank_core::composer::{CompositionConfig, InnerConfig, SolverKind};
use eventrank_core::embedding::{load_embeddings, EmbeddingTable};
use eventrank_core::eval::{average_precision, EvalReport, RankedList};
use eventrank_core::graph::GammaMode;
use eventrank_core::io::{self, GroundTruth, ScoreTable};
use eventrank_core::pipeline::{run_event, Corpus, EventResult, PipelineParams};
use eventrank_core::semantic::{
    concept_relevance, select_concepts, validate_videos, ConceptVocabulary, EventQuery, Split,
    VideoRecord,
};
use eventrank_core::synth::gen_instance;

/// Keys of the metrics file that cannot be used as event ids.
const RESERVED_KEYS: [&str; 3] = ["mAP", "borda", "failures"];

#[derive(Debug, Parser)]
#[command(
    name = "eventrank",
    version,
    about = "Zero-exemplar event ranking from concept detector scores"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank the test videos of every event and optionally score the rankings.
    Rank(RankArgs),
    /// Report the most relevant concepts of every event.
    SelectConcepts(SelectArgs),
    /// Score existing rankings against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic instance with a planted event.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct QueryInputs {
    /// Word embedding file, one token and its vector per line.
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Concept vocabulary CSV (concept_id,name,source).
    #[arg(long)]
    pub vocabulary: PathBuf,
    /// Event queries, one JSON object per line.
    #[arg(long)]
    pub events: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct Hyperparams {
    /// Concepts selected per event.
    #[arg(long = "k", default_value_t = 30)]
    pub k: usize,
    /// Pseudo-positive weak videos per event.
    #[arg(long, default_value_t = 20)]
    pub n_pos: usize,
    /// Pseudo-negative weak videos per event.
    #[arg(long, default_value_t = 100)]
    pub n_neg: usize,
    /// Target neighbor count used to set each video's regularizer.
    #[arg(long, default_value_t = 7)]
    pub k_neighbors: usize,
    /// Candidate neighbors per video in concept-score space.
    #[arg(long, default_value_t = 50)]
    pub k_candidates: usize,
    /// Shared neighbor regularizer; overrides --k-neighbors when given.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weight of the infinite-push loss.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Cap on the l1 norm of every aggregation weight row.
    #[arg(long, default_value_t = 1.0)]
    pub weight_cap: f64,
    /// Drop the weight cap and keep only nonnegativity.
    #[arg(long)]
    pub no_weight_cap: bool,
    /// Relative objective decrease that ends the alternating fit.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Maximum outer iterations of the alternating fit.
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Iteration cap of the weight-step solver.
    #[arg(long, default_value_t = 500)]
    pub inner_max_iters: usize,
    /// Weight-step solver (reference or proximal).
    #[arg(long, default_value = "reference")]
    pub solver: SolverKind,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            k: 30,
            n_pos: 20,
            n_neg: 100,
            k_neighbors: 7,
            k_candidates: 50,
            gamma: None,
            lambda: 1.0,
            weight_cap: 1.0,
            no_weight_cap: false,
            tol: 1e-6,
            max_iters: 100,
            inner_max_iters: 500,
            solver: SolverKind::Reference,
        }
    }
}

impl Hyperparams {
    pub fn pipeline_params(&self) -> Result<PipelineParams> {
        ensure!(self.k >= 1, "--k must be at least 1");
        ensure!(self.n_pos >= 1, "--n-pos must be at least 1");
        ensure!(self.n_neg >= 1, "--n-neg must be at least 1");
        ensure!(
            self.inner_max_iters >= 1,
            "--inner-max-iters must be at least 1"
        );
        let composition = CompositionConfig {
            lambda: self.lambda,
            gamma_mode: match self.gamma {
                Some(g) => GammaMode::Global(g),
                None => GammaMode::PerRow {
                    k: self.k_neighbors,
                },
            },
            k_candidates: self.k_candidates,
            max_outer_iters: self.max_iters,
            tol: self.tol,
            solver: self.solver,
            weight_cap: (!self.no_weight_cap).then_some(self.weight_cap),
            inner: InnerConfig {
                max_iters: self.inner_max_iters,
                ..InnerConfig::default()
            },
        };
        composition.validate()?;
        Ok(PipelineParams {
            k_concepts: self.k,
            n_pos: self.n_pos,
            n_neg: self.n_neg,
            composition,
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct RankArgs {
    #[command(flatten)]
    pub inputs: QueryInputs,
    /// Videos TSV (video_id, split, description).
    #[arg(long)]
    pub videos: PathBuf,
    /// Concept score CSV, columns in vocabulary order.
    #[arg(long)]
    pub scores: PathBuf,
    /// Scores of a supervised event classifier (video_id,score) to fuse in.
    #[arg(long)]
    pub supervised: Option<PathBuf>,
    /// Ground truth CSV (event_id,video_id,label); enables AP in the metrics file.
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    /// Output directory for rankings and metrics.json.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: Hyperparams,
    /// Worker threads; 0 uses every logical CPU.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Also print metrics.json to standard output.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub inputs: QueryInputs,
    /// Concepts reported per event.
    #[arg(long = "k", default_value_t = 30)]
    pub k: usize,
    /// Output CSV (event_id,rank,concept_id,name,relevance).
    #[arg(long, required_unless_present = "stdout")]
    pub out: Option<PathBuf>,
    /// Print the CSV to standard output.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory holding <event_id>.rank.tsv files.
    #[arg(long)]
    pub rankings: PathBuf,
    /// Ground truth CSV (event_id,video_id,label).
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// Output JSON file.
    #[arg(long, required_unless_present = "stdout")]
    pub out: Option<PathBuf>,
    /// Print the JSON to standard output.
    #[arg(long)]
    pub stdout: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Weakly described videos.
    #[arg(long, default_value_t = 40)]
    pub l: usize,
    /// Test videos.
    #[arg(long, default_value_t = 40)]
    pub u: usize,
    /// Concepts.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Concepts whose scores separate the planted event.
    #[arg(long, default_value_t = 1)]
    pub n_informative: usize,
    /// Standard deviation of the score noise.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
    /// Also write a supervised classifier that scores every video by its label.
    #[arg(long)]
    pub with_supervised: bool,
}

/// Result of a command that got past validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Outcome {
    pub events: usize,
    pub failed: usize,
}

impl Outcome {
    fn clean() -> Self {
        Outcome {
            events: 0,
            failed: 0,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.failed {
            0 => 0,
            f if f == self.events => 2,
            _ => 3,
        }
    }
}

pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Rank(a) => cmd_rank(&a),
        Command::SelectConcepts(a) => cmd_select_concepts(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn require_file(path: &Path, flag: &str) -> Result<()> {
    ensure!(path.is_file(), "{flag}: no such file {}", path.display());
    Ok(())
}

fn load_queries(
    inputs: &QueryInputs,
) -> Result<(EmbeddingTable, ConceptVocabulary, Vec<EventQuery>)> {
    require_file(&inputs.embeddings, "--embeddings")?;
    require_file(&inputs.vocabulary, "--vocabulary")?;
    require_file(&inputs.events, "--events")?;
    let table = load_embeddings(&inputs.embeddings)?;
    let vocab = io::read_vocabulary(&inputs.vocabulary)?;
    let events = io::read_events(&inputs.events)?;
    ensure!(!events.is_empty(), "{}: no events", inputs.events.display());
    for e in &events {
        e.validate()?;
    }
    log::info!(
        "stage=load embeddings={} dimension={} concepts={} events={}",
        table.len(),
        table.dimension(),
        vocab.len(),
        events.len()
    );
    Ok((table, vocab, events))
}

fn check_event_ids(events: &[EventQuery]) -> Result<()> {
    for e in events {
        let id = &e.event_id;
        ensure!(
            !RESERVED_KEYS.contains(&id.as_str()),
            "event id {id:?} is reserved in the metrics file"
        );
        ensure!(
            !id.contains(['/', '\\']) && id != "." && id != "..",
            "event id {id:?} cannot be used as a file name"
        );
    }
    Ok(())
}

fn write_output(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, content).with_context(|| format!("writing {}", path.display()))
}

fn print_stdout(content: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(content.as_bytes())?;
    out.flush()?;
    Ok(())
}

pub fn ranking_path(dir: &Path, event_id: &str) -> PathBuf {
    dir.join(format!("{event_id}.rank.tsv"))
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("starting worker pool")
}

/// Positives of one event, after checking that every labelled video was ranked.
fn positives_in(
    event_id: &str,
    labels: &BTreeMap<String, bool>,
    ranking: &RankedList,
) -> Result<Vec<String>> {
    let ranked: std::collections::HashSet<&str> = ranking.ids().collect();
    let unknown: Vec<&str> = labels
        .keys()
        .map(String::as_str)
        .filter(|id| !ranked.contains(id))
        .collect();
    ensure!(
        unknown.is_empty(),
        "event {event_id}: ground truth names unranked videos: {}",
        unknown.join(", ")
    );
    Ok(labels
        .iter()
        .filter(|(_, &y)| y)
        .map(|(id, _)| id.clone())
        .collect())
}

fn report_json(report: &EvalReport) -> Result<Value> {
    Ok(serde_json::to_value(report)?)
}

pub fn cmd_rank(args: &RankArgs) -> Result<Outcome> {
    let params = args.hyper.pipeline_params()?;
    let (table, vocab, events) = load_queries(&args.inputs)?;
    check_event_ids(&events)?;
    require_file(&args.videos, "--videos")?;
    require_file(&args.scores, "--scores")?;
    let videos = io::read_videos(&args.videos)?;
    validate_videos(&videos)?;
    let scores = io::read_scores(&args.scores, &vocab)?;
    let supervised = match &args.supervised {
        Some(p) => {
            require_file(p, "--supervised")?;
            Some(io::read_supervised(p)?)
        }
        None => None,
    };
    let truth = match &args.ground_truth {
        Some(p) => {
            require_file(p, "--ground-truth")?;
            Some(io::read_ground_truth(p)?)
        }
        None => None,
    };
    check_rank_inputs(&params, &vocab, &videos, &scores)?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let corpus = Corpus {
        table: &table,
        vocab: &vocab,
        videos: &videos,
        scores: &scores,
        supervised: supervised.as_ref(),
    };
    let pool = thread_pool(args.threads)?;
    let results: Vec<std::result::Result<EventResult, String>> = pool.install(|| {
        events
            .par_iter()
            .map(|q| rank_one(&corpus, q, &params, &args.out))
            .collect()
    });

    let mut dcc = BTreeMap::new();
    let mut borda = BTreeMap::new();
    let mut failures = Map::new();
    for (q, res) in events.iter().zip(&results) {
        match res {
            Ok(r) => {
                let Some(labels) = truth.as_ref().and_then(|t| t.get(&q.event_id)) else {
                    continue;
                };
                match score_event(q, labels, r) {
                    Ok((ap, ap_borda)) => {
                        log::info!(
                            "stage=eval event={} ap={ap:.6} borda_ap={ap_borda:.6}",
                            q.event_id
                        );
                        dcc.insert(q.event_id.clone(), ap);
                        borda.insert(q.event_id.clone(), ap_borda);
                    }
                    Err(e) => {
                        log::error!("stage=eval event={} error=\"{e:#}\"", q.event_id);
                        failures.insert(q.event_id.clone(), Value::String(format!("{e:#}")));
                    }
                }
            }
            Err(msg) => {
                failures.insert(q.event_id.clone(), Value::String(msg.clone()));
            }
        }
    }

    let mut metrics = Map::new();
    if !dcc.is_empty() {
        if let Value::Object(m) = report_json(&EvalReport::new(dcc)?)? {
            metrics.extend(m);
        }
        metrics.insert("borda".into(), report_json(&EvalReport::new(borda)?)?);
    }
    metrics.insert("failures".into(), Value::Object(failures.clone()));
    let text = serde_json::to_string_pretty(&Value::Object(metrics))? + "\n";
    write_output(&args.out.join("metrics.json"), &text)?;
    if args.stdout {
        print_stdout(&text)?;
    }
    let outcome = Outcome {
        events: events.len(),
        failed: failures.len(),
    };
    log::info!(
        "stage=done events={} failed={}",
        outcome.events,
        outcome.failed
    );
    Ok(outcome)
}

/// Checks that only depend on the inputs, so they fail once instead of per event.
fn check_rank_inputs(
    params: &PipelineParams,
    vocab: &ConceptVocabulary,
    videos: &[VideoRecord],
    scores: &ScoreTable,
) -> Result<()> {
    ensure!(
        params.k_concepts <= vocab.len(),
        "--k {} exceeds the {} concepts in the vocabulary",
        params.k_concepts,
        vocab.len()
    );
    let l = videos.iter().filter(|v| v.split == Split::Weak).count();
    let u = videos.len() - l;
    ensure!(u > 0, "no test videos to rank");
    ensure!(
        params.n_pos + params.n_neg <= l,
        "--n-pos {} plus --n-neg {} exceeds the {l} weak videos",
        params.n_pos,
        params.n_neg
    );
    let scored: std::collections::HashSet<&str> =
        scores.video_ids.iter().map(String::as_str).collect();
    let missing: Vec<&str> = videos
        .iter()
        .map(|v| v.video_id.as_str())
        .filter(|id| !scored.contains(id))
        .collect();
    if !missing.is_empty() {
        bail!("videos without concept scores: {}", missing.join(", "));
    }
    log::info!("stage=validate weak={l} test={u} concepts={}", vocab.len());
    Ok(())
}

fn rank_one(
    corpus: &Corpus,
    query: &EventQuery,
    params: &PipelineParams,
    out: &Path,
) -> std::result::Result<EventResult, String> {
    let id = &query.event_id;
    let result = run_event(corpus, query, params)
        .map_err(anyhow::Error::from)
        .and_then(|r| {
            io::write_ranking(ranking_path(out, id), &r.ranking)?;
            Ok(r)
        });
    match result {
        Ok(r) => {
            let uncovered = r.weak_labels.iter().filter(|(_, w)| w.is_none()).count();
            let trace = &r.fit.objective_trace;
            log::info!(
                "stage=fit event={id} concepts={} pseudo_pos={} uncovered_weak={uncovered} iterations={} converged={} fallbacks={} objective={:.9e}",
                r.selected.len(),
                r.labels.n_positive(),
                r.fit.iterations,
                r.fit.converged,
                r.fit.fallbacks,
                trace.last().copied().unwrap_or(f64::NAN)
            );
            Ok(r)
        }
        Err(e) => {
            log::error!("stage=rank event={id} error=\"{e:#}\"");
            Err(format!("{e:#}"))
        }
    }
}

fn score_event(
    query: &EventQuery,
    labels: &BTreeMap<String, bool>,
    r: &EventResult,
) -> Result<(f64, f64)> {
    let positives = positives_in(&query.event_id, labels, &r.ranking)?;
    let ap = average_precision(&r.ranking, &positives)?;
    let ap_borda = average_precision(&r.borda, &positives)?;
    Ok((ap, ap_borda))
}

pub fn cmd_select_concepts(args: &SelectArgs) -> Result<Outcome> {
    let (table, vocab, events) = load_queries(&args.inputs)?;
    ensure!(
        args.k >= 1 && args.k <= vocab.len(),
        "--k must be between 1 and the {} concepts in the vocabulary",
        vocab.len()
    );
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["event_id", "rank", "concept_id", "name", "relevance"])?;
    let mut outcome = Outcome::clean();
    for q in &events {
        outcome.events += 1;
        let selected = concept_relevance(q, &vocab, &table)
            .and_then(|rel| Ok((select_concepts(&rel, &vocab, args.k)?, rel)));
        match selected {
            Ok((idx, rel)) => {
                for (rank, &c) in idx.iter().enumerate() {
                    let concept = vocab.get(c);
                    w.write_record([
                        q.event_id.as_str(),
                        &(rank + 1).to_string(),
                        &concept.concept_id,
                        &concept.name,
                        &rel.values[c].to_string(),
                    ])?;
                }
            }
            Err(e) => {
                log::error!("stage=select event={} error=\"{e}\"", q.event_id);
                outcome.failed += 1;
            }
        }
    }
    let text = String::from_utf8(w.into_inner()?)?;
    if let Some(out) = &args.out {
        write_output(out, &text)?;
    }
    if args.stdout {
        print_stdout(&text)?;
    }
    Ok(outcome)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Outcome> {
    require_file(&args.ground_truth, "--ground-truth")?;
    ensure!(
        args.rankings.is_dir(),
        "--rankings: no such directory {}",
        args.rankings.display()
    );
    let truth: GroundTruth = io::read_ground_truth(&args.ground_truth)?;
    ensure!(
        !truth.is_empty(),
        "{}: no labels",
        args.ground_truth.display()
    );
    let mut aps = BTreeMap::new();
    for (event_id, labels) in &truth {
        let path = ranking_path(&args.rankings, event_id);
        require_file(&path, "--rankings")?;
        let ranking = io::read_ranking(&path)?;
        let positives = positives_in(event_id, labels, &ranking)?;
        let ap =
            average_precision(&ranking, &positives).with_context(|| format!("event {event_id}"))?;
        log::info!("stage=eval event={event_id} ap={ap:.6}");
        aps.insert(event_id.clone(), ap);
    }
    let report = EvalReport::new(aps)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    if let Some(out) = &args.out {
        write_output(out, &text)?;
    }
    if args.stdout {
        print_stdout(&text)?;
    }
    Ok(Outcome {
        events: truth.len(),
        failed: 0,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Outcome> {
    let inst = gen_instance(
        args.seed,
        args.l,
        args.u,
        args.m,
        args.n_informative,
        args.sigma,
    )?;
    let files = inst.write(&args.out, args.with_supervised)?;
    log::info!(
        "stage=synth seed={} l={} u={} m={} sigma={} informative={:?} dir={}",
        args.seed,
        args.l,
        args.u,
        args.m,
        args.sigma,
        inst.informative,
        files
            .embeddings
            .parent()
            .unwrap_or(Path::new("."))
            .display()
    );
    Ok(Outcome::clean())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use tempfile::tempdir;

    #[test]
    fn exit_codes() {
        assert_eq!(
            Outcome {
                events: 3,
                failed: 0
            }
            .exit_code(),
            0
        );
        assert_eq!(
            Outcome {
                events: 3,
                failed: 3
            }
            .exit_code(),
            2
        );
        assert_eq!(
            Outcome {
                events: 3,
                failed: 1
            }
            .exit_code(),
            3
        );
    }

    #[test]
    fn default_hyperparams_match_flags() {
        let cli = Cli::try_parse_from([
            "eventrank",
            "rank",
            "--embeddings",
            "e",
            "--vocabulary",
            "v",
            "--events",
            "q",
            "--videos",
            "x",
            "--scores",
            "s",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::Rank(a) = cli.command else {
            panic!("not rank")
        };
        assert_eq!(
            a.hyper.pipeline_params().unwrap(),
            PipelineParams::default()
        );
        assert_eq!(
            Hyperparams::default().pipeline_params().unwrap(),
            PipelineParams::default()
        );
    }

    #[test]
    fn reserved_event_ids_rejected() {
        let q = |id: &str| EventQuery {
            event_id: id.into(),
            name: "dog show".into(),
            description: String::new(),
        };
        assert!(check_event_ids(&[q("E001")]).is_ok());
        assert!(check_event_ids(&[q("mAP")]).is_err());
        assert!(check_event_ids(&[q("a/b")]).is_err());
    }

    #[test]
    fn eval_flags_unknown_videos() {
        let dir = tempdir().unwrap();
        let ranking = RankedList::from_scores(&["a".into(), "b".into()], &[0.9, 0.1]).unwrap();
        io::write_ranking(ranking_path(dir.path(), "E1"), &ranking).unwrap();
        let gt: GroundTruth = BTreeMap::from([(
            "E1".to_string(),
            BTreeMap::from([("a".to_string(), true), ("zz".to_string(), false)]),
        )]);
        let gt_path = dir.path().join("gt.csv");
        io::write_ground_truth(&gt_path, &gt).unwrap();
        let err = cmd_eval(&EvalArgs {
            rankings: dir.path().into(),
            ground_truth: gt_path,
            out: Some(dir.path().join("m.json")),
            stdout: false,
        })
        .unwrap_err();
        assert!(format!("{err:#}").contains("zz"));
    }

    #[test]
    fn metrics_json_is_flat() {
        let r = EvalReport::new(BTreeMap::from([("E1".to_string(), 0.5)])).unwrap();
        assert_eq!(report_json(&r).unwrap(), json!({"E1": 0.5, "mAP": 0.5}));
    }
}
