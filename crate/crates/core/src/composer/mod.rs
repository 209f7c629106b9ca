//! Dynamic composition: per-video aggregation weights learned jointly with
//! an adaptive neighbor graph under an infinite-push ranking loss.
//!
//! The joint objective over weights `W` and neighbor rows `A` is
//!
//! ```text
//! J(W, A) = Σ_ij a_ij (f_i - f_j)² + Σ_i γ_i Σ_j a_ij² + λ max_{j∈N} (1/p) Σ_{i∈P} (1 - f_i + f_j)_+
//! ```
//!
//! with `f_i = w_iᵀ s_i`, `w_i ≥ 0` and optionally `‖w_i‖₁ ≤ B`. [`fit`]
//! alternates the exact neighbor update with a weight update from one of two
//! solvers; both only ever accept iterates that lower the objective.

mod problem;
mod proximal;
mod reference;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::{candidate_sets, GammaMode, NeighborMatrix};
use crate::semantic::PseudoLabels;

pub use proximal::{project_l1_ball, project_push_set, prox_linf, prox_push, push_support};

/// Concept-detector outputs, one row per video. Weak videos occupy rows
/// `0..n_weak`, test videos the remaining rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    video_ids: Vec<String>,
    concept_ids: Vec<String>,
    data: Array2<f64>,
    n_weak: usize,
}

impl ScoreMatrix {
    pub fn new(
        video_ids: Vec<String>,
        concept_ids: Vec<String>,
        data: Array2<f64>,
        n_weak: usize,
    ) -> Result<Self> {
        let (n, m) = data.dim();
        if video_ids.len() != n {
            return Err(Error::domain(format!(
                "{} video ids for {n} rows",
                video_ids.len()
            )));
        }
        if concept_ids.len() != m {
            return Err(Error::domain(format!(
                "{} concept ids for {m} columns",
                concept_ids.len()
            )));
        }
        if m == 0 {
            return Err(Error::domain("score matrix without concept columns"));
        }
        if n_weak > n {
            return Err(Error::domain("more weak rows than rows"));
        }
        if let Some(((r, c), _)) = data.indexed_iter().find(|(_, x)| !x.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite score for video {:?}, concept {:?}",
                video_ids[r], concept_ids[c]
            )));
        }
        Ok(ScoreMatrix {
            video_ids,
            concept_ids,
            data,
            n_weak,
        })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn n_rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.data.ncols()
    }

    /// `l`, the number of weakly described videos.
    pub fn n_weak(&self) -> usize {
        self.n_weak
    }

    /// `u`, the number of test videos.
    pub fn n_test(&self) -> usize {
        self.n_rows() - self.n_weak
    }

    pub fn video_ids(&self) -> &[String] {
        &self.video_ids
    }

    pub fn concept_ids(&self) -> &[String] {
        &self.concept_ids
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).to_vec()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.outer_iter().map(|r| r.to_vec()).collect()
    }

    /// Keeps only the given columns, in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&c| c >= self.n_cols()) {
            return Err(Error::domain(format!("column {bad} out of range")));
        }
        let data = self.data.select(Axis(1), columns);
        let concept_ids = columns
            .iter()
            .map(|&c| self.concept_ids[c].clone())
            .collect();
        ScoreMatrix::new(self.video_ids.clone(), concept_ids, data, self.n_weak)
    }

    /// The test rows alone, as a matrix without weak rows.
    pub fn test_rows(&self) -> ScoreMatrix {
        let rows: Vec<usize> = (self.n_weak..self.n_rows()).collect();
        ScoreMatrix {
            video_ids: self.video_ids[self.n_weak..].to_vec(),
            concept_ids: self.concept_ids.clone(),
            data: self.data.select(Axis(0), &rows),
            n_weak: 0,
        }
    }

    /// Drops the last column; the inverse of [`fuse_supervised`] on normalized input.
    pub fn drop_last_column(&self) -> Result<Self> {
        let keep: Vec<usize> = (0..self.n_cols().saturating_sub(1)).collect();
        self.select_columns(&keep)
    }
}

/// Per-column min-max rescaling to `[0, 1]`; constant columns become 0.5.
pub fn normalize_scores(raw: &ScoreMatrix) -> ScoreMatrix {
    let mut data = raw.data.clone();
    for mut col in data.axis_iter_mut(Axis(1)) {
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            let span = hi - lo;
            col.mapv_inplace(|x| (x - lo) / span);
        } else {
            col.fill(0.5);
        }
    }
    ScoreMatrix {
        data,
        ..raw.clone()
    }
}

/// Appends per-video supervised scores as an extra concept column and re-normalizes.
pub fn fuse_supervised(s: &ScoreMatrix, supervised: &[f64]) -> Result<ScoreMatrix> {
    if supervised.len() != s.n_rows() {
        return Err(Error::domain(format!(
            "{} supervised scores for {} videos",
            supervised.len(),
            s.n_rows()
        )));
    }
    let column = Array1::from(supervised.to_vec()).insert_axis(Axis(1));
    let data = ndarray::concatenate(Axis(1), &[s.data.view(), column.view()])
        .expect("row counts checked above");
    let mut concept_ids = s.concept_ids.clone();
    concept_ids.push(SUPERVISED_COLUMN.to_string());
    let fused = ScoreMatrix::new(s.video_ids.clone(), concept_ids, data, s.n_weak)?;
    Ok(normalize_scores(&fused))
}

pub const SUPERVISED_COLUMN: &str = "__supervised__";

/// Relevance prior extended by one entry for a fused supervised column: the
/// largest relevance among the selected concepts.
pub fn fused_relevance(selected: &[f64]) -> Vec<f64> {
    let top = selected.iter().copied().fold(0.0, f64::max);
    let mut out = selected.to_vec();
    out.push(top);
    out
}

/// `f_i = w_iᵀ s_i`.
pub fn aggregate(w: &[f64], s: &[f64]) -> Result<f64> {
    if w.len() != s.len() {
        return Err(Error::domain(format!(
            "weight length {} differs from score length {}",
            w.len(),
            s.len()
        )));
    }
    Ok(w.iter().zip(s).map(|(a, b)| a * b).sum())
}

/// Nonnegative per-video aggregation weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    data: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::domain("weights must be finite and nonnegative"));
        }
        Ok(WeightMatrix { data })
    }

    /// Every row set to `row`.
    pub fn broadcast(row: &[f64], n_rows: usize) -> Result<Self> {
        let data = Array2::from_shape_fn((n_rows, row.len()), |(_, c)| row[c]);
        Self::new(data)
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        WeightMatrix {
            data: Array2::zeros((n_rows, n_cols)),
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).to_vec()
    }

    /// Aggregated scores against a compatible score matrix.
    pub fn scores(&self, s: &ScoreMatrix) -> Result<Vec<f64>> {
        if self.data.dim() != s.data.dim() {
            return Err(Error::domain(format!(
                "weights {:?} and scores {:?} differ in shape",
                self.data.dim(),
                s.data.dim()
            )));
        }
        Ok(problem::scores(&self.data, s))
    }

    pub fn row_l1_norms(&self) -> Vec<f64> {
        self.data.outer_iter().map(|r| r.sum()).collect()
    }
}

fn check_labels(labels: &PseudoLabels, n: usize) -> Result<()> {
    if let Some(&bad) = labels
        .positives()
        .iter()
        .chain(labels.negatives())
        .find(|&&i| i >= n)
    {
        return Err(Error::domain(format!(
            "pseudo label {bad} outside {n} rows"
        )));
    }
    Ok(())
}

/// Infinite-push hinge loss of the aggregated scores.
pub fn infinite_push_loss(w: &WeightMatrix, s: &ScoreMatrix, labels: &PseudoLabels) -> Result<f64> {
    check_labels(labels, s.n_rows())?;
    Ok(push_from_scores(&w.scores(s)?, labels))
}

/// Infinite-push hinge loss given aggregated scores directly.
pub fn push_from_scores(f: &[f64], labels: &PseudoLabels) -> f64 {
    problem::push_with_argmax(f, labels).0
}

/// Smoothness term `Σ_ij a_ij (f_i - f_j)²`.
pub fn smoothness(f: &[f64], a: &NeighborMatrix) -> f64 {
    a.entries()
        .map(|(i, j, w)| {
            let d = f[i] - f[j];
            w * d * d
        })
        .sum()
}

/// Joint objective `J(W, A)`; γ is carried per row by the neighbor matrix.
pub fn objective(
    w: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    lambda: f64,
) -> Result<f64> {
    if a.n_rows() != s.n_rows() {
        return Err(Error::domain(
            "neighbor matrix and score matrix differ in rows",
        ));
    }
    check_labels(labels, s.n_rows())?;
    if !(lambda >= 0.0) {
        return Err(Error::domain("lambda must be nonnegative"));
    }
    let f = w.scores(s)?;
    Ok(joint_value(&f, a, labels, lambda))
}

fn joint_value(f: &[f64], a: &NeighborMatrix, labels: &PseudoLabels, lambda: f64) -> f64 {
    smoothness(f, a) + a.regularizer() + lambda * push_from_scores(f, labels)
}

/// Weight-subproblem value `Σ a (f_i - f_j)² + λ push` (the γ term is constant in W).
pub fn weight_subproblem_value(
    w: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    lambda: f64,
) -> Result<f64> {
    let f = w.scores(s)?;
    Ok(smoothness(&f, a) + lambda * push_from_scores(&f, labels))
}

/// Score-space gradient of the smoothness term, `∂/∂f_k Σ_ij a_ij (f_i - f_j)²`.
pub fn smoothness_gradient(f: &[f64], a: &NeighborMatrix) -> Vec<f64> {
    let mut g = vec![0.0; f.len()];
    for (i, j, w) in a.entries() {
        let t = 2.0 * w * (f[i] - f[j]);
        g[i] += t;
        g[j] -= t;
    }
    g
}

/// Weight-space gradient of the smoothness term, as used by the solvers.
pub fn smoothness_weight_gradient(
    w: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
) -> Result<Array2<f64>> {
    check_labels(labels, s.n_rows())?;
    let p = problem::WeightProblem::new(s, a, labels, 0.0, None);
    let f = w.scores(s)?;
    Ok(p.lift(&p.smoothness_gradient(&f)))
}

/// Iteration limits of a weight update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub max_iters: usize,
    /// Relative improvement below which the reference solver tightens and
    /// eventually stops; relative residual tolerance for the proximal solver.
    pub tol: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        InnerConfig {
            max_iters: 500,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverKind {
    Reference,
    Proximal,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(SolverKind::Reference),
            "proximal" => Ok(SolverKind::Proximal),
            other => Err(Error::domain(format!("unknown solver {other:?}"))),
        }
    }
}

/// Result of one weight update.
#[derive(Debug, Clone)]
pub struct WeightUpdate {
    pub weights: WeightMatrix,
    pub value: f64,
    pub iterations: usize,
    /// The proximal solver hit its cap and the reference result was used.
    pub fell_back: bool,
}

fn check_update_inputs(
    w: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    lambda: f64,
    cap: Option<f64>,
) -> Result<()> {
    if w.data.dim() != s.data.dim() {
        return Err(Error::domain("weights and scores differ in shape"));
    }
    if a.n_rows() != s.n_rows() {
        return Err(Error::domain(
            "neighbor matrix and score matrix differ in rows",
        ));
    }
    check_labels(labels, s.n_rows())?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain("lambda must be finite and nonnegative"));
    }
    if let Some(b) = cap {
        if !(b > 0.0 && b.is_finite()) {
            return Err(Error::domain("weight cap must be positive"));
        }
        // rounding-level excess is projected away by the solvers
        if w.row_l1_norms().iter().any(|&r| r > b * (1.0 + 1e-9)) {
            return Err(Error::domain("initial weights exceed the cap"));
        }
    }
    Ok(())
}

fn feasible_start(problem: &problem::WeightProblem, w: &WeightMatrix) -> Array2<f64> {
    let mut init = w.data.clone();
    if let Some(b) = problem.cap {
        for mut row in init.axis_iter_mut(Axis(0)) {
            let mut buf = row.to_vec();
            problem::enforce_cap(&mut buf, b);
            row.iter_mut().zip(buf).for_each(|(x, v)| *x = v);
        }
    }
    init
}

/// Exact weight update: the subproblem is solved over the achievable scores
/// and the optimum lifted back to feasible weights. Never returns a point
/// worse than `w_init`.
pub fn update_weights_reference(
    w_init: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    lambda: f64,
    cap: Option<f64>,
    cfg: &InnerConfig,
) -> Result<WeightUpdate> {
    check_update_inputs(w_init, a, s, labels, lambda, cap)?;
    let problem = problem::WeightProblem::new(s, a, labels, lambda, cap);
    let init = feasible_start(&problem, w_init);
    let out = reference::solve(&problem, &init, cfg);
    Ok(WeightUpdate {
        weights: WeightMatrix { data: out.weights },
        value: out.value,
        iterations: out.iterations,
        fell_back: false,
    })
}

/// Weight update by ADMM on the pairwise-margin splitting. Falls back to the
/// reference solver when the iteration cap is reached before convergence.
pub fn update_weights_proximal(
    w_init: &WeightMatrix,
    a: &NeighborMatrix,
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    lambda: f64,
    cap: Option<f64>,
    cfg: &InnerConfig,
) -> Result<WeightUpdate> {
    check_update_inputs(w_init, a, s, labels, lambda, cap)?;
    let problem = problem::WeightProblem::new(s, a, labels, lambda, cap);
    let init = feasible_start(&problem, w_init);
    let out = proximal::solve(&problem, &init, cfg);
    if !out.converged {
        log::warn!(
            "solver=proximal iterations={} status=cap_reached fallback=reference",
            out.outcome.iterations
        );
        let fallback = reference::solve(&problem, &init, cfg);
        return Ok(WeightUpdate {
            weights: WeightMatrix {
                data: fallback.weights,
            },
            value: fallback.value,
            iterations: out.outcome.iterations + fallback.iterations,
            fell_back: true,
        });
    }
    // ADMM iterates are feasible but not monotone; never hand back a worse point
    let init_value = problem.value(&init);
    let (data, value) = if out.outcome.value <= init_value {
        (out.outcome.weights, out.outcome.value)
    } else {
        (init, init_value)
    };
    Ok(WeightUpdate {
        weights: WeightMatrix { data },
        value,
        iterations: out.outcome.iterations,
        fell_back: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositionConfig {
    /// Push-loss weight λ.
    pub lambda: f64,
    pub gamma_mode: GammaMode,
    /// Size of each video's candidate neighbor set in score space.
    pub k_candidates: usize,
    pub max_outer_iters: usize,
    /// Relative objective decrease over one outer iteration that ends the fit.
    pub tol: f64,
    pub solver: SolverKind,
    /// Row ℓ1 cap `B`; `None` keeps only nonnegativity.
    pub weight_cap: Option<f64>,
    pub inner: InnerConfig,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        CompositionConfig {
            lambda: 1.0,
            gamma_mode: GammaMode::PerRow { k: 7 },
            k_candidates: 50,
            max_outer_iters: 100,
            tol: 1e-6,
            solver: SolverKind::Reference,
            weight_cap: Some(1.0),
            inner: InnerConfig::default(),
        }
    }
}

impl CompositionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::domain("lambda must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::domain("tol must be positive"));
        }
        if self.max_outer_iters == 0 {
            return Err(Error::domain("max_outer_iters must be at least 1"));
        }
        if self.k_candidates == 0 {
            return Err(Error::domain("k_candidates must be at least 1"));
        }
        match self.gamma_mode {
            GammaMode::Global(g) if !(g > 0.0 && g.is_finite()) => {
                return Err(Error::domain("gamma must be positive"))
            }
            GammaMode::PerRow { k: 0 } => {
                return Err(Error::domain("k_neighbors must be at least 1"))
            }
            _ => {}
        }
        if let Some(b) = self.weight_cap {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::domain("weight cap must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub weights: WeightMatrix,
    pub neighbors: NeighborMatrix,
    /// Joint objective after every block update, starting after the first
    /// neighbor step.
    pub objective_trace: Vec<f64>,
    /// Scores of the initial (relevance-weighted) composition.
    pub initial_scores: Vec<f64>,
    pub scores: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Weight steps in which the proximal solver fell back to the reference.
    pub fallbacks: usize,
}

/// Initial weight row: the relevance prior scaled to ℓ1 norm `B` (1 without a
/// cap); uniform when every relevance is zero.
pub fn initial_weight_row(relevance: &[f64], cap: Option<f64>) -> Result<Vec<f64>> {
    if relevance.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
        return Err(Error::domain(
            "relevance values must be finite and nonnegative",
        ));
    }
    let total: f64 = relevance.iter().sum();
    let budget = cap.unwrap_or(1.0);
    let mut row: Vec<f64> = if total > 0.0 {
        relevance.iter().map(|r| budget * r / total).collect()
    } else {
        vec![budget / relevance.len() as f64; relevance.len()]
    };
    if let Some(b) = cap {
        problem::enforce_cap(&mut row, b);
    }
    Ok(row)
}

/// Fits per-video weights by alternating neighbor and weight updates.
pub fn fit(
    s: &ScoreMatrix,
    labels: &PseudoLabels,
    relevance: &[f64],
    config: &CompositionConfig,
) -> Result<FitResult> {
    config.validate()?;
    let n = s.n_rows();
    if n < 2 {
        return Err(Error::domain("need at least two videos"));
    }
    if relevance.len() != s.n_cols() {
        return Err(Error::domain(format!(
            "relevance has {} entries for {} concept columns",
            relevance.len(),
            s.n_cols()
        )));
    }
    // pseudo labels come from the weakly described rows only
    check_labels(labels, s.n_weak())?;

    let row = initial_weight_row(relevance, config.weight_cap)?;
    let mut w = WeightMatrix::broadcast(&row, n)?;
    let initial_scores = w.scores(s)?;

    let candidates = candidate_sets(&s.rows(), config.k_candidates);
    let gamma = config.gamma_mode.resolve(&initial_scores, &candidates)?;
    let mut a = NeighborMatrix::uniform(candidates, gamma)?.updated(&initial_scores)?;

    let mut trace = vec![joint_value(&initial_scores, &a, labels, config.lambda)];
    let mut converged = false;
    let mut iterations = 0;
    let mut fallbacks = 0;

    while iterations < config.max_outer_iters {
        iterations += 1;
        let before = *trace.last().unwrap();

        let update = match config.solver {
            SolverKind::Reference => update_weights_reference(
                &w,
                &a,
                s,
                labels,
                config.lambda,
                config.weight_cap,
                &config.inner,
            )?,
            SolverKind::Proximal => update_weights_proximal(
                &w,
                &a,
                s,
                labels,
                config.lambda,
                config.weight_cap,
                &config.inner,
            )?,
        };
        fallbacks += usize::from(update.fell_back);
        w = update.weights;
        let f = w.scores(s)?;
        trace.push(joint_value(&f, &a, labels, config.lambda));

        a = a.updated(&f)?;
        let after = joint_value(&f, &a, labels, config.lambda);
        trace.push(after);

        log::debug!("outer={iterations} objective={after:.12e}");
        if (before - after) <= config.tol * before.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }

    let scores = w.scores(s)?;
    Ok(FitResult {
        weights: w,
        neighbors: a,
        objective_trace: trace,
        initial_scores,
        scores,
        converged,
        iterations,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn matrix(data: Array2<f64>, n_weak: usize) -> ScoreMatrix {
        let (n, m) = data.dim();
        ScoreMatrix::new(
            (0..n).map(|i| format!("v{i}")).collect(),
            (0..m).map(|c| format!("c{c}")).collect(),
            data,
            n_weak,
        )
        .unwrap()
    }

    #[test]
    fn normalize_examples() {
        let s = matrix(
            array![[0.0, 3.0, 0.0], [5.0, 3.0, 1.0], [10.0, 3.0, 0.5]],
            3,
        );
        let n = normalize_scores(&s);
        assert_eq!(n.data().column(0).to_vec(), vec![0.0, 0.5, 1.0]);
        assert_eq!(n.data().column(1).to_vec(), vec![0.5, 0.5, 0.5]);
        assert_eq!(n.data().column(2).to_vec(), vec![0.0, 1.0, 0.5]);
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[0.0, 0.0], &[0.3, 0.9]).unwrap(), 0.0);
        assert_eq!(aggregate(&[1.0, 0.0], &[0.7, 0.2]).unwrap(), 0.7);
        assert_abs_diff_eq!(
            aggregate(&[0.5, 0.5], &[0.4, 0.8]).unwrap(),
            0.6,
            epsilon = 1e-15
        );
        assert!(aggregate(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn push_loss_examples() {
        // positives score 2 and 0.5, the negative scores 1
        let s = matrix(array![[2.0], [0.5], [1.0]], 3);
        let w = WeightMatrix::broadcast(&[1.0], 3).unwrap();
        let labels = PseudoLabels::new(vec![0, 1], vec![2], 3).unwrap();
        assert_abs_diff_eq!(
            infinite_push_loss(&w, &s, &labels).unwrap(),
            0.75,
            epsilon = 1e-15
        );

        let s = matrix(array![[3.0], [2.5], [1.0], [0.2]], 4);
        let labels = PseudoLabels::new(vec![0, 1], vec![2, 3], 4).unwrap();
        assert_eq!(
            infinite_push_loss(&w.clone_rows(4), &s, &labels).unwrap(),
            0.0
        );

        let zero = WeightMatrix::zeros(4, 1);
        assert_eq!(infinite_push_loss(&zero, &s, &labels).unwrap(), 1.0);
    }

    impl WeightMatrix {
        fn clone_rows(&self, n: usize) -> WeightMatrix {
            WeightMatrix::broadcast(&self.row(0), n).unwrap()
        }
    }

    #[test]
    fn objective_direct_evaluation() {
        // 4 rows, 3 uniform candidates each, W = 0, γ = λ = 1:
        // smoothness 0, regularizer 4 · 3 · (1/3)² = 4/3, push 1
        let s = matrix(array![[0.1], [0.4], [0.7], [0.9]], 4);
        let cands: Vec<Vec<usize>> = (0..4)
            .map(|i| (0..4).filter(|&j| j != i).collect())
            .collect();
        let a = NeighborMatrix::uniform(cands, vec![1.0; 4]).unwrap();
        let labels = PseudoLabels::new(vec![0], vec![1], 4).unwrap();
        let w = WeightMatrix::zeros(4, 1);
        let j = objective(&w, &a, &s, &labels, 1.0).unwrap();
        assert_abs_diff_eq!(j, 4.0 / 3.0 + 1.0, epsilon = 1e-12);

        let j0 = objective(&w, &a, &s, &labels, 0.0).unwrap();
        assert_abs_diff_eq!(j0, a.regularizer(), epsilon = 1e-15);

        let w1 = WeightMatrix::broadcast(&[1.0], 4).unwrap();
        let p1 = objective(&w1, &a, &s, &labels, 1.0).unwrap()
            - objective(&w1, &a, &s, &labels, 0.0).unwrap();
        let p2 = objective(&w1, &a, &s, &labels, 2.0).unwrap()
            - objective(&w1, &a, &s, &labels, 0.0).unwrap();
        assert_abs_diff_eq!(p2, 2.0 * p1, epsilon = 1e-12);
    }

    #[test]
    fn fuse_then_drop_recovers_normalized_matrix() {
        let s = normalize_scores(&matrix(array![[0.0, 2.0], [1.0, 4.0], [0.5, 3.0]], 2));
        let fused = fuse_supervised(&s, &[1.0, 0.0, 0.3]).unwrap();
        assert_eq!(fused.n_cols(), s.n_cols() + 1);
        assert_eq!(fused.drop_last_column().unwrap(), s);
        assert!(fuse_supervised(&s, &[1.0]).is_err());
        assert_eq!(fused_relevance(&[0.2, 0.7]), vec![0.2, 0.7, 0.7]);
    }

    #[test]
    fn initial_row_is_scaled_relevance() {
        assert_eq!(
            initial_weight_row(&[1.0, 3.0], Some(1.0)).unwrap(),
            vec![0.25, 0.75]
        );
        assert_eq!(
            initial_weight_row(&[0.0, 0.0], Some(2.0)).unwrap(),
            vec![1.0, 1.0]
        );
        assert!(initial_weight_row(&[-0.1, 1.0], None).is_err());
    }

    #[test]
    fn single_pair_push_reaches_zero_hinge() {
        // one positive scoring 1 and one negative scoring 0, B = 2
        let s = matrix(array![[1.0], [0.0]], 2);
        let labels = PseudoLabels::new(vec![0], vec![1], 2).unwrap();
        let a = NeighborMatrix::uniform(vec![vec![1], vec![0]], vec![1.0; 2]).unwrap();
        let w0 = WeightMatrix::broadcast(&[0.5], 2).unwrap();
        let cfg = InnerConfig::default();
        let out = update_weights_reference(&w0, &a, &s, &labels, 1e3, Some(2.0), &cfg).unwrap();
        let f = out.weights.scores(&s).unwrap();
        assert_eq!(push_from_scores(&f, &labels), 0.0, "scores {f:?}");
    }
}
