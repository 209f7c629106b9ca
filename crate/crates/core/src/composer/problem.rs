//! The convex weight subproblem for a fixed neighbor matrix:
//!
//! `g(W) = Σ_ij a_ij (f_i - f_j)² + λ · push(f)`,  `f_i = w_iᵀ s_i`,
//!
//! over `{W : w_i ≥ 0, ‖w_i‖₁ ≤ B}`. Everything depends on `W` only through
//! `f`, so gradients are formed in score space and lifted row-wise by `s_i`.

use ndarray::{Array2, ArrayView1, Axis};

use crate::composer::ScoreMatrix;
use crate::graph::{simplex_project, NeighborMatrix};
use crate::semantic::PseudoLabels;

/// Undirected edge with weight `a_ij + a_ji`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Symmetrized edge list `(A + Aᵀ)`, one entry per unordered pair.
pub(crate) fn symmetric_edges(a: &NeighborMatrix) -> Vec<Edge> {
    let mut pairs: Vec<(usize, usize, f64)> = a
        .entries()
        .filter(|&(_, _, w)| w > 0.0)
        .map(|(i, j, w)| if i < j { (i, j, w) } else { (j, i, w) })
        .collect();
    pairs.sort_by_key(|x| (x.0, x.1));
    let mut edges: Vec<Edge> = Vec::with_capacity(pairs.len());
    for (i, j, w) in pairs {
        match edges.last_mut() {
            Some(e) if e.i == i && e.j == j => e.weight += w,
            _ => edges.push(Edge { i, j, weight: w }),
        }
    }
    edges
}

pub(crate) fn scores(w: &Array2<f64>, s: &ScoreMatrix) -> Vec<f64> {
    w.outer_iter()
        .zip(s.data().outer_iter())
        .map(|(wi, si)| wi.dot(&si))
        .collect()
}

/// Value of the infinite-push hinge loss and the index of a maximizing negative.
pub(crate) fn push_with_argmax(f: &[f64], labels: &PseudoLabels) -> (f64, usize) {
    let p = labels.n_positive() as f64;
    let mut best = f64::NEG_INFINITY;
    let mut arg = labels.negatives()[0];
    for &j in labels.negatives() {
        let h = column_hinge(f, labels, j) / p;
        if h > best {
            best = h;
            arg = j;
        }
    }
    (best, arg)
}

/// `Σ_{i∈P} (1 - f_i + f_j)_+`.
pub(crate) fn column_hinge(f: &[f64], labels: &PseudoLabels, j: usize) -> f64 {
    labels
        .positives()
        .iter()
        .map(|&i| (1.0 - f[i] + f[j]).max(0.0))
        .sum()
}

pub(crate) struct WeightProblem<'a> {
    pub s: &'a ScoreMatrix,
    pub labels: &'a PseudoLabels,
    pub lambda: f64,
    pub cap: Option<f64>,
    edges: Vec<Edge>,
    row_sq_norms: Vec<f64>,
}

impl<'a> WeightProblem<'a> {
    pub fn new(
        s: &'a ScoreMatrix,
        a: &NeighborMatrix,
        labels: &'a PseudoLabels,
        lambda: f64,
        cap: Option<f64>,
    ) -> Self {
        let row_sq_norms = s.data().outer_iter().map(|r| r.dot(&r)).collect();
        WeightProblem {
            s,
            labels,
            lambda,
            cap,
            edges: symmetric_edges(a),
            row_sq_norms,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.s.n_rows()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn scores(&self, w: &Array2<f64>) -> Vec<f64> {
        scores(w, self.s)
    }

    pub fn smoothness(&self, f: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|e| {
                let d = f[e.i] - f[e.j];
                e.weight * d * d
            })
            .sum()
    }

    /// Score-space gradient of the smoothness term, `4 L f` with `L` the
    /// Laplacian of `(A + Aᵀ)/2`.
    pub fn smoothness_gradient(&self, f: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; f.len()];
        for e in &self.edges {
            let t = 2.0 * e.weight * (f[e.i] - f[e.j]);
            g[e.i] += t;
            g[e.j] -= t;
        }
        g
    }

    pub fn push(&self, f: &[f64]) -> f64 {
        push_with_argmax(f, self.labels).0
    }

    pub fn value_at(&self, f: &[f64]) -> f64 {
        self.smoothness(f) + self.lambda * self.push(f)
    }

    pub fn value(&self, w: &Array2<f64>) -> f64 {
        self.value_at(&self.scores(w))
    }

    /// Lifts a score-space gradient to weight space: row `r` is `g_r s_r`.
    pub fn lift(&self, g: &[f64]) -> Array2<f64> {
        let mut out = self.s.data().to_owned();
        for (mut row, &gr) in out.axis_iter_mut(Axis(0)).zip(g) {
            row.mapv_inplace(|x| x * gr);
        }
        out
    }

    /// Weight-space inner product of two lifted score-space gradients.
    pub fn lifted_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.row_sq_norms)
            .map(|((x, y), n)| x * y * n)
            .sum()
    }

    /// Upper bound on the Lipschitz constant of the weight-space smoothness gradient.
    pub fn smoothness_lipschitz(&self) -> f64 {
        let mut degree = vec![0.0; self.n_rows()];
        for e in &self.edges {
            degree[e.i] += e.weight;
            degree[e.j] += e.weight;
        }
        // Gershgorin on the Laplacian of A + Aᵀ, times ‖s_r‖² for the lift
        let max_deg = degree.iter().copied().fold(0.0, f64::max);
        let max_norm = self.row_sq_norms.iter().copied().fold(0.0, f64::max);
        (4.0 * max_deg * max_norm).max(1e-12)
    }

    pub fn max_row_sq_norm(&self) -> f64 {
        self.row_sq_norms.iter().copied().fold(0.0, f64::max)
    }

    pub fn project(&self, w: &mut Array2<f64>) {
        for mut row in w.axis_iter_mut(Axis(0)) {
            let projected = project_row(row.view(), self.cap);
            for (x, p) in row.iter_mut().zip(projected) {
                *x = p;
            }
        }
    }
}

/// Projection onto `{w ≥ 0, Σw ≤ B}` (just `w ≥ 0` without a cap). The
/// result satisfies the cap exactly in floating point.
pub(crate) fn project_row(v: ArrayView1<f64>, cap: Option<f64>) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let Some(b) = cap else {
        return clipped;
    };
    let sum: f64 = clipped.iter().sum();
    if sum <= b {
        return clipped;
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / b).collect();
    let mut out: Vec<f64> = simplex_project(&scaled)
        .into_iter()
        .map(|x| x * b)
        .collect();
    enforce_cap(&mut out, b);
    out
}

/// Shrinks `w` until its floating-point sum is at most `b`.
pub(crate) fn enforce_cap(w: &mut [f64], b: f64) {
    let mut sum: f64 = w.iter().sum();
    let mut factor = 1.0 - f64::EPSILON;
    while sum > b {
        for x in w.iter_mut() {
            *x *= factor;
        }
        sum = w.iter().sum();
        factor = 1.0 - (1.0 - factor) * 2.0;
    }
}
