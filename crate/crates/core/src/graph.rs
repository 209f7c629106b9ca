//! Adaptive neighbor assignment over aggregated scores.
//!
//! Row `i` of the neighbor matrix minimizes
//! `Σ_j d_ij a_ij + γ_i Σ_j a_ij²` over the probability simplex, where
//! `d_ij = (f_i - f_j)²`. Completing the square turns this into a Euclidean
//! projection of `-d_i / (2γ_i)` onto the simplex.

use crate::error::{Error, Result};

/// Squared score gaps `(f_i - f_j)²` to each candidate `j` of row `i`.
pub fn score_distances(f: &[f64], candidates: &[usize], i: usize) -> Vec<f64> {
    debug_assert!(
        !candidates.contains(&i),
        "row {i} listed as its own candidate"
    );
    candidates
        .iter()
        .map(|&j| {
            let diff = f[i] - f[j];
            diff * diff
        })
        .collect()
}

/// Euclidean projection onto `{a : Σa = 1, a ≥ 0}` by sort-and-threshold.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    // the projection commutes with shifts along 1; anchoring the maximum at 0
    // keeps the threshold arithmetic well conditioned for huge |v|
    let top = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = v.iter().map(|x| x - top).collect();
    let mut sorted = shifted.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    shifted.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Exact minimizer of one neighbor row for fixed distances.
pub fn update_neighbors(distances: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!(
            "gamma must be positive and finite, got {gamma}"
        )));
    }
    if distances.is_empty() {
        return Err(Error::domain("neighbor row without candidates"));
    }
    if distances.iter().all(|&d| d == 0.0) {
        let n = distances.len() as f64;
        return Ok(vec![1.0 / n; distances.len()]);
    }
    let scaled: Vec<f64> = distances.iter().map(|d| -d / (2.0 * gamma)).collect();
    Ok(simplex_project(&scaled))
}

/// Row objective `Σ d a + γ Σ a²`.
pub fn row_objective(distances: &[f64], a: &[f64], gamma: f64) -> f64 {
    distances
        .iter()
        .zip(a)
        .map(|(d, a)| d * a + gamma * a * a)
        .sum()
}

fn support(a: &[f64]) -> usize {
    a.iter().filter(|&&x| x > 0.0).count()
}

const GAMMA_NUDGE: f64 = 1e-12;

/// Regularizer giving [`update_neighbors`] exactly `k` nonzero entries:
/// `γ = (k·d_(k+1) - Σ_{j≤k} d_(j)) / 2` on the ascending distances. When
/// `d_(k) = d_(k+1)` no γ yields exactly `k`; the smallest γ whose support
/// reaches `k` is returned instead (the whole tie group enters together).
pub fn gamma_for_k(distances: &[f64], k: usize) -> Result<f64> {
    let n = distances.len();
    if k == 0 || k >= n {
        return Err(Error::domain(format!(
            "k = {k} outside [1, {}) for {n} candidates",
            n
        )));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::domain("distances must be finite and nonnegative"));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    // γ at which an entry with distance sorted[idx] sits exactly on the threshold
    let boundary = |idx: usize| -> f64 {
        let head: f64 = sorted[..idx].iter().sum();
        (idx as f64 * sorted[idx] - head) / 2.0
    };

    if sorted[k - 1] < sorted[k] {
        let mut gamma = boundary(k);
        if gamma <= 0.0 {
            gamma = GAMMA_NUDGE;
        }
        // rounding can leave the (k+1)-th entry a hair above zero; back off
        let mut step = 1e-12;
        for _ in 0..60 {
            let a = update_neighbors(distances, gamma)?;
            if support(&a) == k {
                return Ok(gamma);
            }
            gamma *= 1.0 - step;
            step *= 2.0;
        }
        return Ok(gamma);
    }

    // tie across the k-th position: enter just past the first tied entry
    let tie = sorted[k - 1];
    let below = sorted.iter().take_while(|&&d| d < tie).count();
    let base = boundary(below).max(0.0);
    let mut nudge = GAMMA_NUDGE.max(base * 1e-12);
    for _ in 0..60 {
        let gamma = base + nudge;
        let a = update_neighbors(distances, gamma)?;
        if support(&a) >= k {
            return Ok(gamma);
        }
        nudge *= 2.0;
    }
    Ok(base + nudge)
}

/// How neighbor regularizers are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaMode {
    /// One γ shared by every row.
    Global(f64),
    /// Per-row γ from [`gamma_for_k`], clamped to the candidate count.
    PerRow { k: usize },
}

impl GammaMode {
    /// Regularizer of every row given the scores the graph is first built from.
    pub fn resolve(&self, f: &[f64], candidates: &[Vec<usize>]) -> Result<Vec<f64>> {
        match *self {
            GammaMode::Global(g) => {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(Error::domain(format!("gamma must be positive, got {g}")));
                }
                Ok(vec![g; candidates.len()])
            }
            GammaMode::PerRow { k } => candidates
                .iter()
                .enumerate()
                .map(|(i, cand)| {
                    if cand.len() < 2 {
                        // a single candidate always gets probability 1
                        return Ok(1.0);
                    }
                    let k = k.clamp(1, cand.len() - 1);
                    gamma_for_k(&score_distances(f, cand, i), k)
                })
                .collect(),
        }
    }
}

/// The `k` nearest rows of every row (Euclidean, ties by index), self excluded.
pub fn candidate_sets(rows: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = rows.len();
    let k = k.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = rows[i]
                        .iter()
                        .zip(&rows[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (d, j)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut cand: Vec<usize> = others.into_iter().take(k).map(|(_, j)| j).collect();
            cand.sort_unstable();
            cand
        })
        .collect()
}

/// Row-stochastic neighbor probabilities over per-row candidate sets.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborMatrix {
    candidates: Vec<Vec<usize>>,
    rows: Vec<Vec<f64>>,
    gamma: Vec<f64>,
}

impl NeighborMatrix {
    /// Uniform probabilities over each candidate set.
    pub fn uniform(candidates: Vec<Vec<usize>>, gamma: Vec<f64>) -> Result<Self> {
        let rows = candidates
            .iter()
            .map(|c| vec![1.0 / c.len() as f64; c.len()])
            .collect();
        Self::from_parts(candidates, rows, gamma)
    }

    pub fn from_parts(
        candidates: Vec<Vec<usize>>,
        rows: Vec<Vec<f64>>,
        gamma: Vec<f64>,
    ) -> Result<Self> {
        let n = candidates.len();
        if rows.len() != n || gamma.len() != n {
            return Err(Error::domain("neighbor matrix parts disagree in row count"));
        }
        for (i, (cand, row)) in candidates.iter().zip(&rows).enumerate() {
            if cand.is_empty() || cand.len() != row.len() {
                return Err(Error::domain(format!("row {i}: malformed candidate set")));
            }
            if cand.iter().any(|&j| j == i || j >= n) {
                return Err(Error::domain(format!("row {i}: invalid candidate index")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::domain(format!(
                    "row {i} is not a probability vector"
                )));
            }
        }
        if gamma.iter().any(|&g| !(g > 0.0)) {
            return Err(Error::domain("gamma must be positive"));
        }
        Ok(NeighborMatrix {
            candidates,
            rows,
            gamma,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn candidates(&self, i: usize) -> &[usize] {
        &self.candidates[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `a_ij`, zero outside the candidate set.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.candidates[i]
            .iter()
            .position(|&c| c == j)
            .map_or(0.0, |p| self.rows[i][p])
    }

    /// Iterates `(i, j, a_ij)` over stored entries.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.candidates
            .iter()
            .enumerate()
            .flat_map(move |(i, cand)| {
                cand.iter()
                    .zip(&self.rows[i])
                    .map(move |(&j, &a)| (i, j, a))
            })
    }

    /// `Σ_i γ_i Σ_j a_ij²`.
    pub fn regularizer(&self) -> f64 {
        self.rows
            .iter()
            .zip(&self.gamma)
            .map(|(row, g)| g * row.iter().map(|a| a * a).sum::<f64>())
            .sum()
    }

    /// Closed-form update of every row for the scores `f`, keeping γ and candidates.
    pub fn updated(&self, f: &[f64]) -> Result<Self> {
        let rows = self
            .candidates
            .iter()
            .enumerate()
            .map(|(i, cand)| update_neighbors(&score_distances(f, cand, i), self.gamma[i]))
            .collect::<Result<Vec<_>>>()?;
        Ok(NeighborMatrix {
            candidates: self.candidates.clone(),
            rows,
            gamma: self.gamma.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn distances_examples() {
        assert_eq!(
            score_distances(&[1.0, 1.0, 1.0], &[1, 2], 0),
            vec![0.0, 0.0]
        );
        assert_eq!(score_distances(&[2.0, 0.5], &[1], 0), vec![2.25]);
        let f = [0.3, 1.2, -0.4];
        let shifted: Vec<f64> = f.iter().map(|x| x + 5.0).collect();
        let a = score_distances(&f, &[1, 2], 0);
        let b = score_distances(&shifted, &[1, 2], 0);
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        assert_eq!(simplex_project(&[0.5, 0.5]), vec![0.5, 0.5]);
        let p = simplex_project(&[0.9, 0.6, 0.1]);
        assert_abs_diff_eq!(p[0], 0.65, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.35, epsilon = 1e-12);
        assert_eq!(p[2], 0.0);
        for c in [-3.0, 0.0, 2.5, 1e6] {
            let p = simplex_project(&[c; 5]);
            for x in p {
                assert_abs_diff_eq!(x, 0.2, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_distances_give_exact_uniform() {
        assert_eq!(update_neighbors(&[0.0; 4], 1.0).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn update_examples() {
        assert_eq!(update_neighbors(&[0.0, 8.0], 1.0).unwrap(), vec![1.0, 0.0]);
        assert!(update_neighbors(&[1.0], 0.0).is_err());
        assert!(update_neighbors(&[1.0], -1.0).is_err());
    }

    #[test]
    fn gamma_for_k_examples() {
        let d = [0.0, 1.0, 2.0, 3.0];
        let g = gamma_for_k(&d, 2).unwrap();
        assert_abs_diff_eq!(g, 1.5, epsilon = 1e-9);
        assert_eq!(support(&update_neighbors(&d, g).unwrap()), 2);

        let g = gamma_for_k(&[0.7; 5], 2).unwrap();
        assert_eq!(support(&update_neighbors(&[0.7; 5], g).unwrap()), 5);

        let d = [0.4, 0.1, 0.9];
        let g = gamma_for_k(&d, 1).unwrap();
        assert_eq!(update_neighbors(&d, g).unwrap(), vec![0.0, 1.0, 0.0]);

        assert!(gamma_for_k(&d, 0).is_err());
        assert!(gamma_for_k(&d, 3).is_err());
    }

    #[test]
    fn gamma_for_k_tie_fallback() {
        // k = 2 lands inside the tie {1, 1, 1}: all three enter together
        let d = [0.0, 1.0, 1.0, 1.0, 5.0];
        let g = gamma_for_k(&d, 2).unwrap();
        assert_eq!(support(&update_neighbors(&d, g).unwrap()), 4);
    }

    #[test]
    fn candidate_sets_exclude_self_and_pick_nearest() {
        let rows = vec![vec![0.0], vec![0.1], vec![0.5], vec![0.2]];
        let c = candidate_sets(&rows, 2);
        assert_eq!(c[0], vec![1, 3]);
        assert_eq!(c[2], vec![1, 3]);
        let all = candidate_sets(&rows, 50);
        assert_eq!(all[1], vec![0, 2, 3]);
    }

    #[test]
    fn neighbor_matrix_update_and_access() {
        let cands = vec![vec![1, 2], vec![0, 2], vec![0, 1]];
        let nm = NeighborMatrix::uniform(cands, vec![1.0; 3]).unwrap();
        assert_eq!(nm.get(0, 1), 0.5);
        assert_eq!(nm.get(0, 0), 0.0);
        assert_abs_diff_eq!(nm.regularizer(), 1.5, epsilon = 1e-15);
        let up = nm.updated(&[0.0, 0.0, 10.0]).unwrap();
        assert_eq!(up.row(0), &[1.0, 0.0]);
        assert_eq!(up.entries().count(), 6);
    }

    #[test]
    fn neighbor_matrix_validation() {
        assert!(NeighborMatrix::from_parts(vec![vec![0]], vec![vec![1.0]], vec![1.0]).is_err());
        assert!(NeighborMatrix::from_parts(
            vec![vec![1], vec![0]],
            vec![vec![0.5], vec![1.0]],
            vec![1.0, 1.0]
        )
        .is_err());
    }
}
