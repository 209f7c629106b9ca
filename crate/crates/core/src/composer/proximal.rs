//! Operator-splitting (ADMM) weight update.
//!
//! The push loss is written as a support function of pairwise margins,
//! `max_j (1/p) Σ_i (z_ij)_+ = σ_S(z)` with
//! `S = {Y : 0 ≤ Y_ij ≤ θ_j / p, θ ∈ Δ}` and `z_ij = 1 - f_i + f_j`.
//! Its proximal map follows from Moreau decomposition,
//! `prox_{ασ_S}(v) = v - Π_{αS}(v)`. With a single positive, `S` is the
//! nonnegative part of the unit ℓ1 ball and this is the ℓ∞-norm prox.

use ndarray::Array2;

use super::problem::WeightProblem;
use super::reference::Outcome;
use super::InnerConfig;
use crate::graph::simplex_project;

/// Euclidean projection onto the ℓ1 ball of the given radius.
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    assert!(radius >= 0.0, "negative radius");
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius == 0.0 {
        return vec![0.0; v.len()];
    }
    let magnitudes: Vec<f64> = v.iter().map(|x| x.abs() / radius).collect();
    simplex_project(&magnitudes)
        .into_iter()
        .zip(v)
        .map(|(m, x)| m * radius * x.signum())
        .collect()
}

/// `prox_{λ‖·‖∞}(v) = v - Π_{λ-ℓ1-ball}(v)`.
pub fn prox_linf(v: &[f64], lambda: f64) -> Vec<f64> {
    let p = project_l1_ball(v, lambda);
    v.iter().zip(p).map(|(x, y)| x - y).collect()
}

/// Solves `Σ_i (u_i - b)_+ = eta` for `b ≥ 0` given the positive parts of a
/// column sorted descending.
fn column_cap(sorted_desc: &[f64], eta: f64) -> f64 {
    let mut prefix = 0.0;
    for (t, &u) in sorted_desc.iter().enumerate() {
        prefix += u;
        let next = sorted_desc.get(t + 1).copied().unwrap_or(0.0);
        let b = (prefix - eta) / (t + 1) as f64;
        if b >= next {
            return b.max(0.0);
        }
    }
    0.0
}

/// Projection onto `α S` for a `p × q` margin matrix stored row-major
/// (rows are positives, columns negatives).
pub fn project_push_set(v: &[f64], p: usize, q: usize, alpha: f64) -> Vec<f64> {
    assert_eq!(v.len(), p * q);
    let c = alpha / p as f64;
    let columns: Vec<Vec<f64>> = (0..q)
        .map(|b| {
            let mut col: Vec<f64> = (0..p).map(|a| v[a * q + b].max(0.0)).collect();
            col.sort_by(|x, y| y.total_cmp(x));
            col
        })
        .collect();
    let tops: Vec<f64> = columns
        .iter()
        .map(|c| c.first().copied().unwrap_or(0.0))
        .collect();
    let caps: Vec<f64> = if tops.iter().sum::<f64>() <= c {
        tops
    } else {
        let total = |mu: f64| -> f64 { columns.iter().map(|col| column_cap(col, mu / 2.0)).sum() };
        let mut lo = 0.0;
        let mut hi = 2.0
            * columns
                .iter()
                .map(|col| col.iter().sum::<f64>())
                .fold(0.0, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if total(mid) > c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        columns
            .iter()
            .map(|col| column_cap(col, hi / 2.0))
            .collect()
    };
    let mut out = vec![0.0; p * q];
    for a in 0..p {
        for b in 0..q {
            out[a * q + b] = v[a * q + b].clamp(0.0, caps[b]);
        }
    }
    out
}

/// `prox_{ασ_S}(v)` by Moreau decomposition.
pub fn prox_push(v: &[f64], p: usize, q: usize, alpha: f64) -> Vec<f64> {
    let proj = project_push_set(v, p, q, alpha);
    v.iter().zip(proj).map(|(x, y)| x - y).collect()
}

/// `σ_S(z) = max_j (1/p) Σ_i (z_ij)_+`.
pub fn push_support(z: &[f64], p: usize, q: usize) -> f64 {
    (0..q)
        .map(|b| (0..p).map(|a| z[a * q + b].max(0.0)).sum::<f64>() / p as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

struct Margins<'a> {
    positives: &'a [usize],
    negatives: &'a [usize],
}

impl Margins<'_> {
    fn len(&self) -> usize {
        self.positives.len() * self.negatives.len()
    }

    /// `K f + 1`.
    fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for &i in self.positives {
            for &j in self.negatives {
                out.push(1.0 - f[i] + f[j]);
            }
        }
        out
    }

    /// `Kᵀ r` in score space.
    fn adjoint(&self, r: &[f64], n: usize) -> Vec<f64> {
        let q = self.negatives.len();
        let mut out = vec![0.0; n];
        for (a, &i) in self.positives.iter().enumerate() {
            for (b, &j) in self.negatives.iter().enumerate() {
                let x = r[a * q + b];
                out[i] -= x;
                out[j] += x;
            }
        }
        out
    }
}

const INNER_ITERS: usize = 2000;
const INNER_TOL: f64 = 1e-13;
const ABS_TOL: f64 = 1e-10;

pub(crate) struct ProximalOutcome {
    pub outcome: Outcome,
    pub converged: bool,
}

pub(crate) fn solve(
    problem: &WeightProblem,
    init: &Array2<f64>,
    cfg: &InnerConfig,
) -> ProximalOutcome {
    let labels = problem.labels;
    let k = Margins {
        positives: labels.positives(),
        negatives: labels.negatives(),
    };
    let (p, q) = (labels.positives().len(), labels.negatives().len());
    let n = problem.n_rows();

    let mut w = init.clone();
    let mut f = problem.scores(&w);
    let mut z = k.apply(&f);
    let mut u = vec![0.0; k.len()];
    let mut rho = 1.0;

    let mut best_value = problem.value_at(&f);
    let mut best_w = w.clone();
    let mut converged = false;
    let mut iterations = 0;

    let smooth_lip = problem.smoothness_lipschitz();
    let max_norm = problem.max_row_sq_norm();

    while iterations < cfg.max_iters {
        iterations += 1;

        // W-block: smoothness + (ρ/2)‖Kf + 1 - z + u‖² over the feasible set
        let target: Vec<f64> = z.iter().zip(&u).map(|(z, u)| z - u).collect();
        let lip = smooth_lip + rho * (p + q) as f64 * max_norm;
        w = inner_solve(problem, &k, &w, &target, rho, 1.0 / lip);
        f = problem.scores(&w);

        // z-block: prox of (λ/ρ) σ_S
        let kf = k.apply(&f);
        let v: Vec<f64> = kf.iter().zip(&u).map(|(a, b)| a + b).collect();
        let z_old = std::mem::replace(&mut z, prox_push(&v, p, q, problem.lambda / rho));

        let mut primal_sq = 0.0;
        for ((ui, kfi), zi) in u.iter_mut().zip(&kf).zip(&z) {
            let r = kfi - zi;
            *ui += r;
            primal_sq += r * r;
        }
        let dz: Vec<f64> = z.iter().zip(&z_old).map(|(a, b)| a - b).collect();
        let kt_dz = k.adjoint(&dz, n);
        let dual = rho * problem.lifted_dot(&kt_dz, &kt_dz).sqrt();
        let primal = primal_sq.sqrt();

        let value = problem.value_at(&f);
        if value < best_value {
            best_value = value;
            best_w = w.clone();
        }

        let scale_pri = kf
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
            .max(z.iter().map(|x| x * x).sum::<f64>().sqrt());
        let kt_u = k.adjoint(&u, n);
        let scale_dual = rho * problem.lifted_dot(&kt_u, &kt_u).sqrt();
        let eps_pri = ABS_TOL * (k.len() as f64).sqrt() + cfg.tol * scale_pri;
        let eps_dual = ABS_TOL * ((n * problem.s.n_cols()) as f64).sqrt() + cfg.tol * scale_dual;
        if primal <= eps_pri && dual <= eps_dual {
            converged = true;
            break;
        }

        // residual balancing
        if primal > 10.0 * dual {
            rho *= 2.0;
            u.iter_mut().for_each(|x| *x /= 2.0);
        } else if dual > 10.0 * primal {
            rho /= 2.0;
            u.iter_mut().for_each(|x| *x *= 2.0);
        }
    }

    ProximalOutcome {
        outcome: Outcome {
            weights: best_w,
            value: best_value,
            iterations,
        },
        converged,
    }
}

/// Accelerated projected gradient on the W-block, warm-started at `start`.
fn inner_solve(
    problem: &WeightProblem,
    k: &Margins,
    start: &Array2<f64>,
    target: &[f64],
    rho: f64,
    step: f64,
) -> Array2<f64> {
    let n = problem.n_rows();
    let mut x = start.clone();
    let mut y = start.clone();
    let mut momentum: f64 = 1.0;
    for _ in 0..INNER_ITERS {
        let fy = problem.scores(&y);
        let mut g = problem.smoothness_gradient(&fy);
        let resid: Vec<f64> = k
            .apply(&fy)
            .iter()
            .zip(target)
            .map(|(a, b)| rho * (a - b))
            .collect();
        for (gi, ki) in g.iter_mut().zip(k.adjoint(&resid, n)) {
            *gi += ki;
        }
        let mut next = &y - &(&problem.lift(&g) * step);
        problem.project(&mut next);
        let delta = &next - &x;
        // gradient-based restart keeps the accelerated iteration monotone in practice
        let restart = (&y - &next)
            .iter()
            .zip(delta.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            > 0.0;
        if restart {
            momentum = 1.0;
        }
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        let beta = (momentum - 1.0) / next_momentum;
        let change = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let size = next.iter().map(|d| d * d).sum::<f64>().sqrt();
        y = &next + &(&delta * beta);
        x = next;
        momentum = next_momentum;
        if change <= INNER_TOL * size.max(1.0) {
            break;
        }
    }
    x
}
