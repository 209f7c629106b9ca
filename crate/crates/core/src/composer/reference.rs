//! Exact weight update.
//!
//! The subproblem depends on `W` only through `f`, and the scores reachable
//! from a row with `w ≥ 0, ‖w‖₁ ≤ B` fill the interval
//! `[B·min(0, min s), B·max(0, max s)]`. The score-space problem is solved in
//! epigraph form
//!
//! ```text
//! min fᵀ L f + λ t   s.t.  h_ab ≥ 1 - f_a + f_b,  h ≥ 0,  t ≥ (1/p) Σ_a h_ab,  lo ≤ f ≤ hi
//! ```
//!
//! by a primal-dual interior-point method with Mehrotra correction. The hinge
//! block of each Newton system is diagonal plus rank one per negative and is
//! eliminated in closed form, leaving a dense system over `(f, t)`. Optimal
//! scores are lifted back to weights row by row, moving each initial row along
//! a segment toward a vertex of its feasible set.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array2, Axis};

use super::problem::{enforce_cap, WeightProblem};
use super::InnerConfig;

const STEP_FRACTION: f64 = 0.99;
const FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub weights: Array2<f64>,
    pub value: f64,
    pub iterations: usize,
}

pub(crate) fn solve(problem: &WeightProblem, init: &Array2<f64>, cfg: &InnerConfig) -> Outcome {
    let f0 = problem.scores(init);
    let init_value = problem.value_at(&f0);
    let qp = ScoreQp::new(problem);
    let (target, iterations) = qp.solve(&f0, cfg);

    let mut w = init.clone();
    for ((mut row, s), &phi) in w
        .axis_iter_mut(Axis(0))
        .zip(problem.s.data().outer_iter())
        .zip(&target)
    {
        let mut buf = row.to_vec();
        lift_row(&mut buf, &s.to_vec(), phi, problem.cap);
        row.iter_mut().zip(buf).for_each(|(x, v)| *x = v);
    }
    let value = problem.value(&w);
    if value <= init_value {
        Outcome {
            weights: w,
            value,
            iterations,
        }
    } else {
        Outcome {
            weights: init.clone(),
            value: init_value,
            iterations,
        }
    }
}

/// Range of `wᵀs` over `w ≥ 0` with `‖w‖₁ ≤ B` (no upper norm bound without a cap).
pub(crate) fn score_interval(s: &[f64], cap: Option<f64>) -> (f64, f64) {
    let hi = s.iter().copied().fold(0.0, f64::max);
    let lo = s.iter().copied().fold(0.0, f64::min);
    match cap {
        Some(b) => (b * lo, b * hi),
        None => (
            if lo < 0.0 { f64::NEG_INFINITY } else { 0.0 },
            if hi > 0.0 { f64::INFINITY } else { 0.0 },
        ),
    }
}

/// Moves `w` so that `wᵀs` equals `target`, staying feasible.
pub(crate) fn lift_row(w: &mut [f64], s: &[f64], target: f64, cap: Option<f64>) {
    let current: f64 = w.iter().zip(s).map(|(a, b)| a * b).sum();
    let delta = target - current;
    if delta == 0.0 || !delta.is_finite() {
        return;
    }
    let pick = |better: fn(f64, f64) -> bool| {
        (0..s.len()).fold(0, |k, c| if better(s[c], s[k]) { c } else { k })
    };
    let k = if delta > 0.0 {
        pick(|a, b| a > b)
    } else {
        pick(|a, b| a < b)
    };
    let toward_k = (delta > 0.0 && s[k] > 0.0) || (delta < 0.0 && s[k] < 0.0);
    match cap {
        Some(b) => {
            // vertex b·e_k, or the origin when no coordinate moves the score that way
            let vertex_value = if toward_k { b * s[k] } else { 0.0 };
            let span = vertex_value - current;
            if span == 0.0 {
                return;
            }
            let t = (delta / span).clamp(0.0, 1.0);
            for x in w.iter_mut() {
                *x *= 1.0 - t;
            }
            if toward_k {
                w[k] += t * b;
            }
        }
        None => {
            if toward_k {
                w[k] += delta / s[k];
            } else if current != 0.0 {
                let factor = (target / current).clamp(0.0, 1.0);
                for x in w.iter_mut() {
                    *x *= factor;
                }
            }
        }
    }
    for x in w.iter_mut() {
        *x = x.max(0.0);
    }
    if let Some(b) = cap {
        enforce_cap(w, b);
    }
}

/// Score-space epigraph problem over the rows whose score is not pinned.
struct ScoreQp {
    /// Free-variable slot of every row.
    slot: Vec<Option<usize>>,
    /// Value of every pinned row.
    pinned: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    lower: Vec<usize>,
    upper: Vec<usize>,
    hess: DMatrix<f64>,
    lin: DVector<f64>,
    lambda: f64,
    positives: Vec<usize>,
    negatives: Vec<usize>,
    /// Right-hand side of each pair constraint after substituting pinned rows.
    pair_rhs: Vec<f64>,
}

impl ScoreQp {
    fn new(problem: &WeightProblem) -> Self {
        let n = problem.n_rows();
        let mut slot = vec![None; n];
        let mut pinned = vec![0.0; n];
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (i, s) in problem.s.data().outer_iter().enumerate() {
            let (a, b) = score_interval(&s.to_vec(), problem.cap);
            if b > a {
                slot[i] = Some(lo.len());
                lo.push(a);
                hi.push(b);
            } else {
                pinned[i] = a;
            }
        }
        let nf = lo.len();
        let lower = (0..nf).filter(|&k| lo[k].is_finite()).collect();
        let upper = (0..nf).filter(|&k| hi[k].is_finite()).collect();

        // fᵀ L f with L the Laplacian of A + Aᵀ; pinned rows contribute linear terms
        let mut hess = DMatrix::zeros(nf, nf);
        let mut lin = DVector::zeros(nf);
        for e in problem.edges() {
            let w2 = 2.0 * e.weight;
            match (slot[e.i], slot[e.j]) {
                (Some(a), Some(b)) => {
                    hess[(a, a)] += w2;
                    hess[(b, b)] += w2;
                    hess[(a, b)] -= w2;
                    hess[(b, a)] -= w2;
                }
                (Some(a), None) => {
                    hess[(a, a)] += w2;
                    lin[a] -= w2 * pinned[e.j];
                }
                (None, Some(b)) => {
                    hess[(b, b)] += w2;
                    lin[b] -= w2 * pinned[e.i];
                }
                (None, None) => {}
            }
        }

        let positives = problem.labels.positives().to_vec();
        let negatives = problem.labels.negatives().to_vec();
        let mut pair_rhs = Vec::with_capacity(positives.len() * negatives.len());
        for &i in &positives {
            for &j in &negatives {
                let fi = if slot[i].is_some() { 0.0 } else { pinned[i] };
                let fj = if slot[j].is_some() { 0.0 } else { pinned[j] };
                pair_rhs.push(1.0 - fi + fj);
            }
        }
        ScoreQp {
            slot,
            pinned,
            lo,
            hi,
            lower,
            upper,
            hess,
            lin,
            lambda: problem.lambda,
            positives,
            negatives,
            pair_rhs,
        }
    }

    fn nf(&self) -> usize {
        self.lo.len()
    }

    fn n_pairs(&self) -> usize {
        self.positives.len() * self.negatives.len()
    }

    /// Layout of `x`: free scores, then hinge slacks `h_ab` (row-major over
    /// positives × negatives), then `t`.
    fn n_vars(&self) -> usize {
        self.nf() + self.n_pairs() + 1
    }

    /// Layout of constraints: pair, hinge sign, column, lower, upper.
    fn n_constraints(&self) -> usize {
        2 * self.n_pairs() + self.negatives.len() + self.lower.len() + self.upper.len()
    }

    fn rhs(&self) -> Vec<f64> {
        let mut r = self.pair_rhs.clone();
        r.extend(std::iter::repeat_n(
            0.0,
            self.n_pairs() + self.negatives.len(),
        ));
        r.extend(self.lower.iter().map(|&k| self.lo[k]));
        r.extend(self.upper.iter().map(|&k| -self.hi[k]));
        r
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let (nf, q) = (self.nf(), self.negatives.len());
        let inv_p = 1.0 / self.positives.len() as f64;
        let t = x[self.n_vars() - 1];
        let mut out = Vec::with_capacity(self.n_constraints());
        for &i in &self.positives {
            for &j in &self.negatives {
                let h = x[nf + out.len()];
                let fi = self.slot[i].map_or(0.0, |a| x[a]);
                let fj = self.slot[j].map_or(0.0, |b| x[b]);
                out.push(h + fi - fj);
            }
        }
        out.extend_from_slice(&x[nf..nf + self.n_pairs()]);
        for b in 0..q {
            let col: f64 = (0..self.positives.len()).map(|a| x[nf + a * q + b]).sum();
            out.push(t - inv_p * col);
        }
        out.extend(self.lower.iter().map(|&k| x[k]));
        out.extend(self.upper.iter().map(|&k| -x[k]));
        out
    }

    fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        let (nf, np, q) = (self.nf(), self.n_pairs(), self.negatives.len());
        let inv_p = 1.0 / self.positives.len() as f64;
        let mut out = vec![0.0; self.n_vars()];
        for (a, &i) in self.positives.iter().enumerate() {
            for (b, &j) in self.negatives.iter().enumerate() {
                let ab = a * q + b;
                let zp = z[ab];
                if let Some(s) = self.slot[i] {
                    out[s] += zp;
                }
                if let Some(s) = self.slot[j] {
                    out[s] -= zp;
                }
                out[nf + ab] += zp + z[np + ab] - inv_p * z[2 * np + b];
            }
        }
        let t = self.n_vars() - 1;
        out[t] += z[2 * np..2 * np + q].iter().sum::<f64>();
        let base = 2 * np + q;
        for (c, &k) in self.lower.iter().enumerate() {
            out[k] += z[base + c];
        }
        let base = base + self.lower.len();
        for (c, &k) in self.upper.iter().enumerate() {
            out[k] -= z[base + c];
        }
        out
    }

    /// Gradient of `½ fᵀ H f + linᵀ f + λ t`.
    fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        let f = DVector::from_column_slice(&x[..nf]);
        let g = &self.hess * &f + &self.lin;
        let mut out = vec![0.0; self.n_vars()];
        out[..nf].copy_from_slice(g.as_slice());
        out[self.n_vars() - 1] = self.lambda;
        out
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let nf = self.nf();
        let f = DVector::from_column_slice(&x[..nf]);
        0.5 * f.dot(&(&self.hess * &f)) + self.lin.dot(&f) + self.lambda * x[self.n_vars() - 1]
    }

    /// Solves `(H + Aᵀ diag(d) A) dx = rhs`; `None` if the reduced system is
    /// numerically singular.
    fn newton(&self, d: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
        let (nf, np, p, q) = (
            self.nf(),
            self.n_pairs(),
            self.positives.len(),
            self.negatives.len(),
        );
        let ny = nf + 1;
        let t = nf;
        let u = 1.0 / p as f64;
        let (d1, d2, d3) = (&d[..np], &d[np..2 * np], &d[2 * np..2 * np + q]);

        let mut schur = DMatrix::zeros(ny, ny);
        schur.view_mut((0, 0), (nf, nf)).copy_from(&self.hess);
        let base = 2 * np + q;
        for (c, &k) in self.lower.iter().enumerate() {
            schur[(k, k)] += d[base + c];
        }
        let base = base + self.lower.len();
        for (c, &k) in self.upper.iter().enumerate() {
            schur[(k, k)] += d[base + c];
        }
        let mut ry = DVector::from_column_slice(&rhs[..nf]).push(rhs[nf + np]);

        let pos_slots: Vec<Option<usize>> = self.positives.iter().map(|&i| self.slot[i]).collect();
        let blocks: Vec<HingeBlock> = (0..q)
            .map(|b| {
                let delta: Vec<f64> = (0..p).map(|a| d1[a * q + b] + d2[a * q + b]).collect();
                HingeBlock::new(delta, d3[b], u)
            })
            .collect();

        // coupling of h_ab with (f, t): d1 at the positive's slot, -d1 at the
        // negative's slot, -d3·u at t
        let coupling = |b: usize| -> Vec<Vec<(usize, f64)>> {
            let neg_slot = self.slot[self.negatives[b]];
            (0..p)
                .map(|a| {
                    let w = d1[a * q + b];
                    let mut row = Vec::with_capacity(3);
                    if let Some(s) = pos_slots[a] {
                        row.push((s, w));
                    }
                    if let Some(s) = neg_slot {
                        row.push((s, -w));
                    }
                    row.push((t, -d3[b] * u));
                    row
                })
                .collect()
        };

        for (b, block) in blocks.iter().enumerate() {
            // Eliminating h from d1 (h + f_i - f_j)² + d2 h² leaves κ (f_i - f_j)²,
            // and the column term then leaves ω (t + u Σ β (f_i - f_j))². Both are
            // sums of nonnegative terms, so the reduced matrix stays positive.
            let neg_slot = self.slot[self.negatives[b]];
            let mut v: Vec<(usize, f64)> = vec![(t, 1.0)];
            let mut harmonic = 1.0 / d3[b];
            for a in 0..p {
                let (w1, w2) = (d1[a * q + b], d2[a * q + b]);
                let delta = w1 + w2;
                let kappa = w1 * w2 / delta;
                let beta = u * w1 / delta;
                harmonic += u * u / delta;
                if let Some(x) = pos_slots[a] {
                    v.push((x, beta));
                }
                if let Some(y) = neg_slot {
                    v.push((y, -beta));
                }
                match (pos_slots[a], neg_slot) {
                    (Some(x), Some(y)) => {
                        schur[(x, x)] += kappa;
                        schur[(y, y)] += kappa;
                        schur[(x, y)] -= kappa;
                        schur[(y, x)] -= kappa;
                    }
                    (Some(x), None) | (None, Some(x)) => schur[(x, x)] += kappa,
                    (None, None) => {}
                }
            }
            let omega = 1.0 / harmonic;
            for &(r, vr) in &v {
                for &(c, vc) in &v {
                    schur[(r, c)] += omega * vr * vc;
                }
            }

            let rows = coupling(b);
            let rh: Vec<f64> = (0..p).map(|a| rhs[nf + a * q + b]).collect();
            let m_rh = block.solve(&rh);
            for (a, row) in rows.iter().enumerate() {
                for &(r, val) in row {
                    ry[r] -= val * m_rh[a];
                }
            }
        }

        let dy = cholesky_solve(schur, &ry)?;

        let mut dx = vec![0.0; self.n_vars()];
        dx[..nf].copy_from_slice(&dy.as_slice()[..nf]);
        dx[nf + np] = dy[t];
        for (b, block) in blocks.iter().enumerate() {
            let rows = coupling(b);
            let v: Vec<f64> = (0..p)
                .map(|a| {
                    rhs[nf + a * q + b] - rows[a].iter().map(|&(c, val)| val * dy[c]).sum::<f64>()
                })
                .collect();
            for (a, x) in block.solve(&v).into_iter().enumerate() {
                dx[nf + a * q + b] = x;
            }
        }
        Some(dx)
    }

    fn starting_point(&self, f0: &[f64]) -> Vec<f64> {
        let nf = self.nf();
        let mut x = vec![0.0; self.n_vars()];
        for (i, s) in self.slot.iter().enumerate() {
            let Some(k) = *s else { continue };
            let (lo, hi) = (self.lo[k], self.hi[k]);
            x[k] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => {
                    let margin = 0.25 * (hi - lo);
                    f0[i].clamp(lo + margin, hi - margin)
                }
                (true, false) => f0[i].max(lo + 1.0),
                (false, true) => f0[i].min(hi - 1.0),
                (false, false) => f0[i],
            };
        }
        let score: Vec<f64> = (0..self.slot.len())
            .map(|row| self.slot[row].map_or(self.pinned[row], |k| x[k]))
            .collect();
        let q = self.negatives.len();
        let p = self.positives.len() as f64;
        let mut top = f64::NEG_INFINITY;
        for b in 0..q {
            let mut col = 0.0;
            for (a, &i) in self.positives.iter().enumerate() {
                let h = (1.0 - score[i] + score[self.negatives[b]]).max(0.0) + 1.0;
                x[nf + a * q + b] = h;
                col += h;
            }
            top = top.max(col / p);
        }
        let last = self.n_vars() - 1;
        x[last] = top + 1.0;
        x
    }

    /// Returns the optimal score of every row and the iteration count.
    fn solve(&self, f0: &[f64], cfg: &InnerConfig) -> (Vec<f64>, usize) {
        let m = self.n_constraints();
        let r = self.rhs();
        let mut x = self.starting_point(f0);
        let mut sl: Vec<f64> = self
            .apply(&x)
            .iter()
            .zip(&r)
            .map(|(ax, r)| (ax - r).max(1.0))
            .collect();
        let mut z = vec![1.0; m];
        let mut iterations = 0;

        while iterations < cfg.max_iters {
            let ax = self.apply(&x);
            let r_p: Vec<f64> = (0..m).map(|c| ax[c] - r[c] - sl[c]).collect();
            let grad = self.objective_gradient(&x);
            let atz = self.apply_transpose(&z);
            let r_d: Vec<f64> = grad.iter().zip(&atz).map(|(g, a)| g - a).collect();
            let gap: f64 = sl.iter().zip(&z).map(|(s, z)| s * z).sum();
            let obj = self.objective(&x);
            if inf_norm(&r_p) <= FEASIBILITY_TOL
                && inf_norm(&r_d) <= FEASIBILITY_TOL
                && gap <= cfg.tol * obj.abs().max(1.0)
            {
                break;
            }
            iterations += 1;
            let mu = gap / m as f64;
            let d: Vec<f64> = z.iter().zip(&sl).map(|(z, s)| z / s).collect();

            let direction = |r_c: &[f64]| {
                // rhs = -r_d - Aᵀ(S⁻¹ r_c + D r_p)
                let inner: Vec<f64> = (0..m).map(|c| r_c[c] / sl[c] + d[c] * r_p[c]).collect();
                let at = self.apply_transpose(&inner);
                let rhs: Vec<f64> = r_d.iter().zip(&at).map(|(a, b)| -a - b).collect();
                let dx = self.newton(&d, &rhs)?;
                let adx = self.apply(&dx);
                let ds: Vec<f64> = (0..m).map(|c| adx[c] + r_p[c]).collect();
                let dz: Vec<f64> = (0..m).map(|c| (-r_c[c] - z[c] * ds[c]) / sl[c]).collect();
                Some((dx, ds, dz))
            };

            let r_aff: Vec<f64> = sl.iter().zip(&z).map(|(s, z)| s * z).collect();
            // a singular reduced system means the iterate is as accurate as it gets
            let Some((_, ds_a, dz_a)) = direction(&r_aff) else {
                break;
            };
            let alpha_a = max_step(&sl, &ds_a).min(max_step(&z, &dz_a)).min(1.0);
            let mu_aff: f64 = (0..m)
                .map(|c| (sl[c] + alpha_a * ds_a[c]) * (z[c] + alpha_a * dz_a[c]))
                .sum::<f64>()
                / m as f64;
            let sigma = (mu_aff / mu).powi(3).min(1.0);

            let r_c: Vec<f64> = (0..m)
                .map(|c| sl[c] * z[c] + ds_a[c] * dz_a[c] - sigma * mu)
                .collect();
            let Some((dx, ds, dz)) = direction(&r_c) else {
                break;
            };
            let alpha = (STEP_FRACTION * max_step(&sl, &ds).min(max_step(&z, &dz))).min(1.0);
            for (v, dv) in x.iter_mut().zip(&dx) {
                *v += alpha * dv;
            }
            for (v, dv) in sl.iter_mut().zip(&ds) {
                *v += alpha * dv;
            }
            for (v, dv) in z.iter_mut().zip(&dz) {
                *v += alpha * dv;
            }
        }

        let f = (0..self.slot.len())
            .map(|i| match self.slot[i] {
                Some(k) => x[k].clamp(self.lo[k], self.hi[k]),
                None => self.pinned[i],
            })
            .collect();
        (f, iterations)
    }
}

/// `diag(δ) + ρ u² 11ᵀ`, inverted by Sherman-Morrison.
struct HingeBlock {
    inv_delta: Vec<f64>,
    coef: f64,
    u: f64,
}

impl HingeBlock {
    fn new(delta: Vec<f64>, rho: f64, u: f64) -> Self {
        let inv_delta: Vec<f64> = delta.iter().map(|d| 1.0 / d).collect();
        let s: f64 = inv_delta.iter().sum::<f64>() * u * u;
        HingeBlock {
            coef: rho / (1.0 + rho * s),
            inv_delta,
            u,
        }
    }

    fn solve(&self, v: &[f64]) -> Vec<f64> {
        let y: Vec<f64> = v.iter().zip(&self.inv_delta).map(|(v, i)| v * i).collect();
        let proj = self.u * y.iter().sum::<f64>();
        y.iter()
            .zip(&self.inv_delta)
            .map(|(y, i)| y - self.coef * proj * self.u * i)
            .collect()
    }
}

fn cholesky_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if !m.iter().all(|x| x.is_finite()) {
        return None;
    }
    let ch = m.cholesky()?;
    let x = ch.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hinge_block_inverse() {
        // diag(1, 2) + 4·(1/2)²·11ᵀ = [[2, 1], [1, 3]]
        let block = HingeBlock::new(vec![1.0, 2.0], 4.0, 0.5);
        let x = block.solve(&[3.0, 4.0]);
        assert!((2.0 * x[0] + x[1] - 3.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn intervals() {
        assert_eq!(score_interval(&[0.2, 0.8], Some(1.0)), (0.0, 0.8));
        assert_eq!(score_interval(&[0.0, 0.0], Some(1.0)), (0.0, 0.0));
        assert_eq!(score_interval(&[0.5], None), (0.0, f64::INFINITY));
        assert_eq!(score_interval(&[-1.0, 2.0], Some(2.0)), (-2.0, 4.0));
    }

    #[test]
    fn lifting_hits_target_and_stays_feasible() {
        let s = [0.2, 0.9, 0.5];
        for target in [0.0, 0.1, 0.35, 0.6, 0.9] {
            let mut w = vec![0.25, 0.25, 0.25];
            lift_row(&mut w, &s, target, Some(1.0));
            let f: f64 = w.iter().zip(&s).map(|(a, b)| a * b).sum();
            assert!((f - target).abs() < 1e-12, "{target}: {f}");
            assert!(w.iter().all(|&x| x >= 0.0) && w.iter().sum::<f64>() <= 1.0);
        }
        let mut w = vec![0.1, 0.0, 0.0];
        lift_row(&mut w, &s, 3.0, None);
        let f: f64 = w.iter().zip(&s).map(|(a, b)| a * b).sum();
        assert!((f - 3.0).abs() < 1e-12);
    }
}
