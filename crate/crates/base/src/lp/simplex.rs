//! Dense two-phase tableau simplex with LU-based refinement.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots the solver
//! switches to Bland's rule until the objective moves again. Once the
//! tableau reports optimality the basis is refactored from the original data
//! and primal values, multipliers and reduced costs are recomputed; if the
//! refactored basis is not optimal the tableau is rebuilt and pivoting resumes.

use nalgebra::{DMatrix, DVector};

use super::{LinearProgram, LpSolution, LpStatus, Tolerances};

const MAX_REFINEMENTS: usize = 6;
const DEGENERATE_RUN: usize = 40;
const RATIO_TIE: f64 = 1e-12;

/// Standard form `A x = b, x ≥ 0, b ≥ 0` with slack and artificial columns.
struct Standard {
    m_eq: usize,
    n: usize,
    a: DMatrix<f64>,
    b: DVector<f64>,
    /// ±1 applied to each original row so that `b ≥ 0`.
    sign: Vec<f64>,
    cost: Vec<f64>,
    first_art: usize,
    /// Column that starts basic in each row.
    start_basis: Vec<usize>,
}

impl Standard {
    fn new(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let (m_eq, m_ub) = (lp.b_eq.len(), lp.b_ub.len());
        let m = m_eq + m_ub;
        let mut sign = vec![1.0; m];
        for i in 0..m {
            let b = if i < m_eq { lp.b_eq[i] } else { lp.b_ub[i - m_eq] };
            if b < 0.0 {
                sign[i] = -1.0;
            }
        }
        let needs_art: Vec<bool> = (0..m).map(|i| i < m_eq || sign[i] < 0.0).collect();
        let n_art = needs_art.iter().filter(|&&v| v).count();
        let first_art = n + m_ub;
        let cols = first_art + n_art;

        let mut a = DMatrix::zeros(m, cols);
        let mut b = DVector::zeros(m);
        let mut start_basis = vec![0; m];
        let mut next_art = first_art;
        for i in 0..m {
            let s = sign[i];
            if i < m_eq {
                for j in 0..n {
                    a[(i, j)] = s * lp.a_eq[(i, j)];
                }
                b[i] = s * lp.b_eq[i];
            } else {
                let r = i - m_eq;
                for j in 0..n {
                    a[(i, j)] = s * lp.a_ub[(r, j)];
                }
                a[(i, n + r)] = s;
                b[i] = s * lp.b_ub[r];
                start_basis[i] = n + r;
            }
            if needs_art[i] {
                a[(i, next_art)] = 1.0;
                start_basis[i] = next_art;
                next_art += 1;
            }
        }
        let mut cost = vec![0.0; cols];
        cost[..n].copy_from_slice(lp.c.as_slice());
        Standard { m_eq, n, a, b, sign, cost, first_art, start_basis }
    }

    fn rows(&self) -> usize {
        self.a.nrows()
    }

    fn cols(&self) -> usize {
        self.a.ncols()
    }
}

struct Tableau {
    m: usize,
    width: usize,
    rhs: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
}

enum Outcome {
    Optimal,
    Unbounded,
    IterationLimit,
}

impl Tableau {
    fn from_standard(std: &Standard) -> Self {
        let (m, cols) = (std.rows(), std.cols());
        let width = cols + 1;
        let mut t = vec![0.0; m * width];
        for i in 0..m {
            for j in 0..cols {
                t[i * width + j] = std.a[(i, j)];
            }
            t[i * width + cols] = std.b[i];
        }
        Tableau { m, width, rhs: cols, t, obj: vec![0.0; width], basis: std.start_basis.clone() }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.t[i * self.width + j]
    }

    /// Sets the objective row to reduced costs for `cost` under the current basis.
    fn price(&mut self, cost: &[f64]) {
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * self.width..(i + 1) * self.width];
                for (o, v) in self.obj.iter_mut().zip(row) {
                    *o -= cb * v;
                }
            }
        }
        for i in 0..self.m {
            self.obj[self.basis[i]] = 0.0;
        }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.t[r * w + c];
        let inv = 1.0 / p;
        for v in &mut self.t[r * w..(r + 1) * w] {
            *v *= inv;
        }
        self.t[r * w + c] = 1.0;
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        for row in before.chunks_exact_mut(w).chain(after.chunks_exact_mut(w)) {
            let f = row[c];
            if f != 0.0 {
                for (v, p) in row.iter_mut().zip(prow.iter()) {
                    *v -= f * p;
                }
                row[c] = 0.0;
            }
        }
        let f = self.obj[c];
        if f != 0.0 {
            for (v, p) in self.obj.iter_mut().zip(prow.iter()) {
                *v -= f * p;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
    }

    fn run(&mut self, allowed: &[bool], tol: &Tolerances, iterations: &mut usize) -> Outcome {
        let mut degenerate = 0usize;
        loop {
            let bland = degenerate >= DEGENERATE_RUN;
            let mut enter = None;
            let mut best = -tol.dual;
            for (j, &ok) in allowed.iter().enumerate() {
                if !ok {
                    continue;
                }
                let d = self.obj[j];
                if d < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = enter else { return Outcome::Optimal };
            if *iterations >= tol.max_iterations {
                return Outcome::IterationLimit;
            }

            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let a = self.at(i, c);
                if a <= tol.pivot {
                    continue;
                }
                let ratio = self.at(i, self.rhs).max(0.0) / a;
                leave = match leave {
                    None => Some((i, ratio, a)),
                    Some((bi, br, ba)) => {
                        let eps = RATIO_TIE * (1.0 + br);
                        let better = if ratio < br - eps {
                            true
                        } else if ratio <= br + eps {
                            if bland {
                                self.basis[i] < self.basis[bi]
                            } else {
                                a > ba
                            }
                        } else {
                            false
                        };
                        if better {
                            Some((i, ratio, a))
                        } else {
                            Some((bi, br, ba))
                        }
                    }
                };
            }
            let Some((r, ratio, _)) = leave else { return Outcome::Unbounded };
            if ratio <= RATIO_TIE {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.pivot(r, c);
            *iterations += 1;
        }
    }
}

pub(super) fn solve(lp: &LinearProgram, tol: &Tolerances) -> LpSolution {
    let std = Standard::new(lp);
    let (m, cols) = (std.rows(), std.cols());
    let mut tab = Tableau::from_standard(&std);
    let mut iterations = 0;
    let b_scale = 1.0 + std.b.amax();

    // Phase 1: minimise the sum of artificials.
    if std.first_art < cols {
        let mut cost1 = vec![0.0; cols];
        cost1[std.first_art..].iter_mut().for_each(|v| *v = 1.0);
        tab.price(&cost1);
        let allowed = vec![true; cols];
        match tab.run(&allowed, tol, &mut iterations) {
            Outcome::Optimal => {}
            Outcome::Unbounded => {
                return LpSolution::failed(lp, LpStatus::SolverError, iterations, "phase 1 reported unbounded")
            }
            Outcome::IterationLimit => {
                return LpSolution::failed(lp, LpStatus::SolverError, iterations, "iteration limit in phase 1")
            }
        }
        let infeasibility: f64 =
            (0..m).filter(|&i| tab.basis[i] >= std.first_art).map(|i| tab.at(i, tab.rhs).max(0.0)).sum();
        if infeasibility > tol.feas * b_scale {
            return LpSolution::failed(
                lp,
                LpStatus::Infeasible,
                iterations,
                format!("phase 1 residual infeasibility {infeasibility:.3e}"),
            );
        }
    }

    // Drive remaining artificials out of the basis; rows where that is
    // impossible are linearly dependent and dropped.
    let mut redundant = vec![false; m];
    for r in 0..m {
        if tab.basis[r] < std.first_art {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..std.first_art {
            let v = tab.at(r, j).abs();
            if v > tol.pivot && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        match best {
            Some((j, _)) => tab.pivot(r, j),
            None => redundant[r] = true,
        }
    }

    let allowed: Vec<bool> = (0..cols).map(|j| j < std.first_art).collect();
    tab.price(&std.cost);
    for _ in 0..MAX_REFINEMENTS {
        match tab.run(&allowed, tol, &mut iterations) {
            Outcome::Optimal => {}
            Outcome::Unbounded => {
                return LpSolution::failed(lp, LpStatus::Unbounded, iterations, "objective unbounded below")
            }
            Outcome::IterationLimit => {
                return LpSolution::failed(lp, LpStatus::SolverError, iterations, "iteration limit in phase 2")
            }
        }
        match refactor(&std, &tab, &redundant, tol, b_scale) {
            Refactor::Optimal { x_b, y } => return assemble(lp, &std, &tab, &redundant, x_b, y, iterations),
            Refactor::Rebuild(t) => tab = t,
            Refactor::Singular => {
                return LpSolution::failed(lp, LpStatus::SolverError, iterations, "singular basis at optimum")
            }
        }
    }
    LpSolution::failed(lp, LpStatus::SolverError, iterations, "basis refinement did not converge")
}

enum Refactor {
    Optimal { x_b: DVector<f64>, y: DVector<f64> },
    Rebuild(Tableau),
    Singular,
}

/// Recomputes the basic solution and multipliers from the original data.
fn refactor(std: &Standard, tab: &Tableau, redundant: &[bool], tol: &Tolerances, b_scale: f64) -> Refactor {
    let rows: Vec<usize> = (0..std.rows()).filter(|&i| !redundant[i]).collect();
    let k = rows.len();
    let basis: Vec<usize> = rows.iter().map(|&i| tab.basis[i]).collect();
    let bmat = DMatrix::from_fn(k, k, |r, c| std.a[(rows[r], basis[c])]);
    let b = DVector::from_fn(k, |r, _| std.b[rows[r]]);
    let cb = DVector::from_fn(k, |r, _| std.cost[basis[r]]);

    let lu = bmat.clone().lu();
    let Some(x_b) = lu.solve(&b) else { return Refactor::Singular };
    let Some(y) = bmat.transpose().lu().solve(&cb) else { return Refactor::Singular };
    if x_b.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Refactor::Singular;
    }

    let sub = DMatrix::from_fn(k, std.first_art, |r, j| std.a[(rows[r], j)]);
    let reduced: Vec<f64> = (0..std.first_art).map(|j| std.cost[j] - sub.column(j).dot(&y)).collect();
    let primal_ok = x_b.iter().all(|&v| v >= -tol.feas * b_scale);
    let dual_ok = reduced.iter().all(|&d| d >= -tol.dual);
    if primal_ok && dual_ok {
        return Refactor::Optimal { x_b, y };
    }

    // Rebuild the tableau as B⁻¹[A | b] on the independent rows.
    let Some(body) = lu.solve(&sub) else { return Refactor::Singular };
    let mut fresh = Tableau {
        m: tab.m,
        width: tab.width,
        rhs: tab.rhs,
        t: vec![0.0; tab.t.len()],
        obj: vec![0.0; tab.width],
        basis: tab.basis.clone(),
    };
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..std.first_art {
            fresh.t[i * tab.width + j] = body[(r, j)];
        }
        fresh.t[i * tab.width + tab.rhs] = x_b[r].max(0.0);
    }
    for i in (0..std.rows()).filter(|&i| redundant[i]) {
        fresh.t[i * tab.width + tab.basis[i]] = 1.0;
    }
    fresh.obj[..std.first_art].copy_from_slice(&reduced);
    for &j in &basis {
        fresh.obj[j] = 0.0;
    }
    Refactor::Rebuild(fresh)
}

fn assemble(
    lp: &LinearProgram,
    std: &Standard,
    tab: &Tableau,
    redundant: &[bool],
    x_b: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
) -> LpSolution {
    let mut x = DVector::zeros(std.n);
    let mut y_full = vec![0.0; std.rows()];
    let mut r = 0;
    for i in 0..std.rows() {
        if redundant[i] {
            continue;
        }
        let j = tab.basis[i];
        if j < std.n {
            x[j] = x_b[r].max(0.0);
        }
        y_full[i] = std.sign[i] * y[r];
        r += 1;
    }
    let y_eq = DVector::from_fn(std.m_eq, |i, _| y_full[i]);
    let mu_ub = DVector::from_fn(std.rows() - std.m_eq, |i, _| (-y_full[std.m_eq + i]).max(0.0));
    let objective = lp.c.dot(&x);
    LpSolution { status: LpStatus::Optimal, x, y_eq, mu_ub, objective, iterations, message: String::new() }
}
