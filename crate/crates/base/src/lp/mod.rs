//! Linear programs in the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  A_eq x = b_eq
//!             A_ub x ≤ b_ub
//!             x ≥ 0
//! ```
//!
//! solved with a deterministic dense two-phase simplex. Multipliers follow the
//! sensitivity convention: `y_eq[i]` is ∂objective/∂b_eq[i] and
//! `mu_ub[i] ≥ 0` is −∂objective/∂b_ub[i], so the Lagrangian reduced cost of
//! column j is `c_j − A_eq[:,j]ᵀy + A_ub[:,j]ᵀμ ≥ 0`.

mod kkt;
mod simplex;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use kkt::{verify_kkt, KktReport};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ub: DMatrix<f64>,
    pub b_ub: DVector<f64>,
    /// One label per column, for traceability in exports and error messages.
    pub var_names: Vec<String>,
}

impl LinearProgram {
    /// Program with `n` variables and no constraints; rows are appended with
    /// [`LinearProgram::push_eq`] and [`LinearProgram::push_ub`].
    pub fn new(c: Vec<f64>, var_names: Vec<String>) -> Self {
        let n = c.len();
        LinearProgram {
            c: DVector::from_vec(c),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ub: DMatrix::zeros(0, n),
            b_ub: DVector::zeros(0),
            var_names,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Appends `Σ coef·x = rhs` given sparse (column, coefficient) terms.
    pub fn push_eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let (a, b) = push_row(&self.a_eq, &self.b_eq, terms, rhs);
        self.a_eq = a;
        self.b_eq = b;
        self.a_eq.nrows() - 1
    }

    /// Appends `Σ coef·x ≤ rhs`.
    pub fn push_ub(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let (a, b) = push_row(&self.a_ub, &self.b_ub, terms, rhs);
        self.a_ub = a;
        self.b_ub = b;
        self.a_ub.nrows() - 1
    }

    /// Checks dimensions and finiteness.
    pub fn check(&self) -> Result<(), String> {
        let n = self.c.len();
        if self.a_eq.ncols() != n || self.a_ub.ncols() != n {
            return Err(format!(
                "constraint matrices have {} / {} columns, objective has {n}",
                self.a_eq.ncols(),
                self.a_ub.ncols()
            ));
        }
        if self.a_eq.nrows() != self.b_eq.len() || self.a_ub.nrows() != self.b_ub.len() {
            return Err("right-hand side length does not match row count".into());
        }
        if !self.var_names.is_empty() && self.var_names.len() != n {
            return Err(format!("{} variable names for {n} variables", self.var_names.len()));
        }
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.a_eq.iter().all(|v| v.is_finite())
            && self.b_eq.iter().all(|v| v.is_finite())
            && self.a_ub.iter().all(|v| v.is_finite())
            && self.b_ub.iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite coefficient".into());
        }
        Ok(())
    }
}

/// Row-by-row assembly of a [`LinearProgram`] from sparse terms.
#[derive(Debug, Clone, Default)]
pub struct LpBuilder {
    c: Vec<f64>,
    names: Vec<String>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    ub: Vec<(Vec<(usize, f64)>, f64)>,
}

impl LpBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a column with objective coefficient `cost`; returns its index.
    pub fn var(&mut self, name: impl Into<String>, cost: f64) -> usize {
        self.c.push(cost);
        self.names.push(name.into());
        self.c.len() - 1
    }

    pub fn eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push((terms, rhs));
        self.eq.len() - 1
    }

    pub fn ub(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ub.push((terms, rhs));
        self.ub.len() - 1
    }

    pub fn build(self) -> LinearProgram {
        let n = self.c.len();
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
            let mut a = DMatrix::zeros(rows.len(), n);
            for (i, (terms, _)) in rows.iter().enumerate() {
                for &(j, v) in terms {
                    a[(i, j)] += v;
                }
            }
            (a, DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1)))
        };
        let (a_eq, b_eq) = dense(&self.eq);
        let (a_ub, b_ub) = dense(&self.ub);
        LinearProgram { c: DVector::from_vec(self.c), a_eq, b_eq, a_ub, b_ub, var_names: self.names }
    }
}

fn push_row(a: &DMatrix<f64>, b: &DVector<f64>, terms: &[(usize, f64)], rhs: f64) -> (DMatrix<f64>, DVector<f64>) {
    let m = a.nrows();
    let mut a = a.clone().insert_row(m, 0.0);
    for &(j, v) in terms {
        a[(m, j)] += v;
    }
    (a, b.clone().push(rhs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    SolverError,
}

impl std::fmt::Display for LpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LpStatus::Optimal => "optimal",
            LpStatus::Infeasible => "infeasible",
            LpStatus::Unbounded => "unbounded",
            LpStatus::SolverError => "solver_error",
        })
    }
}

/// Absolute tolerances; feasibility checks scale them by `1 + ‖b‖∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas: f64,
    pub dual: f64,
    pub gap: f64,
    /// Smallest tableau entry accepted as a pivot.
    pub pivot: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feas: 1e-7, dual: 1e-7, gap: 1e-7, pivot: 1e-9, max_iterations: 200_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: DVector<f64>,
    pub y_eq: DVector<f64>,
    pub mu_ub: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Diagnostic for non-optimal outcomes.
    pub message: String,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    fn failed(lp: &LinearProgram, status: LpStatus, iterations: usize, message: impl Into<String>) -> Self {
        LpSolution {
            status,
            x: DVector::zeros(lp.num_vars()),
            y_eq: DVector::zeros(lp.b_eq.len()),
            mu_ub: DVector::zeros(lp.b_ub.len()),
            objective: f64::NAN,
            iterations,
            message: message.into(),
        }
    }
}

/// Solves `lp`. Numerical trouble yields [`LpStatus::SolverError`], never a
/// partially valid solution.
pub fn solve(lp: &LinearProgram, tol: &Tolerances) -> LpSolution {
    if let Err(e) = lp.check() {
        return LpSolution::failed(lp, LpStatus::SolverError, 0, e);
    }
    simplex::solve(lp, tol)
}
