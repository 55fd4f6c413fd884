use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LinearProgram, LpSolution};

/// Largest absolute violation per optimality condition.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktReport {
    /// Equality residuals, upper-bound excess and negative variables.
    pub primal: f64,
    /// Negative reduced costs and negative inequality multipliers.
    pub dual: f64,
    /// Largest |x_j r_j| or |μ_i s_i|.
    pub complementarity: f64,
    /// |primal objective − dual objective|.
    pub gap: f64,
    /// `gap / (1 + |objective|)`.
    pub relative_gap: f64,
}

impl KktReport {
    pub fn max_violation(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.gap)
    }
}

/// Lagrangian reduced costs `c − A_eqᵀy + A_ubᵀμ`.
pub fn reduced_costs(lp: &LinearProgram, y_eq: &DVector<f64>, mu_ub: &DVector<f64>) -> DVector<f64> {
    &lp.c - lp.a_eq.tr_mul(y_eq) + lp.a_ub.tr_mul(mu_ub)
}

/// Evaluates the optimality conditions of `solution` against `lp`.
pub fn verify_kkt(lp: &LinearProgram, solution: &LpSolution) -> KktReport {
    let x = &solution.x;
    let eq_res = &lp.a_eq * x - &lp.b_eq;
    let slack = &lp.b_ub - &lp.a_ub * x;
    let primal = eq_res
        .iter()
        .map(|v| v.abs())
        .chain(slack.iter().map(|s| (-s).max(0.0)))
        .chain(x.iter().map(|v| (-v).max(0.0)))
        .fold(0.0, f64::max);

    let r = reduced_costs(lp, &solution.y_eq, &solution.mu_ub);
    let dual = r
        .iter()
        .chain(solution.mu_ub.iter())
        .map(|v| (-v).max(0.0))
        .fold(0.0, f64::max);

    let complementarity = x
        .iter()
        .zip(r.iter())
        .map(|(a, b)| (a * b).abs())
        .chain(solution.mu_ub.iter().zip(slack.iter()).map(|(a, b)| (a * b).abs()))
        .fold(0.0, f64::max);

    let primal_obj = lp.c.dot(x);
    let dual_obj = lp.b_eq.dot(&solution.y_eq) - lp.b_ub.dot(&solution.mu_ub);
    let gap = (primal_obj - dual_obj).abs();
    KktReport { primal, dual, complementarity, gap, relative_gap: gap / (1.0 + primal_obj.abs()) }
}
