//! Simplex results checked against exhaustive enumeration of basic feasible
//! solutions on small random programs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokenflow_base::lp::{solve, verify_kkt, LinearProgram, LpStatus, Tolerances};

/// Solves a square system by Gaussian elimination with partial pivoting.
fn gauss(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for k in col..n {
                a[r][k] -= f * a[col][k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if n < k {
        return vec![];
    }
    let mut out = combinations(n - 1, k);
    for mut c in combinations(n - 1, k - 1) {
        c.push(n - 1);
        out.push(c);
    }
    out
}

/// Best objective over all basic feasible solutions, or None if there are none.
fn vertex_oracle(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars();
    let (me, mu) = (lp.b_eq.len(), lp.b_ub.len());
    let m = me + mu;
    let cols = n + mu;
    let column = |j: usize, i: usize| -> f64 {
        if j < n {
            if i < me {
                lp.a_eq[(i, j)]
            } else {
                lp.a_ub[(i - me, j)]
            }
        } else if i >= me && i - me == j - n {
            1.0
        } else {
            0.0
        }
    };
    let rhs: Vec<f64> = lp.b_eq.iter().chain(lp.b_ub.iter()).copied().collect();
    let mut best: Option<f64> = None;
    for basis in combinations(cols, m) {
        let a: Vec<Vec<f64>> = (0..m).map(|i| basis.iter().map(|&j| column(j, i)).collect()).collect();
        let Some(xb) = gauss(a, rhs.clone()) else { continue };
        if xb.iter().any(|&v| v < -1e-11) {
            continue;
        }
        let obj: f64 = basis.iter().zip(&xb).filter(|(&j, _)| j < n).map(|(&j, v)| lp.c[j] * v).sum();
        best = Some(best.map_or(obj, |b: f64| b.min(obj)));
    }
    best
}

fn random_lp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let c: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut lp = LinearProgram::new(c, vec![]);
    let n_eq = rng.random_range(0..2);
    for r in 0..3 {
        // Positive rows keep the region bounded; an occasional negative entry
        // exercises rows that need an artificial start.
        let terms: Vec<(usize, f64)> = (0..4)
            .map(|j| {
                let v: f64 = rng.random_range(0.1..2.0);
                (j, if rng.random_bool(0.15) && r > 0 { -0.3 * v } else { v })
            })
            .collect();
        if r < n_eq {
            lp.push_eq(&terms, rng.random_range(0.5..3.0));
        } else {
            let rhs = if rng.random_bool(0.1) { -rng.random_range(0.1..0.5) } else { rng.random_range(1.0..5.0) };
            lp.push_ub(&terms, rhs);
        }
    }
    // A positive row with no negative entries bounds every variable.
    lp.push_ub(&[(0, 1.0), (1, 1.0), (2, 1.0), (3, 1.0)], 10.0);
    lp
}

#[test]
fn simplex_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tol = Tolerances::default();
    let (mut optimal, mut infeasible) = (0, 0);
    for case in 0..400 {
        let lp = random_lp(&mut rng);
        let sol = solve(&lp, &tol);
        match vertex_oracle(&lp) {
            Some(best) => {
                assert_eq!(sol.status, LpStatus::Optimal, "case {case}: {}", sol.message);
                assert!((sol.objective - best).abs() <= 1e-8, "case {case}: simplex {} vs oracle {best}", sol.objective);
                let kkt = verify_kkt(&lp, &sol);
                assert!(kkt.max_violation() <= 1e-9, "case {case}: {kkt:?}");
                optimal += 1;
            }
            None => {
                assert_eq!(sol.status, LpStatus::Infeasible, "case {case}");
                infeasible += 1;
            }
        }
    }
    assert!(optimal > 300 && infeasible > 0, "optimal {optimal}, infeasible {infeasible}");
}

#[test]
fn degenerate_transportation_problem() {
    // 3 × 3 balanced transportation problem: heavily degenerate.
    let supply = [1.0, 1.0, 1.0];
    let demand = [1.0, 1.0, 1.0];
    let cost = [[1.0, 2.0, 3.0], [2.0, 1.0, 2.0], [3.0, 2.0, 1.0]];
    let mut lp = LinearProgram::new(cost.iter().flatten().copied().collect(), vec![]);
    for (i, s) in supply.iter().enumerate() {
        lp.push_eq(&(0..3).map(|j| (3 * i + j, 1.0)).collect::<Vec<_>>(), *s);
    }
    for (j, d) in demand.iter().enumerate() {
        lp.push_eq(&(0..3).map(|i| (3 * i + j, 1.0)).collect::<Vec<_>>(), *d);
    }
    let sol = solve(&lp, &Tolerances::default());
    assert_eq!(sol.status, LpStatus::Optimal);
    assert!((sol.objective - 3.0).abs() < 1e-12);
    assert!(verify_kkt(&lp, &sol).max_violation() < 1e-12);
}
