//! Market formulations and the mapping from LP multipliers to market prices.
//!
//! Inside the LP, token rates are in M tokens/s and costs in $/M tokens, so
//! the objective is in $/s. Results are converted back to tokens/s and $/hr.

use serde::{Deserialize, Serialize};

use crate::error::{AnalysisError, ModelError};
use crate::lp::{self, KktReport, LinearProgram, LpBuilder, LpStatus, Tolerances};
use crate::model::{Scenario, SECONDS_PER_HOUR, TOKENS_PER_MTOK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// Must-serve, shared token-equivalent link capacity `W / min payload`.
    Baseline,
    /// Must-serve, physical GB/s link capacity with per-class transfer intensity.
    TransferAware,
    /// Baseline links with penalised unmet demand.
    PartialService,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Baseline => "baseline",
            Formulation::TransferAware => "transfer",
            Formulation::PartialService => "partial",
        }
    }

    /// Unit of link usage and capacity.
    pub fn link_unit(&self) -> &'static str {
        match self {
            Formulation::TransferAware => "gb_per_s",
            _ => "tokens_per_s",
        }
    }

    /// Unit of the congestion rent η.
    pub fn congestion_unit(&self) -> &'static str {
        match self {
            Formulation::TransferAware => "usd_per_gb",
            _ => "usd_per_mtok",
        }
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Formulation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => Ok(Formulation::Baseline),
            "transfer" | "transfer-aware" | "transfer_aware" => Ok(Formulation::TransferAware),
            "partial" | "partial-service" | "partial_service" => Ok(Formulation::PartialService),
            other => Err(format!("unknown formulation `{other}` (expected baseline, transfer or partial)")),
        }
    }
}

/// Primal and dual quantities of an optimal clearing, in reporting units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingSolution {
    /// arc × class, tokens/s. Zero on arcs removed by the latency filter.
    pub flows: Vec<Vec<f64>>,
    /// node × class, tokens/s.
    pub dispatch: Vec<Vec<f64>>,
    /// node × class, tokens/s. Zero in must-serve formulations.
    pub unmet: Vec<Vec<f64>>,
    /// π, node × class, $/M tokens.
    pub prices: Vec<Vec<f64>>,
    /// μ ≥ 0, node × class, $/M tokens.
    pub scarcity: Vec<Vec<f64>>,
    /// η ≥ 0 per arc, in [`Formulation::congestion_unit`].
    pub congestion: Vec<f64>,
    /// Per arc, in [`Formulation::link_unit`].
    pub link_usage: Vec<f64>,
    /// Per arc, in [`Formulation::link_unit`]; infinite when unconstrained.
    pub link_capacity: Vec<f64>,
    /// $/hr, including penalties for unmet demand.
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingResult {
    pub formulation: Formulation,
    pub scenario: Scenario,
    pub status: LpStatus,
    pub message: String,
    pub iterations: usize,
    /// arc × class admissibility after latency filtering.
    pub admissible: Vec<Vec<bool>>,
    /// ρ, node × class, $/M tokens (partial service only).
    pub penalties: Option<Vec<Vec<f64>>>,
    pub solution: Option<ClearingSolution>,
    pub kkt: Option<KktReport>,
}

impl ClearingResult {
    pub fn is_feasible(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn solution(&self) -> Result<&ClearingSolution, AnalysisError> {
        self.solution.as_ref().ok_or_else(|| AnalysisError::NotOptimal(self.status.to_string()))
    }

    /// Per-token delivery charge on `arc` for `class`, $/M tokens, excluding congestion.
    pub fn routing_coefficient(&self, arc: usize, class: usize) -> f64 {
        routing_coefficient(&self.scenario, self.formulation, arc, class)
    }

    /// Congestion rent on `arc` expressed per M tokens of `class`.
    pub fn congestion_per_token(&self, arc: usize, class: usize) -> Result<f64, AnalysisError> {
        let eta = self.solution()?.congestion[arc];
        Ok(match self.formulation {
            Formulation::TransferAware => self.scenario.transfer_intensity(arc, class) * eta,
            _ => eta,
        })
    }
}

/// Routing objective coefficient, $/M tokens: `c_route + w·a_k` in token
/// units, `c_route + w·γ` in transfer-aware mode.
pub fn routing_coefficient(scenario: &Scenario, formulation: Formulation, arc: usize, class: usize) -> f64 {
    let a = &scenario.arcs[arc];
    let data = match formulation {
        Formulation::TransferAware => scenario.transfer_intensity(arc, class),
        _ => scenario.classes[class].payload,
    };
    a.routing_cost[class] + a.transfer_tariff * data
}

/// Arc indices usable by `class` after removing arcs slower than its bound.
pub fn latency_filter(scenario: &Scenario, class: usize) -> Vec<usize> {
    let bound = scenario.classes[class].latency_bound;
    (0..scenario.arcs.len()).filter(|&e| bound.admits(scenario.arcs[e].latency)).collect()
}

/// Column and row positions of a built clearing LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LpLayout {
    pub dispatch: Vec<Vec<usize>>,
    pub flows: Vec<Vec<Option<usize>>>,
    pub unmet: Option<Vec<Vec<usize>>>,
    pub balance: Vec<Vec<usize>>,
    pub compute: Vec<Vec<usize>>,
    pub link: Vec<Option<usize>>,
    /// Link capacity in LP units (M tokens/s or GB/s).
    pub link_capacity: Vec<f64>,
}

/// Builds the clearing LP for `formulation`. `penalties` is required for
/// [`Formulation::PartialService`] and ignored otherwise.
pub fn build_lp(
    scenario: &Scenario,
    formulation: Formulation,
    penalties: Option<&[Vec<f64>]>,
) -> (LinearProgram, LpLayout) {
    let (n, k, e) = (scenario.nodes.len(), scenario.classes.len(), scenario.arcs.len());
    let mut b = LpBuilder::new();

    let dispatch: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            (0..k)
                .map(|c| b.var(format!("x[{},{}]", scenario.nodes[j].id, scenario.classes[c].id), scenario.marginal_cost(j, c)))
                .collect()
        })
        .collect();

    let mut flows = vec![vec![None; k]; e];
    for c in 0..k {
        for a in latency_filter(scenario, c) {
            let arc = &scenario.arcs[a];
            let name = format!(
                "f[{}->{},{}]",
                scenario.nodes[arc.from].id, scenario.nodes[arc.to].id, scenario.classes[c].id
            );
            flows[a][c] = Some(b.var(name, routing_coefficient(scenario, formulation, a, c)));
        }
    }

    let unmet = match (formulation, penalties) {
        (Formulation::PartialService, Some(rho)) => Some(
            (0..n)
                .map(|j| {
                    (0..k)
                        .map(|c| b.var(format!("y[{},{}]", scenario.nodes[j].id, scenario.classes[c].id), rho[j][c]))
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>(),
        ),
        _ => None,
    };

    let mut balance = vec![vec![0; k]; n];
    for j in 0..n {
        for c in 0..k {
            let mut terms = vec![(dispatch[j][c], 1.0)];
            for (a, arc) in scenario.arcs.iter().enumerate() {
                if let Some(v) = flows[a][c] {
                    if arc.from == j {
                        terms.push((v, 1.0));
                    } else if arc.to == j {
                        terms.push((v, -1.0));
                    }
                }
            }
            if let Some(u) = &unmet {
                terms.push((u[j][c], 1.0));
            }
            balance[j][c] = b.eq(terms, scenario.effective_demand(j, c) / TOKENS_PER_MTOK);
        }
    }

    let compute: Vec<Vec<usize>> = (0..n)
        .map(|j| {
            (0..k)
                .map(|c| b.ub(vec![(dispatch[j][c], 1.0)], scenario.nodes[j].capacity[c] / TOKENS_PER_MTOK))
                .collect()
        })
        .collect();

    let min_payload = scenario.min_payload();
    let mut link = vec![None; e];
    let mut link_capacity = vec![f64::INFINITY; e];
    for (a, arc) in scenario.arcs.iter().enumerate() {
        if !arc.physical_capacity.is_finite() {
            continue;
        }
        let (cap, terms): (f64, Vec<(usize, f64)>) = match formulation {
            Formulation::TransferAware => (
                arc.physical_capacity,
                (0..k).filter_map(|c| flows[a][c].map(|v| (v, scenario.transfer_intensity(a, c)))).collect(),
            ),
            _ => (arc.physical_capacity / min_payload, (0..k).filter_map(|c| flows[a][c].map(|v| (v, 1.0))).collect()),
        };
        link_capacity[a] = cap;
        if !terms.is_empty() {
            link[a] = Some(b.ub(terms, cap));
        }
    }

    (b.build(), LpLayout { dispatch, flows, unmet, balance, compute, link, link_capacity })
}

fn clear(
    scenario: &Scenario,
    formulation: Formulation,
    penalties: Option<Vec<Vec<f64>>>,
    tol: &Tolerances,
) -> ClearingResult {
    let (n, k, e) = (scenario.nodes.len(), scenario.classes.len(), scenario.arcs.len());
    let (lp, layout) = build_lp(scenario, formulation, penalties.as_deref());
    let sol = lp::solve(&lp, tol);
    let admissible = layout.flows.iter().map(|row| row.iter().map(Option::is_some).collect()).collect();

    let mut result = ClearingResult {
        formulation,
        scenario: scenario.clone(),
        status: sol.status,
        message: sol.message.clone(),
        iterations: sol.iterations,
        admissible,
        penalties,
        solution: None,
        kkt: None,
    };
    if !sol.is_optimal() {
        return result;
    }

    let token = |v: f64| v * TOKENS_PER_MTOK;
    let flows: Vec<Vec<f64>> =
        layout.flows.iter().map(|row| row.iter().map(|v| v.map_or(0.0, |i| token(sol.x[i]))).collect()).collect();
    let dispatch = layout.dispatch.iter().map(|row| row.iter().map(|&i| token(sol.x[i])).collect()).collect();
    let unmet = match &layout.unmet {
        Some(u) => u.iter().map(|row| row.iter().map(|&i| token(sol.x[i])).collect()).collect(),
        None => vec![vec![0.0; k]; n],
    };
    let prices = layout.balance.iter().map(|row| row.iter().map(|&r| sol.y_eq[r]).collect()).collect();
    let scarcity = layout.compute.iter().map(|row| row.iter().map(|&r| sol.mu_ub[r]).collect()).collect();
    let congestion = layout.link.iter().map(|r| r.map_or(0.0, |r| sol.mu_ub[r])).collect();

    let (link_usage, link_capacity) = match formulation {
        Formulation::TransferAware => {
            let usage = (0..e)
                .map(|a| (0..k).map(|c| flows[a][c] / TOKENS_PER_MTOK * scenario.transfer_intensity(a, c)).sum())
                .collect();
            (usage, layout.link_capacity.clone())
        }
        _ => (
            flows.iter().map(|row| row.iter().sum()).collect(),
            layout.link_capacity.iter().map(|&c| token(c)).collect(),
        ),
    };

    result.kkt = Some(lp::verify_kkt(&lp, &sol));
    result.solution = Some(ClearingSolution {
        flows,
        dispatch,
        unmet,
        prices,
        scarcity,
        congestion,
        link_usage,
        link_capacity,
        total_cost: sol.objective * SECONDS_PER_HOUR,
    });
    result
}

/// Must-serve clearing with token-equivalent link capacity.
pub fn clear_baseline(scenario: &Scenario, tol: &Tolerances) -> ClearingResult {
    clear(scenario, Formulation::Baseline, None, tol)
}

/// Must-serve clearing with physical GB/s link capacity.
pub fn clear_transfer_aware(scenario: &Scenario, tol: &Tolerances) -> ClearingResult {
    clear(scenario, Formulation::TransferAware, None, tol)
}

/// Clearing that may leave demand unserved at penalty ρ ($/M tokens, node × class).
pub fn clear_partial_service(
    scenario: &Scenario,
    penalties: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<ClearingResult, ModelError> {
    let (n, k) = (scenario.nodes.len(), scenario.classes.len());
    if penalties.len() != n || penalties.iter().any(|r| r.len() != k) {
        return Err(ModelError::Shape { key: "penalties".into(), expected: k });
    }
    for (j, row) in penalties.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ModelError::range(format!("penalties[{j}][{c}]"), "penalty must be finite and ≥ 0"));
            }
        }
    }
    Ok(clear(scenario, Formulation::PartialService, Some(penalties.to_vec()), tol))
}

/// Same penalty for every node and class.
pub fn uniform_penalties(scenario: &Scenario, rho: f64) -> Vec<Vec<f64>> {
    vec![vec![rho; scenario.classes.len()]; scenario.nodes.len()]
}

/// Dispatches to the clearing for `formulation`; partial service uses `penalty` everywhere.
pub fn clear_with(
    scenario: &Scenario,
    formulation: Formulation,
    penalty: f64,
    tol: &Tolerances,
) -> Result<ClearingResult, ModelError> {
    match formulation {
        Formulation::Baseline => Ok(clear_baseline(scenario, tol)),
        Formulation::TransferAware => Ok(clear_transfer_aware(scenario, tol)),
        Formulation::PartialService => clear_partial_service(scenario, &uniform_penalties(scenario, penalty), tol),
    }
}

/// Copy of `scenario` with every node's opex adder raised by `adder` $/M tokens.
pub fn apply_opex_adder(scenario: &Scenario, adder: f64) -> Result<Scenario, ModelError> {
    if !(adder >= 0.0 && adder.is_finite()) {
        return Err(ModelError::range("opex_adder", "adder must be finite and ≥ 0"));
    }
    let mut out = scenario.clone();
    for node in &mut out.nodes {
        node.opex_adder += adder;
    }
    Ok(out)
}
