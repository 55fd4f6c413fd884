//! Price decompositions and scarcity statistics for a cleared market.

use serde::{Deserialize, Serialize};

use crate::clearing::{ClearingResult, Formulation};
use crate::error::AnalysisError;

/// Token rate (tokens/s) above which dispatch, flow or unmet demand counts as active.
pub const ACTIVE_TOL: f64 = 1e-3;

/// Multiplier threshold for counting scarce pairs and congested links.
pub const DEFAULT_PRICE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathTerm {
    pub arc: usize,
    pub from: String,
    pub to: String,
    /// $/M tokens.
    pub routing: f64,
    /// Congestion rent converted to $/M tokens of the class.
    pub congestion: f64,
}

/// `lmp = energy + opex + scarcity + penalty + Σ(routing + congestion) + residual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceDecomposition {
    pub node: String,
    pub class: String,
    pub lmp: f64,
    pub energy: f64,
    pub opex: f64,
    pub scarcity: f64,
    /// Value of lost service when the origin is shed (partial service).
    pub penalty: f64,
    /// Node whose capacity serves the origin; `None` when the origin is shed.
    pub serving_node: Option<String>,
    pub path: Vec<PathTerm>,
    pub residual: f64,
}

impl PriceDecomposition {
    pub fn path_total(&self) -> f64 {
        self.path.iter().map(|t| t.routing + t.congestion).sum()
    }
}

fn index(result: &ClearingResult, node: usize, class: usize) -> Result<(), AnalysisError> {
    let s = &result.scenario;
    if node >= s.nodes.len() || class >= s.classes.len() {
        return Err(AnalysisError::Index(format!("node {node}, class {class}")));
    }
    Ok(())
}

fn finish(result: &ClearingResult, origin: usize, class: usize, server: Option<usize>, path: Vec<PathTerm>, penalty: f64) -> PriceDecomposition {
    let s = &result.scenario;
    let sol = result.solution.as_ref().expect("checked by caller");
    let (energy, opex, scarcity) = match server {
        Some(j) => (s.energy_cost(j, class), s.nodes[j].opex_adder, sol.scarcity[j][class]),
        None => (0.0, 0.0, 0.0),
    };
    let lmp = sol.prices[origin][class];
    let mut d = PriceDecomposition {
        node: s.nodes[origin].id.clone(),
        class: s.classes[class].id.clone(),
        lmp,
        energy,
        opex,
        scarcity,
        penalty,
        serving_node: server.map(|j| s.nodes[j].id.clone()),
        path,
        residual: 0.0,
    };
    d.residual = lmp - (energy + opex + scarcity + penalty + d.path_total());
    d
}

/// `π = g + μ` at a node that processes `class` itself.
pub fn decompose_local(result: &ClearingResult, node: usize, class: usize) -> Result<PriceDecomposition, AnalysisError> {
    index(result, node, class)?;
    let sol = result.solution()?;
    if sol.dispatch[node][class] <= ACTIVE_TOL {
        let s = &result.scenario;
        return Err(AnalysisError::NotProcessing {
            node: s.nodes[node].id.clone(),
            class: s.classes[class].id.clone(),
        });
    }
    Ok(finish(result, node, class, Some(node), Vec::new(), 0.0))
}

/// Follows the largest active outgoing flow from `origin` until it reaches a
/// node that processes the class, and decomposes the origin price along it.
pub fn decompose_path(result: &ClearingResult, origin: usize, class: usize) -> Result<PriceDecomposition, AnalysisError> {
    index(result, origin, class)?;
    let sol = result.solution()?;
    let s = &result.scenario;
    let mut visited = vec![false; s.nodes.len()];
    let mut path = Vec::new();
    let mut at = origin;
    loop {
        visited[at] = true;
        if at == origin && sol.unmet[at][class] > ACTIVE_TOL {
            let rho = result.penalties.as_ref().map_or(0.0, |p| p[at][class]);
            return Ok(finish(result, origin, class, None, path, rho));
        }
        if sol.dispatch[at][class] > ACTIVE_TOL {
            return Ok(finish(result, origin, class, Some(at), path, 0.0));
        }
        let next = s
            .arcs
            .iter()
            .enumerate()
            .filter(|(a, arc)| arc.from == at && !visited[arc.to] && sol.flows[*a][class] > ACTIVE_TOL)
            .max_by(|(a, _), (b, _)| sol.flows[*a][class].total_cmp(&sol.flows[*b][class]).then(b.cmp(a)));
        let Some((a, arc)) = next else {
            return Err(AnalysisError::NoActivePath {
                node: s.nodes[origin].id.clone(),
                class: s.classes[class].id.clone(),
            });
        };
        path.push(PathTerm {
            arc: a,
            from: s.nodes[arc.from].id.clone(),
            to: s.nodes[arc.to].id.clone(),
            routing: result.routing_coefficient(a, class),
            congestion: result.congestion_per_token(a, class)?,
        });
        at = arc.to;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ArcIdentity {
    /// `(π_i − π_j) − (routing + congestion)` on an arc carrying flow.
    Active { residual: f64 },
    /// No flow: only `π_i − π_j ≤ routing + congestion` holds.
    Inactive { slack: f64 },
}

/// Arc price identity for `class` on `arc`; in transfer-aware mode the
/// congestion term is `γ·η` and the routing term includes `γ·w`.
pub fn arc_price_identity(result: &ClearingResult, arc: usize, class: usize) -> Result<ArcIdentity, AnalysisError> {
    let s = &result.scenario;
    if arc >= s.arcs.len() || class >= s.classes.len() {
        return Err(AnalysisError::Index(format!("arc {arc}, class {class}")));
    }
    let sol = result.solution()?;
    let a = &s.arcs[arc];
    let diff = sol.prices[a.from][class] - sol.prices[a.to][class];
    let term = result.routing_coefficient(arc, class) + result.congestion_per_token(arc, class)?;
    if sol.flows[arc][class] > ACTIVE_TOL {
        Ok(ArcIdentity::Active { residual: diff - term })
    } else {
        Ok(ArcIdentity::Inactive { slack: term - diff })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarcePair {
    pub node: String,
    pub class: String,
    /// $/M tokens.
    pub rent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub arc: usize,
    pub from: String,
    pub to: String,
    pub rent: f64,
    pub usage: f64,
    pub capacity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrices {
    pub class: String,
    /// Unweighted mean over nodes.
    pub mean: f64,
    /// Mean weighted by demand; equals `mean` when the class has no demand.
    pub demand_weighted_mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScarcityReport {
    pub tolerance: f64,
    pub formulation: Formulation,
    pub scarce_pairs: Vec<ScarcePair>,
    /// Links with η above the tolerance.
    pub congested_links: Vec<LinkState>,
    /// Links whose usage reaches capacity, whether or not they carry rent.
    pub saturated_links: Vec<LinkState>,
    pub class_prices: Vec<ClassPrices>,
    /// node × class, dispatch / capacity (0 where capacity is 0).
    pub utilization: Vec<Vec<f64>>,
    /// How `class_prices[].mean` aggregates nodes.
    pub mean_aggregation: String,
}

impl ScarcityReport {
    pub fn mean_price(&self, class: &str) -> Option<f64> {
        self.class_prices.iter().find(|c| c.class == class).map(|c| c.mean)
    }
}

pub fn scarcity_report(result: &ClearingResult, tol: f64) -> Result<ScarcityReport, AnalysisError> {
    let sol = result.solution()?;
    let s = &result.scenario;
    let (n, k) = (s.nodes.len(), s.classes.len());

    let mut scarce_pairs = Vec::new();
    for j in 0..n {
        for c in 0..k {
            if sol.scarcity[j][c] > tol {
                scarce_pairs.push(ScarcePair {
                    node: s.nodes[j].id.clone(),
                    class: s.classes[c].id.clone(),
                    rent: sol.scarcity[j][c],
                });
            }
        }
    }

    let state = |a: usize| LinkState {
        arc: a,
        from: s.nodes[s.arcs[a].from].id.clone(),
        to: s.nodes[s.arcs[a].to].id.clone(),
        rent: sol.congestion[a],
        usage: sol.link_usage[a],
        capacity: sol.link_capacity[a],
    };
    let congested_links = (0..s.arcs.len()).filter(|&a| sol.congestion[a] > tol).map(state).collect();
    let saturated_links = (0..s.arcs.len())
        .filter(|&a| {
            let cap = sol.link_capacity[a];
            cap.is_finite() && sol.link_usage[a] >= cap * (1.0 - 1e-9) - 1e-9
        })
        .map(state)
        .collect();

    let class_prices = (0..k)
        .map(|c| {
            let prices: Vec<f64> = (0..n).map(|j| sol.prices[j][c]).collect();
            let mean = prices.iter().sum::<f64>() / n as f64;
            let total: f64 = (0..n).map(|j| s.effective_demand(j, c)).sum();
            let weighted = if total > 0.0 {
                (0..n).map(|j| prices[j] * s.effective_demand(j, c)).sum::<f64>() / total
            } else {
                mean
            };
            ClassPrices {
                class: s.classes[c].id.clone(),
                mean,
                demand_weighted_mean: weighted,
                max: prices.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();

    let utilization = (0..n)
        .map(|j| {
            (0..k)
                .map(|c| {
                    let cap = s.nodes[j].capacity[c];
                    if cap > 0.0 { sol.dispatch[j][c] / cap } else { 0.0 }
                })
                .collect()
        })
        .collect();

    Ok(ScarcityReport {
        tolerance: tol,
        formulation: result.formulation,
        scarce_pairs,
        congested_links,
        saturated_links,
        class_prices,
        utilization,
        mean_aggregation: "unweighted_node_mean".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{clear_baseline, clear_partial_service, uniform_penalties};
    use crate::lp::Tolerances;
    use crate::model::{ArcSpec, LatencyBound, Node, Scenario, WorkloadClass};
    use std::collections::HashMap;

    fn node(id: &str, price: f64, cap: f64) -> Node {
        Node {
            id: id.into(),
            metro: id.into(),
            latitude: 0.0,
            longitude: 0.0,
            site_power: 1.0,
            elec_price: price,
            capacity: vec![cap],
            energy_override: vec![None],
            opex_adder: 0.0,
        }
    }

    fn arc(route: f64, cap: f64) -> ArcSpec {
        ArcSpec {
            distance: 100.0,
            latency: 5.5,
            physical_capacity: cap,
            transfer_tariff: 0.0,
            routing_cost: vec![route],
            overhead_factor: 1.0,
        }
    }

    fn class() -> Vec<WorkloadClass> {
        vec![WorkloadClass::new("chat", "Chat", 1.0, 1.0, LatencyBound::Unconstrained)]
    }

    /// c → b → a chain: a is cheap, demand sits at c.
    fn chain(cap_ab: f64) -> Scenario {
        Scenario::new(
            "chain",
            vec![node("a", 1.0, 1e9), node("b", 5.0, 1e9), node("c", 10.0, 1e9)],
            vec![("c".into(), "b".into(), arc(0.5, f64::INFINITY)), ("b".into(), "a".into(), arc(0.25, cap_ab))],
            class(),
            HashMap::from([("c".to_string(), vec![2e6])]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn two_hop_path_reconstructs_price() {
        let r = clear_baseline(&chain(f64::INFINITY), &Tolerances::default());
        let d = decompose_path(&r, 2, 0).unwrap();
        assert_eq!(d.serving_node.as_deref(), Some("a"));
        assert_eq!(d.path.len(), 2);
        assert!((d.lmp - 1.75).abs() < 1e-9);
        assert!(d.residual.abs() < 1e-9);
        assert!(matches!(decompose_local(&r, 2, 0), Err(AnalysisError::NotProcessing { .. })));
    }

    #[test]
    fn congested_hop_carries_rent() {
        // b→a limited to 1 M tokens/s; the rest is served at b for 5.
        let r = clear_baseline(&chain(1.0), &Tolerances::default());
        let sol = r.solution().unwrap();
        let ba = r.scenario.arc_index(1, 0).unwrap();
        assert!((sol.congestion[ba] - (5.0 - 1.25)).abs() < 1e-9);
        let ArcIdentity::Active { residual } = arc_price_identity(&r, ba, 0).unwrap() else { panic!() };
        assert!(residual.abs() < 1e-9);
        let d = decompose_path(&r, 2, 0).unwrap();
        assert!(d.residual.abs() < 1e-9);
        let rep = scarcity_report(&r, DEFAULT_PRICE_TOL).unwrap();
        assert_eq!(rep.congested_links.len(), 1);
        assert_eq!(rep.saturated_links.len(), 1);
        assert!(rep.scarce_pairs.is_empty());
    }

    #[test]
    fn local_decomposition_with_slack_has_zero_scarcity() {
        let r = clear_baseline(&chain(f64::INFINITY), &Tolerances::default());
        let d = decompose_local(&r, 0, 0).unwrap();
        assert_eq!(d.scarcity, 0.0);
        assert!((d.lmp - d.energy).abs() < 1e-12);
    }

    #[test]
    fn zero_demand_prices_equal_cheapest_supply() {
        let sc = chain(f64::INFINITY).with_demand_scale(0.0);
        let r = clear_baseline(&sc, &Tolerances::default());
        let rep = scarcity_report(&r, DEFAULT_PRICE_TOL).unwrap();
        assert!(rep.scarce_pairs.is_empty() && rep.congested_links.is_empty());
        let p = &r.solution().unwrap().prices;
        assert!((p[2][0] - 1.75).abs() < 1e-9 && (p[1][0] - 1.25).abs() < 1e-9 && (p[0][0] - 1.0).abs() < 1e-9);
        assert_eq!(rep.class_prices[0].mean, rep.class_prices[0].demand_weighted_mean);
    }

    #[test]
    fn shed_origin_is_priced_at_penalty() {
        let sc = Scenario::new(
            "shed",
            vec![node("a", 1.0, 0.0)],
            vec![],
            class(),
            HashMap::from([("a".to_string(), vec![1e6])]),
            1.0,
        )
        .unwrap();
        let r = clear_partial_service(&sc, &uniform_penalties(&sc, 40.0), &Tolerances::default()).unwrap();
        let d = decompose_path(&r, 0, 0).unwrap();
        assert_eq!(d.serving_node, None);
        assert_eq!(d.penalty, 40.0);
        assert!(d.residual.abs() < 1e-9);
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let r = clear_baseline(&chain(f64::INFINITY), &Tolerances::default());
        assert!(matches!(decompose_path(&r, 9, 0), Err(AnalysisError::Index(_))));
    }
}
