//! Settlement of a cleared market at its own dual prices.
//!
//! Demand pays π on served tokens, compute providers receive `g + μ` on
//! dispatched tokens, and network providers are paid per carried unit. The
//! remainder is the merchandising surplus. All amounts are $/hr.

use serde::{Deserialize, Serialize};

use crate::clearing::{ClearingResult, Formulation};
use crate::error::AnalysisError;
use crate::model::{SECONDS_PER_HOUR, TOKENS_PER_MTOK};

/// What network providers are paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkLeg {
    /// Tariff plus congestion rent on carried traffic; congestion rent goes to
    /// the link owner and the surplus collects only private routing costs.
    #[default]
    TariffPlusCongestion,
    /// Tariff only; congestion rent stays with the market operator as surplus.
    TariffOnly,
}

impl NetworkLeg {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetworkLeg::TariffPlusCongestion => "tariff_plus_congestion",
            NetworkLeg::TariffOnly => "tariff_only",
        }
    }
}

impl std::str::FromStr for NetworkLeg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tariff_plus_congestion" | "tariff-plus-congestion" => Ok(NetworkLeg::TariffPlusCongestion),
            "tariff_only" | "tariff-only" => Ok(NetworkLeg::TariffOnly),
            other => Err(format!("unknown settlement convention `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSettlement {
    pub node: String,
    pub payments: f64,
    pub compute_revenue: f64,
    /// Unmet demand settled at zero, tokens/s.
    pub unserved: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcSettlement {
    pub from: String,
    pub to: String,
    /// tokens/s over all classes.
    pub carried_tokens: f64,
    /// GB/s at each class payload (times overhead in transfer-aware mode).
    pub carried_gb: f64,
    pub tariff_revenue: f64,
    pub congestion_revenue: f64,
    pub routing_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementLedger {
    pub formulation: Formulation,
    pub convention: NetworkLeg,
    /// `gb` in transfer-aware mode, `token_equivalent` otherwise.
    pub network_units: String,
    pub user_payments: f64,
    pub compute_revenue: f64,
    pub network_revenue: f64,
    pub surplus: f64,
    /// Components of the network leg regardless of convention.
    pub tariff_revenue: f64,
    pub congestion_revenue: f64,
    pub routing_cost: f64,
    /// True when some demand went unserved and paid nothing.
    pub has_unserved: bool,
    pub nodes: Vec<NodeSettlement>,
    pub arcs: Vec<ArcSettlement>,
}

impl SettlementLedger {
    /// `payments − (compute + network + surplus)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.user_payments - (self.compute_revenue + self.network_revenue + self.surplus)
    }
}

pub fn settle(result: &ClearingResult, convention: NetworkLeg) -> Result<SettlementLedger, AnalysisError> {
    let sol = result.solution()?;
    let s = &result.scenario;
    let k = s.classes.len();
    // tokens/s × $/M tokens → $/hr
    let hourly = |rate: f64, price: f64| rate / TOKENS_PER_MTOK * price * SECONDS_PER_HOUR;

    let mut nodes = Vec::with_capacity(s.nodes.len());
    let mut has_unserved = false;
    for (j, n) in s.nodes.iter().enumerate() {
        let mut ns = NodeSettlement { node: n.id.clone(), payments: 0.0, compute_revenue: 0.0, unserved: 0.0 };
        for c in 0..k {
            let served = s.effective_demand(j, c) - sol.unmet[j][c];
            ns.payments += hourly(served, sol.prices[j][c]);
            ns.compute_revenue += hourly(sol.dispatch[j][c], s.marginal_cost(j, c) + sol.scarcity[j][c]);
            ns.unserved += sol.unmet[j][c];
        }
        has_unserved |= ns.unserved > crate::pricing::ACTIVE_TOL;
        nodes.push(ns);
    }

    let transfer = result.formulation == Formulation::TransferAware;
    let mut arcs = Vec::with_capacity(s.arcs.len());
    for (a, arc) in s.arcs.iter().enumerate() {
        let mut st = ArcSettlement {
            from: s.nodes[arc.from].id.clone(),
            to: s.nodes[arc.to].id.clone(),
            carried_tokens: 0.0,
            carried_gb: 0.0,
            tariff_revenue: 0.0,
            congestion_revenue: 0.0,
            routing_cost: 0.0,
        };
        for c in 0..k {
            let f = sol.flows[a][c];
            let per_mtok = if transfer { s.transfer_intensity(a, c) } else { s.classes[c].payload };
            st.carried_tokens += f;
            st.carried_gb += f / TOKENS_PER_MTOK * per_mtok;
            st.tariff_revenue += hourly(f, arc.transfer_tariff * per_mtok);
            st.congestion_revenue += hourly(f, result.congestion_per_token(a, c)?);
            st.routing_cost += hourly(f, arc.routing_cost[c]);
        }
        arcs.push(st);
    }

    let user_payments: f64 = nodes.iter().map(|n| n.payments).sum();
    let compute_revenue: f64 = nodes.iter().map(|n| n.compute_revenue).sum();
    let tariff_revenue: f64 = arcs.iter().map(|a| a.tariff_revenue).sum();
    let congestion_revenue: f64 = arcs.iter().map(|a| a.congestion_revenue).sum();
    let routing_cost: f64 = arcs.iter().map(|a| a.routing_cost).sum();
    let network_revenue = match convention {
        NetworkLeg::TariffPlusCongestion => tariff_revenue + congestion_revenue,
        NetworkLeg::TariffOnly => tariff_revenue,
    };
    Ok(SettlementLedger {
        formulation: result.formulation,
        convention,
        network_units: if transfer { "gb" } else { "token_equivalent" }.into(),
        user_payments,
        compute_revenue,
        network_revenue,
        surplus: user_payments - compute_revenue - network_revenue,
        tariff_revenue,
        congestion_revenue,
        routing_cost,
        has_unserved,
        nodes,
        arcs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{clear_baseline, clear_partial_service, clear_transfer_aware, uniform_penalties};
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

    fn scenario(nodes: Vec<Node>, arcs: Vec<(String, String, ArcSpec)>, demand: &[(&str, f64)]) -> Scenario {
        Scenario::new(
            "t",
            nodes,
            arcs,
            vec![WorkloadClass::new("chat", "Chat", 1.0, 2.0, LatencyBound::Unconstrained)],
            demand.iter().map(|(n, d)| (n.to_string(), vec![*d])).collect::<HashMap<_, _>>(),
            1.0,
        )
        .unwrap()
    }

    fn link(cap: f64) -> ArcSpec {
        ArcSpec {
            distance: 10.0,
            latency: 5.05,
            physical_capacity: cap,
            transfer_tariff: 0.01,
            routing_cost: vec![0.0],
            overhead_factor: 1.0,
        }
    }

    #[test]
    fn single_node_settles_to_compute() {
        let sc = scenario(vec![node("a", 1.0, 1e7)], vec![], &[("a", 1e6)]);
        let l = settle(&clear_baseline(&sc, &Tolerances::default()), NetworkLeg::default()).unwrap();
        assert!((l.user_payments - 3600.0).abs() < 1e-9);
        assert!((l.compute_revenue - 3600.0).abs() < 1e-9);
        assert_eq!(l.network_revenue, 0.0);
        assert!(l.surplus.abs() < 1e-9);
    }

    #[test]
    fn uncongested_route_reconciles() {
        let sc = scenario(
            vec![node("a", 1.0, 1e9), node("b", 10.0, 1e9)],
            vec![("b".into(), "a".into(), link(f64::INFINITY))],
            &[("b", 1e6)],
        );
        let r = clear_baseline(&sc, &Tolerances::default());
        let l = settle(&r, NetworkLeg::default()).unwrap();
        let pi_b = r.solution().unwrap().prices[1][0];
        assert!((pi_b - 1.02).abs() < 1e-12);
        assert!((l.user_payments - pi_b * 3600.0).abs() < 1e-9);
        assert!((l.nodes[0].compute_revenue - 3600.0).abs() < 1e-9);
        // w·a·f = 0.01 $/GB × 2 GB/M × 1 M/s × 3600.
        assert!((l.network_revenue - 72.0).abs() < 1e-9);
        assert!(l.surplus.abs() < 1e-9);
        assert!((l.arcs[0].carried_gb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn congestion_rent_moves_between_legs() {
        // Link limited to 1 GB/s = 0.5 M tokens/s at 2 GB/M.
        let sc = scenario(
            vec![node("a", 1.0, 1e9), node("b", 10.0, 1e9)],
            vec![("b".into(), "a".into(), link(1.0))],
            &[("b", 1e6)],
        );
        for r in [clear_baseline(&sc, &Tolerances::default()), clear_transfer_aware(&sc, &Tolerances::default())] {
            let full = settle(&r, NetworkLeg::TariffPlusCongestion).unwrap();
            let only = settle(&r, NetworkLeg::TariffOnly).unwrap();
            assert!(full.congestion_revenue > 0.0);
            assert!(full.surplus.abs() < 1e-9);
            assert!((only.surplus - full.congestion_revenue).abs() < 1e-9);
            assert!(full.identity_residual().abs() < 1e-9 && only.identity_residual().abs() < 1e-9);
        }
    }

    #[test]
    fn unmet_demand_pays_nothing() {
        let sc = scenario(vec![node("a", 1.0, 5e5)], vec![], &[("a", 1e6)]);
        let r = clear_partial_service(&sc, &uniform_penalties(&sc, 50.0), &Tolerances::default()).unwrap();
        let l = settle(&r, NetworkLeg::default()).unwrap();
        assert!(l.has_unserved);
        // Half served at π = ρ = 50; compute gets g + μ = 50 on the same half.
        assert!((l.user_payments - 0.5 * 50.0 * 3600.0).abs() < 1e-6);
        assert!(l.surplus.abs() < 1e-6);
    }
}
