//! Two-node routed example checked against enumeration of its two pure
//! strategies: serve B's demand locally, or ship it to A.

use std::collections::HashMap;

use tokenflow_base::clearing::{clear_baseline, clear_transfer_aware};
use tokenflow_base::pricing::{arc_price_identity, decompose_path, ArcIdentity};
use tokenflow_base::settlement::{settle, NetworkLeg};
use tokenflow_base::{ArcSpec, LatencyBound, Node, Scenario, Tolerances, WorkloadClass};

fn node(id: &str, g: f64) -> Node {
    Node {
        id: id.into(),
        metro: id.into(),
        latitude: 0.0,
        longitude: 0.0,
        site_power: 1.0,
        elec_price: g,
        capacity: vec![1e9],
        energy_override: vec![None],
        opex_adder: 0.0,
    }
}

fn scenario(routing: f64, tariff: f64, payload: f64, demand: f64) -> Scenario {
    Scenario::new(
        "two",
        vec![node("a", 1.0), node("b", 10.0)],
        vec![(
            "b".into(),
            "a".into(),
            ArcSpec {
                distance: 100.0,
                latency: 5.5,
                physical_capacity: f64::INFINITY,
                transfer_tariff: tariff,
                routing_cost: vec![routing],
                overhead_factor: 1.0,
            },
        )],
        vec![WorkloadClass::new("k", "K", 1.0, payload, LatencyBound::Unconstrained)],
        HashMap::from([("b".to_string(), vec![demand])]),
        1.0,
    )
    .unwrap()
}

/// Cheapest of the two pure strategies, $/hr, and its marginal price, $/M tokens.
fn enumerate(g_a: f64, g_b: f64, delivery: f64, demand: f64) -> (f64, f64) {
    let local = g_b;
    let routed = g_a + delivery;
    let unit = local.min(routed);
    (unit * demand / 1e6 * 3600.0, unit)
}

#[test]
fn routed_demand_is_priced_by_the_cheaper_strategy() {
    let sc = scenario(0.5, 0.0, 1.0, 1e6);
    let r = clear_baseline(&sc, &Tolerances::default());
    let sol = r.solution().unwrap();
    let (cost, price) = enumerate(1.0, 10.0, 0.5, 1e6);
    assert!((sol.total_cost - cost).abs() < 1e-9);
    assert!((sol.prices[1][0] - price).abs() < 1e-12);
    assert!((sol.prices[1][0] - 1.5).abs() < 1e-12);
    assert!((sol.dispatch[0][0] - 1e6).abs() < 1e-6 && sol.dispatch[1][0].abs() < 1e-6);

    let d = decompose_path(&r, 1, 0).unwrap();
    assert_eq!(d.serving_node.as_deref(), Some("a"));
    assert!((d.energy - 1.0).abs() < 1e-12 && d.scarcity.abs() < 1e-12);
    assert_eq!(d.path.len(), 1);
    assert!((d.path[0].routing - 0.5).abs() < 1e-12 && d.path[0].congestion.abs() < 1e-12);
    assert!(d.residual.abs() < 1e-12);

    match arc_price_identity(&r, 0, 0).unwrap() {
        ArcIdentity::Active { residual } => assert!(residual.abs() < 1e-12),
        other => panic!("expected an active arc, got {other:?}"),
    }
}

#[test]
fn local_service_wins_when_delivery_is_expensive() {
    let sc = scenario(12.0, 0.0, 1.0, 1e6);
    let sol = clear_baseline(&sc, &Tolerances::default()).solution().unwrap().clone();
    let (cost, price) = enumerate(1.0, 10.0, 12.0, 1e6);
    assert!((sol.total_cost - cost).abs() < 1e-9);
    assert!((sol.prices[1][0] - price).abs() < 1e-12);
    assert!(sol.flows[0][0].abs() < 1e-6);
}

#[test]
fn routed_settlement_matches_hand_computation() {
    // Delivery is the tariff only: w·a = 0.25 $/GB × 2 GB/M = 0.5 $/M.
    let sc = scenario(0.0, 0.25, 2.0, 1e6);
    let r = clear_baseline(&sc, &Tolerances::default());
    let l = settle(&r, NetworkLeg::TariffPlusCongestion).unwrap();
    let pi_b = 1.5;
    assert!((l.user_payments - pi_b * 3600.0).abs() < 1e-9);
    assert!((l.nodes[0].compute_revenue - 3600.0).abs() < 1e-9);
    assert_eq!(l.nodes[1].compute_revenue, 0.0);
    // (w + η)·γ·f with η = 0: 0.25 × 2 × 1 M/s × 3600.
    assert!((l.network_revenue - 1800.0).abs() < 1e-9);
    assert!(l.surplus.abs() < 1e-9);
}

#[test]
fn image_flow_link_usage_in_gigabytes() {
    // 10,000 tokens/s at 100 GB/M tokens is 1 GB/s.
    let mut sc = scenario(0.0, 0.01, 100.0, 1e4);
    sc.arcs[0].physical_capacity = 50.0;
    let r = clear_transfer_aware(&sc, &Tolerances::default());
    let sol = r.solution().unwrap();
    assert!((sol.flows[0][0] - 1e4).abs() < 1e-6);
    assert!((sol.link_usage[0] - 1.0).abs() < 1e-9);
    assert_eq!(sol.link_capacity[0], 50.0);
}
