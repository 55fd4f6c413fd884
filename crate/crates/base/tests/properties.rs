//! Randomized invariants over small scenarios.

use std::collections::HashMap;

use proptest::prelude::*;
use tokenflow_base::clearing::{apply_opex_adder, clear_baseline, clear_partial_service, clear_transfer_aware, uniform_penalties};
use tokenflow_base::io::{parse_scenario_str, serialize_scenario};
use tokenflow_base::model::marginal_cost_matrix;
use tokenflow_base::settlement::{settle, NetworkLeg};
use tokenflow_base::{ArcSpec, LatencyBound, Node, Scenario, Tolerances, WorkloadClass};

#[derive(Debug, Clone)]
struct Spec {
    prices: Vec<f64>,
    caps: Vec<Vec<f64>>,
    demand: Vec<Vec<f64>>,
    arcs: Vec<(usize, usize, f64, f64, f64)>,
    classes: Vec<(f64, f64, Option<f64>)>,
}

fn spec(max_classes: usize) -> impl Strategy<Value = Spec> {
    (1usize..=4, 1usize..=max_classes).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(0.01f64..0.3, n),
            prop::collection::vec(prop::collection::vec(0.0f64..2e6, k), n),
            prop::collection::vec(prop::collection::vec(0.0f64..1e6, k), n),
            prop::collection::vec((0..n, 0..n, 1.0f64..30.0, prop_oneof![Just(f64::INFINITY), 0.05f64..5.0], 0.0f64..0.05), 0..6),
            prop::collection::vec((0.5f64..50.0, 0.2f64..20.0, prop::option::of(10.0f64..40.0)), k),
        )
            .prop_map(|(prices, caps, demand, arcs, classes)| Spec { prices, caps, demand, arcs, classes })
    })
}

fn build(s: &Spec) -> Scenario {
    let ids: Vec<String> = (0..s.prices.len()).map(|j| format!("n{j}")).collect();
    let k = s.classes.len();
    let nodes = ids
        .iter()
        .enumerate()
        .map(|(j, id)| Node {
            id: id.clone(),
            metro: format!("Metro {j}"),
            latitude: j as f64,
            longitude: -(j as f64),
            site_power: 10.0,
            elec_price: s.prices[j],
            capacity: s.caps[j].clone(),
            energy_override: vec![None; k],
            opex_adder: 0.0,
        })
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    let arcs = s
        .arcs
        .iter()
        .filter(|(a, b, ..)| a != b && seen.insert((*a, *b)))
        .map(|&(a, b, lat, cap, tariff)| {
            (
                ids[a].clone(),
                ids[b].clone(),
                ArcSpec {
                    distance: lat * 100.0,
                    latency: lat,
                    physical_capacity: cap,
                    transfer_tariff: tariff,
                    routing_cost: vec![0.0; k],
                    overhead_factor: 1.0,
                },
            )
        })
        .collect();
    let classes = s
        .classes
        .iter()
        .enumerate()
        .map(|(c, &(e, a, lat))| {
            let bound = lat.map_or(LatencyBound::Unconstrained, LatencyBound::Millis);
            WorkloadClass::new(format!("k{c}"), format!("Class {c}"), e, a, bound)
        })
        .collect();
    let demand: HashMap<String, Vec<f64>> = ids.iter().cloned().zip(s.demand.iter().cloned()).collect();
    Scenario::new("random", nodes, arcs, classes, demand, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn marginal_cost_is_linear_in_electricity_price(s in spec(2), j in 0usize..4) {
        let sc = build(&s);
        let j = j % sc.nodes.len();
        let mut doubled = sc.clone();
        doubled.nodes[j].elec_price *= 2.0;
        let (m, d) = (marginal_cost_matrix(&sc), marginal_cost_matrix(&doubled));
        for c in 0..sc.classes.len() {
            prop_assert!(m[(j, c)] >= 0.0);
            prop_assert!((d[(j, c)] - 2.0 * m[(j, c)]).abs() <= 1e-15 * m[(j, c)].max(1.0));
        }
    }

    #[test]
    fn settlement_balances_on_feasible_clearings(s in spec(2)) {
        let sc = build(&s);
        let tol = Tolerances::default();
        for r in [clear_baseline(&sc, &tol), clear_transfer_aware(&sc, &tol)] {
            if !r.is_feasible() { continue; }
            for conv in [NetworkLeg::TariffPlusCongestion, NetworkLeg::TariffOnly] {
                let l = settle(&r, conv).unwrap();
                prop_assert!(l.identity_residual().abs() <= 1e-9 * (1.0 + l.user_payments.abs()));
                prop_assert!(l.surplus >= -1e-6, "surplus {}", l.surplus);
            }
        }
    }

    #[test]
    fn processing_nodes_price_at_cost_plus_scarcity(s in spec(2)) {
        let sc = build(&s);
        let r = clear_baseline(&sc, &Tolerances::default());
        if let Ok(sol) = r.solution() {
            for j in 0..sc.nodes.len() {
                for c in 0..sc.classes.len() {
                    if sol.dispatch[j][c] > 1e-3 {
                        let g = sc.marginal_cost(j, c);
                        prop_assert!((sol.prices[j][c] - g - sol.scarcity[j][c]).abs() <= 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn uniform_opex_adder_shifts_single_class_prices(s in spec(1), delta in 0.0f64..2.0) {
        let sc = build(&s);
        let tol = Tolerances::default();
        let (a, b) = (clear_baseline(&sc, &tol), clear_baseline(&apply_opex_adder(&sc, delta).unwrap(), &tol));
        prop_assert_eq!(a.status, b.status);
        if let (Ok(x), Ok(y)) = (a.solution(), b.solution()) {
            let total: f64 = sc.total_demand() / 1e6 * 3600.0;
            prop_assert!((y.total_cost - x.total_cost - delta * total).abs() <= 1e-7 * (1.0 + y.total_cost));
            for j in 0..sc.nodes.len() {
                if sc.effective_demand(j, 0) > 0.0 {
                    prop_assert!((y.prices[j][0] - x.prices[j][0] - delta).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn partial_service_prices_never_exceed_the_penalty(s in spec(2), rho in 0.5f64..100.0) {
        let sc = build(&s);
        let r = clear_partial_service(&sc, &uniform_penalties(&sc, rho), &Tolerances::default()).unwrap();
        let sol = r.solution().unwrap();
        prop_assert!(sol.prices.iter().flatten().all(|&p| p <= rho + 1e-6));
        prop_assert!(sol.unmet.iter().flatten().all(|&y| y >= 0.0));
    }

    #[test]
    fn scenario_files_round_trip(s in spec(2)) {
        let sc = build(&s);
        let text = serialize_scenario(&sc);
        let back = parse_scenario_str(&text, "random.toml").unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(serialize_scenario(&back), text);
    }
}
