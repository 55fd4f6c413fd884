//! Experiment drivers: demand sweeps, formulation comparison, latency
//! tightening and large-registry runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::clearing::{apply_opex_adder, clear_baseline, clear_transfer_aware, clear_with, ClearingResult, Formulation};
use crate::error::{AnalysisError, ModelError};
use crate::lp::{LpStatus, Tolerances};
use crate::model::{LatencyBound, Scenario, SECONDS_PER_HOUR, TOKENS_PER_MTOK};
use crate::pricing::{scarcity_report, ScarcityReport, DEFAULT_PRICE_TOL};

pub const DEFAULT_SCALES: [f64; 10] = [1.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0];

/// Cost increase the reference opex adder is calibrated to at the 35× load of
/// the five-node testbed, $/hr.
pub const REFERENCE_OPEX_INCREASE: f64 = 163_140.0 - 123_635.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub status: LpStatus,
    pub feasible: bool,
    /// $/hr.
    pub total_cost: Option<f64>,
    pub scarce_pairs: Option<usize>,
    pub congested_links: Option<usize>,
    pub saturated_links: Option<usize>,
    /// Unweighted node mean of π per class, $/M tokens.
    pub mean_prices: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub formulation: Formulation,
    pub classes: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, scale: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.scale == scale)
    }

    pub fn mean_price(&self, scale: f64, class: &str) -> Option<f64> {
        let c = self.classes.iter().position(|k| k == class)?;
        self.row(scale)?.mean_prices.as_ref().map(|m| m[c])
    }
}

fn check_scales(scales: &[f64]) -> Result<(), ModelError> {
    if scales.is_empty() {
        return Err(ModelError::range("scales", "at least one scale is required"));
    }
    if scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(ModelError::range("scales", "scales must be finite and > 0"));
    }
    if scales.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::range("scales", "scales must be strictly increasing"));
    }
    Ok(())
}

/// One independent clearing per scale. Infeasible scales become rows without prices.
pub fn demand_sweep(
    scenario: &Scenario,
    scales: &[f64],
    formulation: Formulation,
    penalty: f64,
    tol: &Tolerances,
) -> Result<SweepTable, ModelError> {
    check_scales(scales)?;
    let results: Vec<Result<ClearingResult, ModelError>> = scales
        .par_iter()
        .map(|&s| clear_with(&scenario.with_demand_scale(s), formulation, penalty, tol))
        .collect();
    let mut rows = Vec::with_capacity(scales.len());
    for (scale, r) in scales.iter().zip(results) {
        let r = r?;
        let report = scarcity_report(&r, DEFAULT_PRICE_TOL).ok();
        rows.push(SweepRow {
            scale: *scale,
            status: r.status,
            feasible: r.is_feasible(),
            total_cost: r.solution.as_ref().map(|s| s.total_cost),
            scarce_pairs: report.as_ref().map(|m| m.scarce_pairs.len()),
            congested_links: report.as_ref().map(|m| m.congested_links.len()),
            saturated_links: report.as_ref().map(|m| m.saturated_links.len()),
            mean_prices: report.map(|m| m.class_prices.iter().map(|c| c.mean).collect()),
        });
    }
    Ok(SweepTable {
        formulation,
        classes: scenario.classes.iter().map(|c| c.id.clone()).collect(),
        rows,
    })
}

/// Uniform adder that raises the cost of serving all demand by `increase` $/hr.
pub fn opex_adder_for_increase(scenario: &Scenario, increase: f64) -> f64 {
    let total_mtok_per_hr = scenario.total_demand() / TOKENS_PER_MTOK * SECONDS_PER_HOUR;
    if total_mtok_per_hr > 0.0 {
        increase / total_mtok_per_hr
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub formulation: Formulation,
    pub opex_adder: f64,
    pub status: LpStatus,
    pub feasible: bool,
    pub total_cost: Option<f64>,
    pub mean_prices: Option<Vec<f64>>,
    pub congested_links: Option<usize>,
    pub saturated_links: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub demand_scale: f64,
    pub classes: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub struct Comparison {
    pub table: ComparisonTable,
    pub baseline: ClearingResult,
    pub transfer: ClearingResult,
    pub opex: ClearingResult,
}

/// Baseline, transfer-aware and baseline-with-opex-adder on the same scenario.
pub fn compare_formulations(scenario: &Scenario, opex_adder: f64, tol: &Tolerances) -> Result<Comparison, ModelError> {
    let with_opex = apply_opex_adder(scenario, opex_adder)?;
    let (baseline, (transfer, opex)) = rayon::join(
        || clear_baseline(scenario, tol),
        || rayon::join(|| clear_transfer_aware(scenario, tol), || clear_baseline(&with_opex, tol)),
    );
    let row = |label: &str, r: &ClearingResult, adder: f64| {
        let report = scarcity_report(r, DEFAULT_PRICE_TOL).ok();
        ComparisonRow {
            label: label.into(),
            formulation: r.formulation,
            opex_adder: adder,
            status: r.status,
            feasible: r.is_feasible(),
            total_cost: r.solution.as_ref().map(|s| s.total_cost),
            mean_prices: report.as_ref().map(|m| m.class_prices.iter().map(|c| c.mean).collect()),
            congested_links: report.as_ref().map(|m| m.congested_links.len()),
            saturated_links: report.map(|m| m.saturated_links.len()),
        }
    };
    let table = ComparisonTable {
        scenario: scenario.name.clone(),
        demand_scale: scenario.demand_scale,
        classes: scenario.classes.iter().map(|c| c.id.clone()).collect(),
        rows: vec![
            row("baseline", &baseline, 0.0),
            row("transfer", &transfer, 0.0),
            row("opex", &opex, opex_adder),
        ],
    };
    Ok(Comparison { table, baseline, transfer, opex })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub node: String,
    pub class: String,
    pub before: f64,
    /// None when the tightened clearing is infeasible.
    pub after: Option<f64>,
    /// Connected component of the node under the tightened arc set for this class.
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassComponents {
    pub class: String,
    /// Node ids per component, each sorted, components ordered by first node.
    pub components: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub bounds: BTreeMap<String, f64>,
    pub before_status: LpStatus,
    pub after_status: LpStatus,
    pub before_cost: f64,
    pub after_cost: Option<f64>,
    /// Percent.
    pub cost_change: Option<f64>,
    pub components: Vec<ClassComponents>,
    pub rows: Vec<LatencyRow>,
}

impl LatencyReport {
    pub fn row(&self, node: &str, class: &str) -> Option<&LatencyRow> {
        self.rows.iter().find(|r| r.node == node && r.class == class)
    }

    pub fn components_of(&self, class: &str) -> Option<&[Vec<String>]> {
        self.components.iter().find(|c| c.class == class).map(|c| c.components.as_slice())
    }
}

/// Components of the undirected graph formed by arcs admissible for `class`.
pub fn latency_components(scenario: &Scenario, class: usize) -> Vec<Vec<usize>> {
    let n = scenario.nodes.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for arc in &scenario.arcs {
        if scenario.classes[class].latency_bound.admits(arc.latency) {
            let (a, b) = (find(&mut parent, arc.from), find(&mut parent, arc.to));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for j in 0..n {
        let root = find(&mut parent, j);
        groups.entry(root).or_default().push(j);
    }
    groups.into_values().collect()
}

/// Clears the baseline before and after tightening class latency bounds (ms).
pub fn latency_experiment(scenario: &Scenario, bounds: &[(String, f64)], tol: &Tolerances) -> Result<LatencyReport, AnalysisError> {
    let mut tight = scenario.clone();
    for (id, ms) in bounds {
        let c = scenario
            .class_index(id)
            .ok_or_else(|| ModelError::UnknownClass { key: "bounds".into(), class: id.clone() })?;
        if !(*ms > 0.0 && ms.is_finite()) {
            return Err(ModelError::range(format!("bounds.{id}"), "latency bound must be > 0").into());
        }
        if let Some(orig) = scenario.classes[c].latency_bound.as_millis() {
            if *ms > orig {
                return Err(ModelError::range(format!("bounds.{id}"), format!("tightened bound {ms} ms exceeds the current {orig} ms")).into());
            }
        }
        tight.classes[c].latency_bound = LatencyBound::Millis(*ms);
    }
    let (before, after) = rayon::join(|| clear_baseline(scenario, tol), || clear_baseline(&tight, tol));
    let b = before.solution()?;
    let a = after.solution.as_ref();

    let k = scenario.classes.len();
    let clusters: Vec<Vec<Vec<usize>>> = (0..k).map(|c| latency_components(&tight, c)).collect();
    let mut rows = Vec::new();
    for (j, node) in scenario.nodes.iter().enumerate() {
        for c in 0..k {
            rows.push(LatencyRow {
                node: node.id.clone(),
                class: scenario.classes[c].id.clone(),
                before: b.prices[j][c],
                after: a.map(|s| s.prices[j][c]),
                cluster: clusters[c].iter().position(|g| g.contains(&j)).unwrap_or(0),
            });
        }
    }
    let components = clusters
        .iter()
        .enumerate()
        .map(|(c, groups)| ClassComponents {
            class: scenario.classes[c].id.clone(),
            components: groups
                .iter()
                .map(|g| {
                    let mut ids: Vec<String> = g.iter().map(|&j| scenario.nodes[j].id.clone()).collect();
                    ids.sort();
                    ids
                })
                .collect(),
        })
        .collect();
    let after_cost = a.map(|s| s.total_cost);
    Ok(LatencyReport {
        bounds: bounds.iter().cloned().collect(),
        before_status: before.status,
        after_status: after.status,
        before_cost: b.total_cost,
        after_cost,
        cost_change: after_cost.map(|c| 100.0 * (c - b.total_cost) / b.total_cost),
        components,
        rows,
    })
}

pub struct ScaleUpRun {
    pub result: ClearingResult,
    pub report: Option<ScarcityReport>,
}

pub fn scale_up_run(scenario: &Scenario, scale: f64, formulation: Formulation, penalty: f64, tol: &Tolerances) -> Result<ScaleUpRun, ModelError> {
    check_scales(&[scale])?;
    let result = clear_with(&scenario.with_demand_scale(scale), formulation, penalty, tol)?;
    let report = scarcity_report(&result, DEFAULT_PRICE_TOL).ok();
    Ok(ScaleUpRun { result, report })
}

/// Share of `class` dispatch served by nodes whose electricity price is at or
/// below the lower quartile of node prices.
pub fn low_price_share(result: &ClearingResult, class: usize) -> Result<f64, AnalysisError> {
    let s = &result.scenario;
    let sol = result.solution()?;
    let mut prices: Vec<f64> = s.nodes.iter().map(|n| n.elec_price).collect();
    prices.sort_by(f64::total_cmp);
    let q = prices[(prices.len() - 1) / 4];
    let total: f64 = (0..s.nodes.len()).map(|j| sol.dispatch[j][class]).sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let cheap: f64 = (0..s.nodes.len()).filter(|&j| s.nodes[j].elec_price <= q).map(|j| sol.dispatch[j][class]).sum();
    Ok(cheap / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArcSpec, Node, WorkloadClass};
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

    fn link(latency: f64) -> ArcSpec {
        ArcSpec {
            distance: 0.0,
            latency,
            physical_capacity: f64::INFINITY,
            transfer_tariff: 0.0,
            routing_cost: vec![0.0],
            overhead_factor: 1.0,
        }
    }

    fn pair() -> Scenario {
        Scenario::new(
            "pair",
            vec![node("a", 1.0, 1e6), node("b", 2.0, 1e6)],
            vec![("a".into(), "b".into(), link(10.0)), ("b".into(), "a".into(), link(10.0))],
            vec![WorkloadClass::new("chat", "Chat", 1.0, 1.0, LatencyBound::Millis(50.0))],
            HashMap::from([("a".to_string(), vec![4e5]), ("b".to_string(), vec![4e5])]),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn sweep_marks_infeasible_rows() {
        let t = demand_sweep(&pair(), &[1.0, 2.0, 3.0], Formulation::Baseline, 0.0, &Tolerances::default()).unwrap();
        assert!(t.rows[0].feasible && t.rows[1].feasible);
        assert!(!t.rows[2].feasible && t.rows[2].mean_prices.is_none());
        // At 2× the cheap node is full and scarce.
        assert_eq!(t.rows[1].scarce_pairs, Some(1));
    }

    #[test]
    fn sweep_rejects_unsorted_scales() {
        assert!(demand_sweep(&pair(), &[2.0, 1.0], Formulation::Baseline, 0.0, &Tolerances::default()).is_err());
    }

    #[test]
    fn no_tightening_leaves_prices() {
        let r = latency_experiment(&pair(), &[], &Tolerances::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.after == Some(row.before)));
        assert_eq!(r.cost_change, Some(0.0));
    }

    #[test]
    fn tightening_splits_the_pair() {
        let r = latency_experiment(&pair(), &[("chat".into(), 5.0)], &Tolerances::default()).unwrap();
        assert_eq!(r.components_of("chat").unwrap().len(), 2);
        assert_eq!(r.row("b", "chat").unwrap().after, Some(2.0));
        assert!(latency_experiment(&pair(), &[("chat".into(), 80.0)], &Tolerances::default()).is_err());
    }

    #[test]
    fn opex_row_shifts_cost_only() {
        let sc = pair();
        let adder = opex_adder_for_increase(&sc, 360.0);
        assert!((adder - 0.125).abs() < 1e-15);
        let c = compare_formulations(&sc, adder, &Tolerances::default()).unwrap();
        let base = c.table.row("baseline").unwrap().total_cost.unwrap();
        let opex = c.table.row("opex").unwrap().total_cost.unwrap();
        assert!((opex - base - 360.0).abs() < 1e-9);
        assert_eq!(c.baseline.solution.unwrap().dispatch, c.opex.solution.unwrap().dispatch);
    }

    #[test]
    fn low_price_share_counts_cheapest_quartile() {
        let r = clear_baseline(&pair(), &Tolerances::default());
        assert!((low_price_share(&r, 0).unwrap() - 1.0).abs() < 1e-12);
    }
}
