//! Domain types for the token-flow network.
//!
//! Quantities are stored in the units they are reported in: token rates in
//! tokens/s, energy in kWh per million tokens, payloads in GB per million
//! tokens, costs in $ per million tokens. The clearing layer rescales to
//! millions of tokens per second when it builds the linear program.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::ModelError;

/// Tokens per "M tokens" unit.
pub const TOKENS_PER_MTOK: f64 = 1.0e6;

/// Seconds per hour, used for $/s -> $/hr reporting.
pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Latency requirement of a workload class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyBound {
    Unconstrained,
    Millis(f64),
}

impl LatencyBound {
    /// Whether an arc with the given one-way latency may carry this class.
    pub fn admits(&self, latency_ms: f64) -> bool {
        match *self {
            LatencyBound::Unconstrained => true,
            LatencyBound::Millis(bound) => latency_ms <= bound,
        }
    }

    pub fn as_millis(&self) -> Option<f64> {
        match *self {
            LatencyBound::Unconstrained => None,
            LatencyBound::Millis(ms) => Some(ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadClass {
    pub id: String,
    pub label: String,
    /// kWh per M tokens.
    pub energy_intensity: f64,
    /// GB per M tokens.
    pub payload: f64,
    pub latency_bound: LatencyBound,
}

impl WorkloadClass {
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        energy_intensity: f64,
        payload: f64,
        latency_bound: LatencyBound,
    ) -> Self {
        Self {
            id: id.into(),
            label: label.into(),
            energy_intensity,
            payload,
            latency_bound,
        }
    }

    fn validate(&self, at: usize) -> Result<(), ModelError> {
        let key = |field: &str| format!("classes[{at}].{field}");
        if !(self.energy_intensity > 0.0 && self.energy_intensity.is_finite()) {
            return Err(ModelError::range(key("energy_intensity"), "energy intensity must be > 0"));
        }
        if !(self.payload > 0.0 && self.payload.is_finite()) {
            return Err(ModelError::range(key("payload"), "payload must be > 0"));
        }
        if let LatencyBound::Millis(ms) = self.latency_bound {
            if !(ms > 0.0 && ms.is_finite()) {
                return Err(ModelError::range(
                    key("latency_bound"),
                    "latency bound must be a finite positive value or unconstrained",
                ));
            }
        }
        Ok(())
    }
}

/// A compute site. Per-class vectors are aligned with the scenario's class list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub metro: String,
    pub latitude: f64,
    pub longitude: f64,
    /// MW.
    pub site_power: f64,
    /// $/kWh.
    pub elec_price: f64,
    /// tokens/s per class.
    pub capacity: Vec<f64>,
    /// kWh per M tokens per class; `None` falls back to the class intensity.
    pub energy_override: Vec<Option<f64>>,
    /// $/M tokens, added to every class.
    pub opex_adder: f64,
}

/// A directed communication link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    /// km.
    pub distance: f64,
    /// ms.
    pub latency: f64,
    /// GB/s; may be infinite.
    pub physical_capacity: f64,
    /// $/GB.
    pub transfer_tariff: f64,
    /// $/M tokens per class.
    pub routing_cost: Vec<f64>,
    pub overhead_factor: f64,
}

/// A full market instance. Index positions define every matrix layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc>,
    pub classes: Vec<WorkloadClass>,
    /// tokens/s, `demand[node][class]`, before `demand_scale`.
    pub demand: Vec<Vec<f64>>,
    pub demand_scale: f64,
}

impl Scenario {
    /// Builds a scenario and checks every invariant. Nodes are sorted by id
    /// and arcs by endpoint indices so that LP variable order is reproducible.
    pub fn new(
        name: impl Into<String>,
        mut nodes: Vec<Node>,
        arcs: Vec<(String, String, ArcSpec)>,
        classes: Vec<WorkloadClass>,
        demand: HashMap<String, Vec<f64>>,
        demand_scale: f64,
    ) -> Result<Self, ModelError> {
        nodes.sort_by(|a, b| a.id.cmp(&b.id));
        let index: HashMap<&str, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();

        let mut built = Vec::with_capacity(arcs.len());
        for (pos, (from, to, spec)) in arcs.into_iter().enumerate() {
            let f = *index
                .get(from.as_str())
                .ok_or_else(|| ModelError::DanglingArc { arc: pos, node: from.clone() })?;
            let t = *index
                .get(to.as_str())
                .ok_or_else(|| ModelError::DanglingArc { arc: pos, node: to.clone() })?;
            built.push(spec.into_arc(f, t));
        }
        built.sort_by(|a, b| (a.from, a.to).cmp(&(b.from, b.to)));

        let mut dem = vec![vec![0.0; classes.len()]; nodes.len()];
        for (id, row) in demand {
            let i = *index
                .get(id.as_str())
                .ok_or_else(|| ModelError::UnknownNode { key: format!("demand.{id}"), node: id.clone() })?;
            dem[i] = row;
        }

        let scenario = Scenario {
            name: name.into(),
            nodes,
            arcs: built,
            classes,
            demand: dem,
            demand_scale,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let k = self.classes.len();
        if self.nodes.is_empty() {
            return Err(ModelError::Structure("scenario has no nodes".into()));
        }
        if k == 0 {
            return Err(ModelError::Structure("scenario has no workload classes".into()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            c.validate(i)?;
            if self.classes[..i].iter().any(|o| o.id == c.id) {
                return Err(ModelError::Duplicate { key: format!("classes[{i}].id"), id: c.id.clone() });
            }
        }
        for (i, n) in self.nodes.iter().enumerate() {
            let key = |field: &str| format!("nodes[{}].{field}", n.id);
            if i > 0 && self.nodes[i - 1].id == n.id {
                return Err(ModelError::Duplicate { key: key("id"), id: n.id.clone() });
            }
            if !(n.elec_price >= 0.0 && n.elec_price.is_finite()) {
                return Err(ModelError::range(key("elec_price"), "electricity price must be ≥ 0"));
            }
            if !(-90.0..=90.0).contains(&n.latitude) {
                return Err(ModelError::range(key("latitude"), "latitude must be in [-90, 90]"));
            }
            if !(-180.0..=180.0).contains(&n.longitude) {
                return Err(ModelError::range(key("longitude"), "longitude must be in [-180, 180]"));
            }
            if !(n.opex_adder >= 0.0 && n.opex_adder.is_finite()) {
                return Err(ModelError::range(key("opex_adder"), "opex adder must be ≥ 0"));
            }
            if n.capacity.len() != k || n.energy_override.len() != k {
                return Err(ModelError::Shape { key: key("capacity"), expected: k });
            }
            if n.capacity.iter().any(|c| c.is_nan() || *c < 0.0) {
                return Err(ModelError::range(key("capacity"), "capacity must be ≥ 0"));
            }
            for e in n.energy_override.iter().flatten() {
                if !(*e > 0.0 && e.is_finite()) {
                    return Err(ModelError::range(key("energy_override"), "energy override must be > 0"));
                }
            }
        }
        for (e, arc) in self.arcs.iter().enumerate() {
            let key = |field: &str| format!("arcs[{e}].{field}");
            if arc.from >= self.nodes.len() || arc.to >= self.nodes.len() {
                return Err(ModelError::DanglingArc { arc: e, node: format!("#{}", arc.from.max(arc.to)) });
            }
            if arc.from == arc.to {
                return Err(ModelError::range(key("to"), "self-loop arcs are not allowed"));
            }
            if !(arc.latency > 0.0 && arc.latency.is_finite()) {
                return Err(ModelError::range(key("latency"), "latency must be > 0"));
            }
            if !(arc.distance >= 0.0 && arc.distance.is_finite()) {
                return Err(ModelError::range(key("distance"), "distance must be ≥ 0"));
            }
            if !(arc.physical_capacity > 0.0) {
                return Err(ModelError::range(key("physical_capacity"), "link capacity must be > 0"));
            }
            if !(arc.transfer_tariff >= 0.0 && arc.transfer_tariff.is_finite()) {
                return Err(ModelError::range(key("transfer_tariff"), "transfer tariff must be ≥ 0"));
            }
            if !(arc.overhead_factor >= 1.0 && arc.overhead_factor.is_finite()) {
                return Err(ModelError::range(key("overhead_factor"), "overhead factor must be ≥ 1"));
            }
            if arc.routing_cost.len() != k {
                return Err(ModelError::Shape { key: key("routing_cost"), expected: k });
            }
            if arc.routing_cost.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                return Err(ModelError::range(key("routing_cost"), "routing cost must be ≥ 0"));
            }
        }
        if self.demand.len() != self.nodes.len() || self.demand.iter().any(|r| r.len() != k) {
            return Err(ModelError::Shape { key: "demand".into(), expected: k });
        }
        for (i, row) in self.demand.iter().enumerate() {
            if row.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
                return Err(ModelError::range(
                    format!("demand.{}", self.nodes[i].id),
                    "demand must be ≥ 0",
                ));
            }
        }
        if !(self.demand_scale >= 0.0 && self.demand_scale.is_finite()) {
            return Err(ModelError::range("demand_scale", "demand scale must be ≥ 0"));
        }
        Ok(())
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn class_index(&self, id: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.id == id)
    }

    /// Index of the arc `from -> to`, if present.
    pub fn arc_index(&self, from: usize, to: usize) -> Option<usize> {
        self.arcs.iter().position(|a| a.from == from && a.to == to)
    }

    /// Same scenario with a different demand multiplier.
    pub fn with_demand_scale(&self, scale: f64) -> Scenario {
        Scenario { demand_scale: scale, ..self.clone() }
    }

    /// Demand after `demand_scale`, tokens/s.
    pub fn effective_demand(&self, node: usize, class: usize) -> f64 {
        self.demand[node][class] * self.demand_scale
    }

    pub fn total_demand(&self) -> f64 {
        (0..self.nodes.len())
            .flat_map(|j| (0..self.classes.len()).map(move |k| (j, k)))
            .map(|(j, k)| self.effective_demand(j, k))
            .sum()
    }

    /// e_{j,k}: kWh per M tokens.
    pub fn energy_intensity(&self, node: usize, class: usize) -> f64 {
        self.nodes[node].energy_override[class].unwrap_or(self.classes[class].energy_intensity)
    }

    /// Energy part of the marginal processing cost, $/M tokens.
    pub fn energy_cost(&self, node: usize, class: usize) -> f64 {
        self.nodes[node].elec_price * self.energy_intensity(node, class)
    }

    /// g_{j,k} including the opex adder, $/M tokens.
    pub fn marginal_cost(&self, node: usize, class: usize) -> f64 {
        self.energy_cost(node, class) + self.nodes[node].opex_adder
    }

    /// Smallest class payload, GB per M tokens.
    pub fn min_payload(&self) -> f64 {
        self.classes.iter().map(|c| c.payload).fold(f64::INFINITY, f64::min)
    }

    /// γ_{ij,k}: GB per M tokens carried on arc `arc` for class `class`.
    pub fn transfer_intensity(&self, arc: usize, class: usize) -> f64 {
        self.arcs[arc].overhead_factor * self.classes[class].payload
    }
}

/// Arc attributes keyed by endpoint ids, used while assembling a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcSpec {
    pub distance: f64,
    pub latency: f64,
    pub physical_capacity: f64,
    pub transfer_tariff: f64,
    pub routing_cost: Vec<f64>,
    pub overhead_factor: f64,
}

impl ArcSpec {
    fn into_arc(self, from: usize, to: usize) -> Arc {
        Arc {
            from,
            to,
            distance: self.distance,
            latency: self.latency,
            physical_capacity: self.physical_capacity,
            transfer_tariff: self.transfer_tariff,
            routing_cost: self.routing_cost,
            overhead_factor: self.overhead_factor,
        }
    }
}

/// Node-arc incidence matrix: +1 at the sending node, -1 at the receiving node.
pub fn incidence_matrix(scenario: &Scenario) -> Result<DMatrix<i8>, ModelError> {
    let n = scenario.nodes.len();
    let mut a = DMatrix::<i8>::zeros(n, scenario.arcs.len());
    for (e, arc) in scenario.arcs.iter().enumerate() {
        if arc.from >= n || arc.to >= n {
            return Err(ModelError::DanglingArc { arc: e, node: format!("#{}", arc.from.max(arc.to)) });
        }
        a[(arc.from, e)] = 1;
        a[(arc.to, e)] = -1;
    }
    Ok(a)
}

/// g_{j,k} = elec_price_j × e_{j,k} + opex_adder_j, node × class, $/M tokens.
pub fn marginal_cost_matrix(scenario: &Scenario) -> DMatrix<f64> {
    DMatrix::from_fn(scenario.nodes.len(), scenario.classes.len(), |j, k| {
        scenario.marginal_cost(j, k)
    })
}
