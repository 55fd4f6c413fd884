//! Scenario construction from a hub registry: capacities from site power,
//! distance-limited arcs with a fiber latency model, and population-weighted
//! demand.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

use crate::error::ModelError;
use crate::model::{ArcSpec, LatencyBound, Node, Scenario, WorkloadClass};

/// Mean Earth radius, km.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

const BITS_PER_BYTE: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubRegistryEntry {
    pub id: String,
    pub metro: String,
    pub state: String,
    pub latitude: f64,
    pub longitude: f64,
    pub facility_count: u32,
    /// MW.
    pub est_power: f64,
    /// $/kWh.
    pub elec_price: f64,
    pub population_weight: f64,
}

/// Pipeline coefficients. Per-class vectors follow the scenario class order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    /// tokens/s per MW.
    pub throughput_per_mw: Vec<f64>,
    pub max_arc_distance_km: f64,
    pub backbone: BTreeSet<String>,
    pub backbone_capacity_gbps: f64,
    pub default_capacity_gbps: f64,
    pub per_hop_overhead_ms: f64,
    pub fiber_speed_km_per_ms: f64,
    /// $/GB.
    pub transfer_tariff: f64,
    /// tokens/s per class at population weight 1.0.
    pub base_demand_rates: Vec<f64>,
    pub demand_scale: f64,
}

impl PipelineParams {
    /// Coefficients of the reference US case study, aligned with [`reference_classes`].
    pub fn reference() -> Self {
        PipelineParams {
            throughput_per_mw: vec![5000.0, 200.0, 4000.0, 1000.0],
            max_arc_distance_km: 2500.0,
            backbone: ["ashburn", "dallas", "silicon_valley", "chicago", "atlanta", "new_york"]
                .into_iter()
                .map(String::from)
                .collect(),
            backbone_capacity_gbps: 100.0,
            default_capacity_gbps: 10.0,
            per_hop_overhead_ms: 5.0,
            fiber_speed_km_per_ms: 200.0,
            transfer_tariff: 0.01,
            base_demand_rates: vec![50_000.0, 5_000.0, 30_000.0, 10_000.0],
            demand_scale: 1.0,
        }
    }

    pub fn validate(&self, registry: &[HubRegistryEntry], classes: usize) -> Result<(), ModelError> {
        if self.throughput_per_mw.len() != classes {
            return Err(ModelError::Shape { key: "pipeline.throughput_per_mw".into(), expected: classes });
        }
        if self.base_demand_rates.len() != classes {
            return Err(ModelError::Shape { key: "pipeline.base_demand_rates".into(), expected: classes });
        }
        let positive = [
            ("pipeline.max_arc_distance_km", self.max_arc_distance_km),
            ("pipeline.backbone_capacity_gbps", self.backbone_capacity_gbps),
            ("pipeline.default_capacity_gbps", self.default_capacity_gbps),
            ("pipeline.per_hop_overhead_ms", self.per_hop_overhead_ms),
            ("pipeline.fiber_speed_km_per_ms", self.fiber_speed_km_per_ms),
            ("pipeline.transfer_tariff", self.transfer_tariff),
            ("pipeline.demand_scale", self.demand_scale),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(ModelError::range(key, "must be > 0"));
            }
        }
        for (i, v) in self.throughput_per_mw.iter().chain(&self.base_demand_rates).enumerate() {
            if !(*v > 0.0 && v.is_finite()) {
                let key = if i < classes {
                    format!("pipeline.throughput_per_mw[{i}]")
                } else {
                    format!("pipeline.base_demand_rates[{}]", i - classes)
                };
                return Err(ModelError::range(key, "must be > 0"));
            }
        }
        for hub in &self.backbone {
            if !registry.iter().any(|h| &h.id == hub) {
                return Err(ModelError::UnknownNode { key: "pipeline.backbone".into(), node: hub.clone() });
            }
        }
        Ok(())
    }
}

/// The four workload classes of the reference case study.
pub fn reference_classes() -> Vec<WorkloadClass> {
    vec![
        WorkloadClass::new("chat", "Interactive chat", 1.0, 0.5, LatencyBound::Millis(100.0)),
        WorkloadClass::new("image", "Image generation", 500.0, 100.0, LatencyBound::Unconstrained),
        WorkloadClass::new("code", "Code review", 2.0, 1.0, LatencyBound::Millis(200.0)),
        WorkloadClass::new("batch", "Batch training", 10.0, 10.0, LatencyBound::Unconstrained),
    ]
}

impl HubRegistryEntry {
    fn validate(&self, at: usize) -> Result<(), ModelError> {
        let key = |f: &str| format!("hubs[{at}].{f}");
        if !(self.est_power > 0.0 && self.est_power.is_finite()) {
            return Err(ModelError::range(key("est_power_mw"), "estimated power must be > 0"));
        }
        if !(self.population_weight >= 0.0 && self.population_weight.is_finite()) {
            return Err(ModelError::range(key("population_weight"), "population weight must be ≥ 0"));
        }
        if !(self.elec_price >= 0.0 && self.elec_price.is_finite()) {
            return Err(ModelError::range(key("elec_price_usd_per_kwh"), "electricity price must be ≥ 0"));
        }
        Ok(())
    }
}

/// C_{j,k} = est_power × throughput_k, tokens/s.
pub fn derive_capacity(entry: &HubRegistryEntry, params: &PipelineParams) -> Vec<f64> {
    params.throughput_per_mw.iter().map(|t| entry.est_power * t).collect()
}

/// Great-circle distance in km.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Two directed arcs for every hub pair within `max_arc_distance_km`.
pub fn build_arcs(registry: &[HubRegistryEntry], params: &PipelineParams) -> Vec<(String, String, ArcSpec)> {
    let classes = params.throughput_per_mw.len();
    let mut arcs = Vec::new();
    for (i, a) in registry.iter().enumerate() {
        for b in &registry[i + 1..] {
            let distance = haversine_km(a.latitude, a.longitude, b.latitude, b.longitude);
            if distance > params.max_arc_distance_km {
                continue;
            }
            let gbps = if params.backbone.contains(&a.id) && params.backbone.contains(&b.id) {
                params.backbone_capacity_gbps
            } else {
                params.default_capacity_gbps
            };
            let spec = ArcSpec {
                distance,
                latency: distance / params.fiber_speed_km_per_ms + params.per_hop_overhead_ms,
                physical_capacity: gbps / BITS_PER_BYTE,
                transfer_tariff: params.transfer_tariff,
                routing_cost: vec![0.0; classes],
                overhead_factor: 1.0,
            };
            arcs.push((a.id.clone(), b.id.clone(), spec.clone()));
            arcs.push((b.id.clone(), a.id.clone(), spec));
        }
    }
    arcs
}

/// d_{j,k} = weight_j × base_rate_k × demand_scale, tokens/s, in registry order.
pub fn generate_demand(registry: &[HubRegistryEntry], params: &PipelineParams) -> Vec<Vec<f64>> {
    registry
        .iter()
        .map(|h| {
            params
                .base_demand_rates
                .iter()
                .map(|r| h.population_weight * r * params.demand_scale)
                .collect()
        })
        .collect()
}

/// Runs the full pipeline and returns a validated scenario.
pub fn build_scenario(
    name: &str,
    registry: &[HubRegistryEntry],
    classes: Vec<WorkloadClass>,
    params: &PipelineParams,
) -> Result<Scenario, ModelError> {
    if registry.is_empty() {
        return Err(ModelError::Structure("hub registry is empty".into()));
    }
    for (i, h) in registry.iter().enumerate() {
        h.validate(i)?;
        if registry[..i].iter().any(|o| o.id == h.id) {
            return Err(ModelError::Duplicate { key: format!("hubs[{i}].id"), id: h.id.clone() });
        }
    }
    params.validate(registry, classes.len())?;

    let k = classes.len();
    let nodes = registry
        .iter()
        .map(|h| Node {
            id: h.id.clone(),
            metro: format!("{}, {}", h.metro, h.state),
            latitude: h.latitude,
            longitude: h.longitude,
            site_power: h.est_power,
            elec_price: h.elec_price,
            capacity: derive_capacity(h, params),
            energy_override: vec![None; k],
            opex_adder: 0.0,
        })
        .collect();
    let demand: HashMap<String, Vec<f64>> = registry
        .iter()
        .map(|h| h.id.clone())
        .zip(generate_demand(registry, params))
        .collect();
    Scenario::new(name, nodes, build_arcs(registry, params), classes, demand, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hub(id: &str, lat: f64, lon: f64, mw: f64, w: f64) -> HubRegistryEntry {
        HubRegistryEntry {
            id: id.into(),
            metro: id.into(),
            state: "XX".into(),
            latitude: lat,
            longitude: lon,
            facility_count: 1,
            est_power: mw,
            elec_price: 0.05,
            population_weight: w,
        }
    }

    #[test]
    fn capacity_from_site_power() {
        let p = PipelineParams::reference();
        assert_eq!(derive_capacity(&hub("ashburn", 0.0, 0.0, 2000.0, 1.0), &p)[0], 10_000_000.0);
        assert_eq!(derive_capacity(&hub("seattle", 0.0, 0.0, 600.0, 1.0), &p)[1], 120_000.0);
        assert_eq!(derive_capacity(&hub("tiny", 0.0, 0.0, 1.0, 0.0), &p)[3], 1000.0);
    }

    #[test]
    fn haversine_identity_and_antipode() {
        assert_eq!(haversine_km(38.96, -77.49, 38.96, -77.49), 0.0);
        let d = haversine_km(10.0, 20.0, -10.0, -160.0);
        assert!((d - std::f64::consts::PI * EARTH_RADIUS_KM).abs() < 0.1, "{d}");
    }

    #[test]
    fn latency_formula_on_1000_km_pair() {
        // One degree of latitude is 6371·π/180 km, so pick the span that gives 1000 km.
        let span = 1000.0 / EARTH_RADIUS_KM * 180.0 / std::f64::consts::PI;
        let reg = vec![hub("a", 0.0, 0.0, 1.0, 1.0), hub("b", span, 0.0, 1.0, 1.0)];
        let arcs = build_arcs(&reg, &PipelineParams::reference());
        assert_eq!(arcs.len(), 2);
        assert!((arcs[0].2.latency - 10.0).abs() < 1e-9);
        assert_eq!(arcs[0].2.physical_capacity, 1.25);
    }

    #[test]
    fn backbone_pairs_get_backbone_capacity() {
        let reg = vec![
            hub("ashburn", 38.96, -77.49, 1.0, 1.0),
            hub("chicago", 41.88, -87.63, 1.0, 1.0),
            hub("seattle", 47.61, -122.33, 1.0, 1.0),
        ];
        let mut p = PipelineParams::reference();
        p.max_arc_distance_km = 5000.0;
        let arcs = build_arcs(&reg, &p);
        let cap = |a: &str, b: &str| {
            arcs.iter().find(|(f, t, _)| f == a && t == b).map(|x| x.2.physical_capacity)
        };
        assert_eq!(cap("ashburn", "chicago"), Some(12.5));
        assert_eq!(cap("seattle", "chicago"), Some(1.25));
    }

    #[test]
    fn isolated_hub_has_no_arcs() {
        let reg = vec![hub("a", 0.0, 0.0, 1.0, 1.0), hub("b", 0.0, 90.0, 1.0, 1.0)];
        assert!(build_arcs(&reg, &PipelineParams::reference()).is_empty());
    }

    #[test]
    fn demand_from_weights() {
        let mut p = PipelineParams::reference();
        let reg = vec![hub("a", 0.0, 0.0, 1.0, 1.0), hub("b", 0.0, 0.0, 1.0, 0.0)];
        let d = generate_demand(&reg, &p);
        assert_eq!(d[0][0], 50_000.0);
        assert!(d[1].iter().all(|&v| v == 0.0));
        p.demand_scale = 2.0;
        assert_eq!(generate_demand(&reg, &p)[0][1], 10_000.0);
    }

    #[test]
    fn backbone_must_reference_registry() {
        let reg = vec![hub("a", 0.0, 0.0, 1.0, 1.0)];
        let err = build_scenario("x", &reg, reference_classes(), &PipelineParams::reference()).unwrap_err();
        assert!(matches!(err, ModelError::UnknownNode { .. }));
    }

    #[test]
    fn nonpositive_power_rejected() {
        let mut p = PipelineParams::reference();
        p.backbone.clear();
        let reg = vec![hub("a", 0.0, 0.0, 0.0, 1.0)];
        assert!(build_scenario("x", &reg, reference_classes(), &p).is_err());
    }
}
