//! Scenario files and result export.
//!
//! A scenario file is TOML in one of two forms. The *registry* form lists
//! hubs and pipeline coefficients and is expanded by
//! [`crate::pipeline::build_scenario`]; the *explicit* form lists nodes, arcs
//! and demand directly. [`serialize_scenario`] always writes the explicit form.
//! Results are exported as CSV with units in the column names and as JSON.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::ModelError;
use crate::model::{ArcSpec, LatencyBound, Node, Scenario, WorkloadClass};
use crate::pipeline::{build_scenario, HubRegistryEntry, PipelineParams};

const FIVE_NODE: &str = include_str!("../data/five_node.toml");
const US_TWENTY: &str = include_str!("../data/us_twenty.toml");

/// Names accepted by [`load_scenario`] in place of a path.
pub const BUILTIN_SCENARIOS: [&str; 2] = ["five_node", "us_twenty"];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name {
        "five_node" => Some(FIVE_NODE),
        "us_twenty" => Some(US_TWENTY),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticCode {
    Io,
    Syntax,
    MissingField,
    UnknownKey,
    InvalidValue,
    Range,
    DanglingArc,
    UnknownNode,
    UnknownClass,
    Duplicate,
    Shape,
    Structure,
}

impl DiagnosticCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            DiagnosticCode::Io => "io",
            DiagnosticCode::Syntax => "syntax",
            DiagnosticCode::MissingField => "missing-field",
            DiagnosticCode::UnknownKey => "unknown-key",
            DiagnosticCode::InvalidValue => "invalid-value",
            DiagnosticCode::Range => "range",
            DiagnosticCode::DanglingArc => "dangling-arc",
            DiagnosticCode::UnknownNode => "unknown-node",
            DiagnosticCode::UnknownClass => "unknown-class",
            DiagnosticCode::Duplicate => "duplicate",
            DiagnosticCode::Shape => "shape",
            DiagnosticCode::Structure => "structure",
        }
    }
}

/// A located problem in a scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub file: String,
    pub key: Option<String>,
    /// 1-based.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code.as_str(), self.file)?;
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        if let Some(k) = &self.key {
            write!(f, ": {k}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for Diagnostic {}

// ---------------------------------------------------------------------------
// File schema

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum LatencyEntry {
    Millis(f64),
    Marker(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassEntry {
    id: String,
    label: String,
    energy_kwh_per_mtok: f64,
    payload_gb_per_mtok: f64,
    latency_ms: LatencyEntry,
}

type PerClass = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PipelineEntry {
    throughput_tokens_per_s_per_mw: PerClass,
    base_demand_tokens_per_s: PerClass,
    max_arc_distance_km: f64,
    backbone: Vec<String>,
    backbone_capacity_gbps: f64,
    default_capacity_gbps: f64,
    per_hop_overhead_ms: f64,
    fiber_speed_km_per_ms: f64,
    transfer_tariff_usd_per_gb: f64,
    #[serde(default = "one")]
    demand_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HubEntry {
    id: String,
    metro: String,
    state: String,
    latitude: f64,
    longitude: f64,
    facility_count: u32,
    est_power_mw: f64,
    elec_price_usd_per_kwh: f64,
    population_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Overrides {
    #[serde(default)]
    demand_tokens_per_s: BTreeMap<String, PerClass>,
    #[serde(default)]
    capacity_tokens_per_s: BTreeMap<String, PerClass>,
    #[serde(default)]
    opex_adder_usd_per_mtok: BTreeMap<String, f64>,
    #[serde(default)]
    overhead_factor: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    id: String,
    metro: String,
    latitude: f64,
    longitude: f64,
    site_power_mw: f64,
    elec_price_usd_per_kwh: f64,
    #[serde(default)]
    opex_adder_usd_per_mtok: f64,
    capacity_tokens_per_s: PerClass,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    energy_override_kwh_per_mtok: PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArcEntry {
    from: String,
    to: String,
    distance_km: f64,
    latency_ms: f64,
    /// `inf` for an unconstrained link.
    capacity_gb_per_s: f64,
    transfer_tariff_usd_per_gb: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    routing_cost_usd_per_mtok: PerClass,
    #[serde(default = "one")]
    overhead_factor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default = "one")]
    demand_scale: f64,
    classes: Vec<ClassEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pipeline: Option<PipelineEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hubs: Vec<HubEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    overrides: Option<Overrides>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    nodes: Vec<NodeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    arcs: Vec<ArcEntry>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    demand: BTreeMap<String, PerClass>,
}

// ---------------------------------------------------------------------------
// Parsing

struct Ctx<'a> {
    file: &'a str,
    text: &'a str,
}

impl Ctx<'_> {
    fn diag(&self, code: DiagnosticCode, key: impl Into<String>, message: impl Into<String>) -> Diagnostic {
        let key = key.into();
        Diagnostic {
            code,
            file: self.file.to_string(),
            line: locate(self.text, &key),
            key: Some(key),
            message: message.into(),
        }
    }

    fn require(&self, ok: bool, key: impl Into<String>, message: &str) -> Result<(), Diagnostic> {
        if ok {
            Ok(())
        } else {
            Err(self.diag(DiagnosticCode::Range, key, message))
        }
    }

    /// Orders a per-class map by `classes`, rejecting unknown ids and, when
    /// `required`, missing ones.
    fn per_class(
        &self,
        map: &PerClass,
        classes: &[WorkloadClass],
        key: &str,
        required: bool,
    ) -> Result<Vec<Option<f64>>, Diagnostic> {
        for id in map.keys() {
            if !classes.iter().any(|c| &c.id == id) {
                return Err(self.diag(DiagnosticCode::UnknownClass, format!("{key}.{id}"), format!("unknown workload class `{id}`")));
            }
        }
        classes
            .iter()
            .map(|c| match map.get(&c.id) {
                Some(v) => Ok(Some(*v)),
                None if required => Err(self.diag(
                    DiagnosticCode::MissingField,
                    format!("{key}.{}", c.id),
                    format!("missing value for class `{}`", c.id),
                )),
                None => Ok(None),
            })
            .collect()
    }

    fn model(&self, e: ModelError) -> Diagnostic {
        let code = match &e {
            ModelError::Range { .. } => DiagnosticCode::Range,
            ModelError::DanglingArc { .. } => DiagnosticCode::DanglingArc,
            ModelError::UnknownNode { .. } => DiagnosticCode::UnknownNode,
            ModelError::UnknownClass { .. } => DiagnosticCode::UnknownClass,
            ModelError::Duplicate { .. } => DiagnosticCode::Duplicate,
            ModelError::Shape { .. } => DiagnosticCode::Shape,
            ModelError::Structure(_) => DiagnosticCode::Structure,
        };
        let message = match &e {
            ModelError::Range { message, .. } => message.clone(),
            other => other.to_string(),
        };
        match e.key() {
            Some(k) => self.diag(code, k, message),
            None => Diagnostic { code, file: self.file.into(), key: None, line: None, message },
        }
    }
}

/// Reads a built-in scenario by name or a scenario file by path.
pub fn load_scenario(spec: &str) -> Result<Scenario, Diagnostic> {
    if let Some(text) = builtin_source(spec) {
        return parse_scenario_str(text, &format!("<builtin:{spec}>"));
    }
    parse_scenario(Path::new(spec))
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, Diagnostic> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Diagnostic {
        code: DiagnosticCode::Io,
        file: file.clone(),
        key: None,
        line: None,
        message: e.to_string(),
    })?;
    parse_scenario_str(&text, &file)
}

/// Parses scenario text; `file` labels diagnostics.
pub fn parse_scenario_str(text: &str, file: &str) -> Result<Scenario, Diagnostic> {
    let ctx = Ctx { file, text };
    let raw: ScenarioFile = toml::from_str(text).map_err(|e| toml_diagnostic(&ctx, &e))?;

    let classes = build_classes(&ctx, &raw.classes)?;
    ctx.require(raw.demand_scale >= 0.0 && raw.demand_scale.is_finite(), "demand_scale", "demand scale must be ≥ 0")?;

    let registry_form = !raw.hubs.is_empty() || raw.pipeline.is_some();
    let explicit_form = !raw.nodes.is_empty() || !raw.arcs.is_empty() || !raw.demand.is_empty();
    let mut scenario = match (registry_form, explicit_form) {
        (true, true) => {
            return Err(ctx.diag(
                DiagnosticCode::Structure,
                "nodes",
                "a file lists either hubs with a pipeline section or explicit nodes, not both",
            ))
        }
        (true, false) => from_registry(&ctx, &raw, classes)?,
        (false, true) => {
            if raw.overrides.is_some() {
                return Err(ctx.diag(DiagnosticCode::Structure, "overrides", "overrides apply to registry files only"));
            }
            from_explicit(&ctx, &raw, classes)?
        }
        (false, false) => {
            return Err(Diagnostic {
                code: DiagnosticCode::MissingField,
                file: file.into(),
                key: Some("nodes".into()),
                line: None,
                message: "file defines neither hubs nor nodes".into(),
            })
        }
    };
    scenario.name = raw.name.clone();
    scenario.demand_scale = raw.demand_scale;
    Ok(scenario)
}

fn toml_diagnostic(ctx: &Ctx<'_>, e: &toml::de::Error) -> Diagnostic {
    let msg = e.message().trim().to_string();
    let line = e.span().map(|s| ctx.text[..s.start.min(ctx.text.len())].lines().count().max(1));
    let line = line.map(|l| {
        // A span that starts right after a newline belongs to the next line.
        match e.span() {
            Some(s) if s.start > 0 && ctx.text.as_bytes().get(s.start - 1) == Some(&b'\n') => l + 1,
            _ => l,
        }
    });
    let code = if msg.starts_with("missing field") {
        DiagnosticCode::MissingField
    } else if msg.starts_with("unknown field") {
        DiagnosticCode::UnknownKey
    } else if msg.starts_with("invalid type") || msg.starts_with("invalid value") || msg.contains("did not match any variant") {
        DiagnosticCode::InvalidValue
    } else {
        DiagnosticCode::Syntax
    };
    let field = msg.split('`').nth(1).map(str::to_string);
    let key = line.map(|l| key_at_line(ctx.text, l)).map(|(header, on_line)| {
        let leaf = match code {
            DiagnosticCode::MissingField | DiagnosticCode::UnknownKey => field.clone(),
            _ => on_line,
        };
        match (header.is_empty(), leaf) {
            (true, Some(l)) => l,
            (false, Some(l)) => format!("{header}.{l}"),
            (_, None) => header,
        }
    });
    Diagnostic {
        code,
        file: ctx.file.into(),
        key: key.filter(|k| !k.is_empty()),
        line,
        message: msg,
    }
}

fn build_classes(ctx: &Ctx<'_>, entries: &[ClassEntry]) -> Result<Vec<WorkloadClass>, Diagnostic> {
    if entries.is_empty() {
        return Err(ctx.diag(DiagnosticCode::MissingField, "classes", "at least one workload class is required"));
    }
    let mut out: Vec<WorkloadClass> = Vec::new();
    for (i, c) in entries.iter().enumerate() {
        let key = |f: &str| format!("classes[{i}].{f}");
        if out.iter().any(|o| o.id == c.id) {
            return Err(ctx.diag(DiagnosticCode::Duplicate, key("id"), format!("duplicate class id `{}`", c.id)));
        }
        ctx.require(c.energy_kwh_per_mtok > 0.0 && c.energy_kwh_per_mtok.is_finite(), key("energy_kwh_per_mtok"), "energy intensity must be > 0")?;
        ctx.require(c.payload_gb_per_mtok > 0.0 && c.payload_gb_per_mtok.is_finite(), key("payload_gb_per_mtok"), "payload must be > 0")?;
        let bound = match &c.latency_ms {
            LatencyEntry::Millis(ms) => {
                ctx.require(*ms > 0.0 && ms.is_finite(), key("latency_ms"), "latency bound must be > 0")?;
                LatencyBound::Millis(*ms)
            }
            LatencyEntry::Marker(m) if m == "unconstrained" => LatencyBound::Unconstrained,
            LatencyEntry::Marker(m) => {
                return Err(ctx.diag(
                    DiagnosticCode::InvalidValue,
                    key("latency_ms"),
                    format!("expected milliseconds or \"unconstrained\", found \"{m}\""),
                ))
            }
        };
        out.push(WorkloadClass::new(c.id.clone(), c.label.clone(), c.energy_kwh_per_mtok, c.payload_gb_per_mtok, bound));
    }
    Ok(out)
}

fn from_registry(ctx: &Ctx<'_>, raw: &ScenarioFile, classes: Vec<WorkloadClass>) -> Result<Scenario, Diagnostic> {
    let Some(p) = &raw.pipeline else {
        return Err(ctx.diag(DiagnosticCode::MissingField, "pipeline", "registry files need a [pipeline] section"));
    };
    if raw.hubs.is_empty() {
        return Err(ctx.diag(DiagnosticCode::MissingField, "hubs", "registry files need at least one [[hubs]] entry"));
    }
    let throughput = ctx.per_class(&p.throughput_tokens_per_s_per_mw, &classes, "pipeline.throughput_tokens_per_s_per_mw", true)?;
    let base = ctx.per_class(&p.base_demand_tokens_per_s, &classes, "pipeline.base_demand_tokens_per_s", true)?;
    for (name, vals) in [("throughput_tokens_per_s_per_mw", &throughput), ("base_demand_tokens_per_s", &base)] {
        for (c, v) in classes.iter().zip(vals.iter()) {
            let v = v.unwrap_or(0.0);
            ctx.require(v > 0.0 && v.is_finite(), format!("pipeline.{name}.{}", c.id), "value must be > 0")?;
        }
    }
    for (name, v) in [
        ("max_arc_distance_km", p.max_arc_distance_km),
        ("backbone_capacity_gbps", p.backbone_capacity_gbps),
        ("default_capacity_gbps", p.default_capacity_gbps),
        ("per_hop_overhead_ms", p.per_hop_overhead_ms),
        ("fiber_speed_km_per_ms", p.fiber_speed_km_per_ms),
        ("transfer_tariff_usd_per_gb", p.transfer_tariff_usd_per_gb),
        ("demand_scale", p.demand_scale),
    ] {
        ctx.require(v > 0.0 && v.is_finite(), format!("pipeline.{name}"), "value must be > 0")?;
    }

    let mut registry = Vec::with_capacity(raw.hubs.len());
    for (i, h) in raw.hubs.iter().enumerate() {
        let key = |f: &str| format!("hubs[{i}].{f}");
        if registry.iter().any(|r: &HubRegistryEntry| r.id == h.id) {
            return Err(ctx.diag(DiagnosticCode::Duplicate, key("id"), format!("duplicate hub id `{}`", h.id)));
        }
        ctx.require((-90.0..=90.0).contains(&h.latitude), key("latitude"), "latitude must be in [-90, 90]")?;
        ctx.require((-180.0..=180.0).contains(&h.longitude), key("longitude"), "longitude must be in [-180, 180]")?;
        ctx.require(h.est_power_mw > 0.0 && h.est_power_mw.is_finite(), key("est_power_mw"), "estimated power must be > 0")?;
        ctx.require(h.elec_price_usd_per_kwh >= 0.0 && h.elec_price_usd_per_kwh.is_finite(), key("elec_price_usd_per_kwh"), "electricity price must be ≥ 0")?;
        ctx.require(h.population_weight >= 0.0 && h.population_weight.is_finite(), key("population_weight"), "population weight must be ≥ 0")?;
        registry.push(HubRegistryEntry {
            id: h.id.clone(),
            metro: h.metro.clone(),
            state: h.state.clone(),
            latitude: h.latitude,
            longitude: h.longitude,
            facility_count: h.facility_count,
            est_power: h.est_power_mw,
            elec_price: h.elec_price_usd_per_kwh,
            population_weight: h.population_weight,
        });
    }
    let params = PipelineParams {
        throughput_per_mw: throughput.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        max_arc_distance_km: p.max_arc_distance_km,
        backbone: p.backbone.iter().cloned().collect::<BTreeSet<_>>(),
        backbone_capacity_gbps: p.backbone_capacity_gbps,
        default_capacity_gbps: p.default_capacity_gbps,
        per_hop_overhead_ms: p.per_hop_overhead_ms,
        fiber_speed_km_per_ms: p.fiber_speed_km_per_ms,
        transfer_tariff: p.transfer_tariff_usd_per_gb,
        base_demand_rates: base.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        demand_scale: p.demand_scale,
    };
    let mut scenario = build_scenario(&raw.name, &registry, classes, &params).map_err(|e| ctx.model(e))?;

    if let Some(o) = &raw.overrides {
        let node_of = |key: &str, id: &str| {
            scenario
                .node_index(id)
                .ok_or_else(|| ctx.diag(DiagnosticCode::UnknownNode, format!("{key}.{id}"), format!("unknown hub `{id}`")))
        };
        let mut demand_rows = Vec::new();
        for (id, m) in &o.demand_tokens_per_s {
            let key = "overrides.demand_tokens_per_s";
            let j = node_of(key, id)?;
            let vals = ctx.per_class(m, &scenario.classes, &format!("{key}.{id}"), false)?;
            for (c, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    ctx.require(*v >= 0.0 && v.is_finite(), format!("{key}.{id}.{}", scenario.classes[c].id), "demand must be ≥ 0")?;
                    demand_rows.push((j, c, *v));
                }
            }
        }
        let mut cap_rows = Vec::new();
        for (id, m) in &o.capacity_tokens_per_s {
            let key = "overrides.capacity_tokens_per_s";
            let j = node_of(key, id)?;
            let vals = ctx.per_class(m, &scenario.classes, &format!("{key}.{id}"), false)?;
            for (c, v) in vals.iter().enumerate() {
                if let Some(v) = v {
                    ctx.require(*v >= 0.0, format!("{key}.{id}.{}", scenario.classes[c].id), "capacity must be ≥ 0")?;
                    cap_rows.push((j, c, *v));
                }
            }
        }
        let mut opex_rows = Vec::new();
        for (id, v) in &o.opex_adder_usd_per_mtok {
            let key = "overrides.opex_adder_usd_per_mtok";
            let j = node_of(key, id)?;
            ctx.require(*v >= 0.0 && v.is_finite(), format!("{key}.{id}"), "opex adder must be ≥ 0")?;
            opex_rows.push((j, *v));
        }
        if let Some(f) = o.overhead_factor {
            ctx.require(f >= 1.0 && f.is_finite(), "overrides.overhead_factor", "overhead factor must be ≥ 1")?;
            scenario.arcs.iter_mut().for_each(|a| a.overhead_factor = f);
        }
        for (j, c, v) in demand_rows {
            scenario.demand[j][c] = v;
        }
        for (j, c, v) in cap_rows {
            scenario.nodes[j].capacity[c] = v;
        }
        for (j, v) in opex_rows {
            scenario.nodes[j].opex_adder = v;
        }
    }
    Ok(scenario)
}

fn from_explicit(ctx: &Ctx<'_>, raw: &ScenarioFile, classes: Vec<WorkloadClass>) -> Result<Scenario, Diagnostic> {
    if raw.nodes.is_empty() {
        return Err(ctx.diag(DiagnosticCode::MissingField, "nodes", "at least one [[nodes]] entry is required"));
    }
    let k = classes.len();
    let mut nodes: Vec<Node> = Vec::with_capacity(raw.nodes.len());
    for (i, n) in raw.nodes.iter().enumerate() {
        let key = |f: &str| format!("nodes[{i}].{f}");
        if nodes.iter().any(|o| o.id == n.id) {
            return Err(ctx.diag(DiagnosticCode::Duplicate, key("id"), format!("duplicate node id `{}`", n.id)));
        }
        ctx.require((-90.0..=90.0).contains(&n.latitude), key("latitude"), "latitude must be in [-90, 90]")?;
        ctx.require((-180.0..=180.0).contains(&n.longitude), key("longitude"), "longitude must be in [-180, 180]")?;
        ctx.require(n.site_power_mw >= 0.0 && n.site_power_mw.is_finite(), key("site_power_mw"), "site power must be ≥ 0")?;
        ctx.require(n.elec_price_usd_per_kwh >= 0.0 && n.elec_price_usd_per_kwh.is_finite(), key("elec_price_usd_per_kwh"), "electricity price must be ≥ 0")?;
        ctx.require(n.opex_adder_usd_per_mtok >= 0.0 && n.opex_adder_usd_per_mtok.is_finite(), key("opex_adder_usd_per_mtok"), "opex adder must be ≥ 0")?;
        let cap = ctx.per_class(&n.capacity_tokens_per_s, &classes, &key("capacity_tokens_per_s"), true)?;
        let mut capacity = Vec::with_capacity(k);
        for (c, v) in cap.into_iter().enumerate() {
            let v = v.unwrap_or(0.0);
            ctx.require(v >= 0.0, format!("{}.{}", key("capacity_tokens_per_s"), classes[c].id), "capacity must be ≥ 0")?;
            capacity.push(v);
        }
        let energy_override = ctx.per_class(&n.energy_override_kwh_per_mtok, &classes, &key("energy_override_kwh_per_mtok"), false)?;
        for (c, v) in energy_override.iter().enumerate() {
            if let Some(v) = v {
                ctx.require(*v > 0.0 && v.is_finite(), format!("{}.{}", key("energy_override_kwh_per_mtok"), classes[c].id), "energy override must be > 0")?;
            }
        }
        nodes.push(Node {
            id: n.id.clone(),
            metro: n.metro.clone(),
            latitude: n.latitude,
            longitude: n.longitude,
            site_power: n.site_power_mw,
            elec_price: n.elec_price_usd_per_kwh,
            capacity,
            energy_override,
            opex_adder: n.opex_adder_usd_per_mtok,
        });
    }

    let mut arcs = Vec::with_capacity(raw.arcs.len());
    let mut seen = BTreeSet::new();
    for (i, a) in raw.arcs.iter().enumerate() {
        let key = |f: &str| format!("arcs[{i}].{f}");
        for (field, id) in [("from", &a.from), ("to", &a.to)] {
            if !nodes.iter().any(|n| &n.id == id) {
                return Err(ctx.diag(DiagnosticCode::DanglingArc, key(field), format!("arc endpoint `{id}` does not reference a known node")));
            }
        }
        ctx.require(a.from != a.to, key("to"), "self-loop arcs are not allowed")?;
        if !seen.insert((a.from.clone(), a.to.clone())) {
            return Err(ctx.diag(DiagnosticCode::Duplicate, key("to"), format!("duplicate arc {} -> {}", a.from, a.to)));
        }
        ctx.require(a.distance_km >= 0.0 && a.distance_km.is_finite(), key("distance_km"), "distance must be ≥ 0")?;
        ctx.require(a.latency_ms > 0.0 && a.latency_ms.is_finite(), key("latency_ms"), "latency must be > 0")?;
        ctx.require(a.capacity_gb_per_s > 0.0, key("capacity_gb_per_s"), "link capacity must be > 0")?;
        ctx.require(a.transfer_tariff_usd_per_gb >= 0.0 && a.transfer_tariff_usd_per_gb.is_finite(), key("transfer_tariff_usd_per_gb"), "transfer tariff must be ≥ 0")?;
        ctx.require(a.overhead_factor >= 1.0 && a.overhead_factor.is_finite(), key("overhead_factor"), "overhead factor must be ≥ 1")?;
        let route = ctx.per_class(&a.routing_cost_usd_per_mtok, &classes, &key("routing_cost_usd_per_mtok"), false)?;
        let routing_cost: Vec<f64> = route.into_iter().map(|v| v.unwrap_or(0.0)).collect();
        for (c, v) in routing_cost.iter().enumerate() {
            ctx.require(*v >= 0.0 && v.is_finite(), format!("{}.{}", key("routing_cost_usd_per_mtok"), classes[c].id), "routing cost must be ≥ 0")?;
        }
        arcs.push((
            a.from.clone(),
            a.to.clone(),
            ArcSpec {
                distance: a.distance_km,
                latency: a.latency_ms,
                physical_capacity: a.capacity_gb_per_s,
                transfer_tariff: a.transfer_tariff_usd_per_gb,
                routing_cost,
                overhead_factor: a.overhead_factor,
            },
        ));
    }

    let mut demand = HashMap::new();
    for (id, m) in &raw.demand {
        if !nodes.iter().any(|n| &n.id == id) {
            return Err(ctx.diag(DiagnosticCode::UnknownNode, format!("demand.{id}"), format!("unknown node `{id}`")));
        }
        let vals = ctx.per_class(m, &classes, &format!("demand.{id}"), false)?;
        let mut row = Vec::with_capacity(k);
        for (c, v) in vals.into_iter().enumerate() {
            let v = v.unwrap_or(0.0);
            ctx.require(v >= 0.0 && v.is_finite(), format!("demand.{id}.{}", classes[c].id), "demand must be ≥ 0")?;
            row.push(v);
        }
        demand.insert(id.clone(), row);
    }
    Scenario::new(raw.name.clone(), nodes, arcs, classes, demand, raw.demand_scale).map_err(|e| ctx.model(e))
}

/// Writes `scenario` in the explicit form.
pub fn serialize_scenario(scenario: &Scenario) -> String {
    let per_class = |vals: &[f64]| -> PerClass {
        scenario.classes.iter().zip(vals).map(|(c, v)| (c.id.clone(), *v)).collect()
    };
    let file = ScenarioFile {
        name: scenario.name.clone(),
        description: None,
        demand_scale: scenario.demand_scale,
        classes: scenario
            .classes
            .iter()
            .map(|c| ClassEntry {
                id: c.id.clone(),
                label: c.label.clone(),
                energy_kwh_per_mtok: c.energy_intensity,
                payload_gb_per_mtok: c.payload,
                latency_ms: match c.latency_bound {
                    LatencyBound::Millis(ms) => LatencyEntry::Millis(ms),
                    LatencyBound::Unconstrained => LatencyEntry::Marker("unconstrained".into()),
                },
            })
            .collect(),
        pipeline: None,
        hubs: Vec::new(),
        overrides: None,
        nodes: scenario
            .nodes
            .iter()
            .map(|n| NodeEntry {
                id: n.id.clone(),
                metro: n.metro.clone(),
                latitude: n.latitude,
                longitude: n.longitude,
                site_power_mw: n.site_power,
                elec_price_usd_per_kwh: n.elec_price,
                opex_adder_usd_per_mtok: n.opex_adder,
                capacity_tokens_per_s: per_class(&n.capacity),
                energy_override_kwh_per_mtok: scenario
                    .classes
                    .iter()
                    .zip(&n.energy_override)
                    .filter_map(|(c, v)| v.map(|v| (c.id.clone(), v)))
                    .collect(),
            })
            .collect(),
        arcs: scenario
            .arcs
            .iter()
            .map(|a| ArcEntry {
                from: scenario.nodes[a.from].id.clone(),
                to: scenario.nodes[a.to].id.clone(),
                distance_km: a.distance,
                latency_ms: a.latency,
                capacity_gb_per_s: a.physical_capacity,
                transfer_tariff_usd_per_gb: a.transfer_tariff,
                routing_cost_usd_per_mtok: if a.routing_cost.iter().all(|&v| v == 0.0) {
                    BTreeMap::new()
                } else {
                    per_class(&a.routing_cost)
                },
                overhead_factor: a.overhead_factor,
            })
            .collect(),
        demand: scenario
            .nodes
            .iter()
            .zip(&scenario.demand)
            .filter(|(_, row)| row.iter().any(|&v| v != 0.0))
            .map(|(n, row)| (n.id.clone(), per_class(row)))
            .collect(),
    };
    toml::to_string(&file).expect("scenario file schema is serializable")
}

// ---------------------------------------------------------------------------
// Key ↔ line mapping

/// Splits `a.b[2].c` into `["a", "b[2]", "c"]`.
fn segments(key: &str) -> Vec<String> {
    key.split('.').map(str::to_string).collect()
}

/// Table path (`hubs[3]`, `pipeline.backbone`) in force on each line, and the
/// bare key assigned on that line, if any.
fn line_paths(text: &str) -> Vec<(String, Option<String>)> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    // Indexes every array-of-tables prefix at its latest element.
    let resolve = |name: &str, counts: &HashMap<String, usize>| -> String {
        let mut raw = String::new();
        let mut out = Vec::new();
        for seg in name.split('.').map(|p| p.trim().trim_matches('"')) {
            if !raw.is_empty() {
                raw.push('.');
            }
            raw.push_str(seg);
            match counts.get(&raw) {
                Some(n) => out.push(format!("{seg}[{}]", n - 1)),
                None => out.push(seg.to_string()),
            }
        }
        out.join(".")
    };
    let mut header = String::new();
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix("[[").and_then(|r| r.split("]]").next()) {
            let name = name.trim().to_string();
            *counts.entry(name.clone()).or_insert(0) += 1;
            header = resolve(&name, &counts);
            out.push((header.clone(), None));
        } else if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            header = resolve(name.trim(), &counts);
            out.push((header.clone(), None));
        } else if let Some((k, _)) = t.split_once('=').filter(|_| !t.starts_with('#')) {
            out.push((header.clone(), Some(k.trim().trim_matches('"').to_string())));
        } else {
            out.push((header.clone(), None));
        }
    }
    out
}

fn key_at_line(text: &str, line: usize) -> (String, Option<String>) {
    line_paths(text).get(line.saturating_sub(1)).cloned().unwrap_or_default()
}

/// 1-based line where `key` is defined, falling back to its closest parent.
pub fn locate(text: &str, key: &str) -> Option<usize> {
    let paths = line_paths(text);
    let segs = segments(key);
    for cut in (1..=segs.len()).rev() {
        let want = segs[..cut].join(".");
        for (i, (header, k)) in paths.iter().enumerate() {
            let full = match k {
                Some(k) if header.is_empty() => k.clone(),
                Some(k) => format!("{header}.{k}"),
                None => header.clone(),
            };
            if full == want {
                return Some(i + 1);
            }
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Result export

/// Fixed-width scientific notation; round-trips exactly through `f64::from_str`.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A CSV table with a header row; values are strings already formatted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<(), ExportError> {
        std::fs::write(path, self.to_csv()?).map_err(|e| ExportError::Io(path.to_path_buf(), e))
    }

    /// Parses CSV text produced by [`Table::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()?;
        Ok(Table { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExportError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| ExportError::Io(path.to_path_buf(), e))
}

/// Run metadata; the only exported file that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub command: String,
    pub scenario: String,
    pub generated_unix_s: u64,
    pub notes: BTreeMap<String, String>,
}

impl Metadata {
    pub fn now(command: &str, scenario: &str) -> Self {
        Metadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scenario: scenario.to_string(),
            generated_unix_s: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            notes: BTreeMap::new(),
        }
    }
}

pub mod tables {
    //! Standard CSV layouts for clearing results and experiment outputs.

    use super::{fmt_num, Table};
    use crate::clearing::ClearingResult;
    use crate::error::AnalysisError;
    use crate::experiments::{ComparisonTable, LatencyReport, SweepTable};
    use crate::pricing::{decompose_path, PriceDecomposition};
    use crate::settlement::SettlementLedger;

    /// Path decomposition for every node and class with demand, or the local
    /// decomposition where a node processes but has no demand of its own.
    pub fn decompositions(result: &ClearingResult) -> Result<Vec<PriceDecomposition>, AnalysisError> {
        let s = &result.scenario;
        let sol = result.solution()?;
        let mut out = Vec::new();
        for j in 0..s.nodes.len() {
            for c in 0..s.classes.len() {
                if s.effective_demand(j, c) > 0.0 || sol.dispatch[j][c] > crate::pricing::ACTIVE_TOL {
                    out.push(decompose_path(result, j, c)?);
                }
            }
        }
        Ok(out)
    }

    pub fn prices(result: &ClearingResult) -> Result<Table, AnalysisError> {
        let s = &result.scenario;
        let sol = result.solution()?;
        let decomp = decompositions(result)?;
        let mut t = Table::new(&[
            "node",
            "class",
            "lmp_usd_per_mtok",
            "energy_usd_per_mtok",
            "opex_usd_per_mtok",
            "scarcity_usd_per_mtok",
            "penalty_usd_per_mtok",
            "path_usd_per_mtok",
            "residual_usd_per_mtok",
            "serving_node",
            "path",
        ]);
        for j in 0..s.nodes.len() {
            for c in 0..s.classes.len() {
                let d = decomp.iter().find(|d| d.node == s.nodes[j].id && d.class == s.classes[c].id);
                let blank = || String::new();
                t.push(vec![
                    s.nodes[j].id.clone(),
                    s.classes[c].id.clone(),
                    fmt_num(sol.prices[j][c]),
                    d.map_or_else(blank, |d| fmt_num(d.energy)),
                    d.map_or_else(blank, |d| fmt_num(d.opex)),
                    d.map_or_else(blank, |d| fmt_num(d.scarcity)),
                    d.map_or_else(blank, |d| fmt_num(d.penalty)),
                    d.map_or_else(blank, |d| fmt_num(d.path_total())),
                    d.map_or_else(blank, |d| fmt_num(d.residual)),
                    d.and_then(|d| d.serving_node.clone()).unwrap_or_default(),
                    d.map_or_else(blank, |d| d.path.iter().map(|p| format!("{}>{}", p.from, p.to)).collect::<Vec<_>>().join(" ")),
                ]);
            }
        }
        Ok(t)
    }

    pub fn dispatch(result: &ClearingResult) -> Result<Table, AnalysisError> {
        let s = &result.scenario;
        let sol = result.solution()?;
        let mut t = Table::new(&[
            "node",
            "class",
            "demand_tokens_per_s",
            "dispatch_tokens_per_s",
            "unmet_tokens_per_s",
            "capacity_tokens_per_s",
            "scarcity_usd_per_mtok",
            "marginal_cost_usd_per_mtok",
        ]);
        for j in 0..s.nodes.len() {
            for c in 0..s.classes.len() {
                t.push(vec![
                    s.nodes[j].id.clone(),
                    s.classes[c].id.clone(),
                    fmt_num(s.effective_demand(j, c)),
                    fmt_num(sol.dispatch[j][c]),
                    fmt_num(sol.unmet[j][c]),
                    fmt_num(s.nodes[j].capacity[c]),
                    fmt_num(sol.scarcity[j][c]),
                    fmt_num(s.marginal_cost(j, c)),
                ]);
            }
        }
        Ok(t)
    }

    pub fn flows(result: &ClearingResult) -> Result<Table, AnalysisError> {
        let s = &result.scenario;
        let sol = result.solution()?;
        let mut t = Table::new(&["from", "to", "class", "admissible", "flow_tokens_per_s", "routing_usd_per_mtok"]);
        for (a, arc) in s.arcs.iter().enumerate() {
            for c in 0..s.classes.len() {
                t.push(vec![
                    s.nodes[arc.from].id.clone(),
                    s.nodes[arc.to].id.clone(),
                    s.classes[c].id.clone(),
                    result.admissible[a][c].to_string(),
                    fmt_num(sol.flows[a][c]),
                    fmt_num(result.routing_coefficient(a, c)),
                ]);
            }
        }
        Ok(t)
    }

    pub fn links(result: &ClearingResult) -> Result<Table, AnalysisError> {
        let s = &result.scenario;
        let sol = result.solution()?;
        let unit = result.formulation.link_unit();
        let usage = format!("usage_{unit}");
        let cap = format!("capacity_{unit}");
        let rent = format!("congestion_{}", result.formulation.congestion_unit());
        let mut t = Table::new(&["from", "to", "latency_ms", "distance_km", &usage, &cap, &rent]);
        for (a, arc) in s.arcs.iter().enumerate() {
            t.push(vec![
                s.nodes[arc.from].id.clone(),
                s.nodes[arc.to].id.clone(),
                fmt_num(arc.latency),
                fmt_num(arc.distance),
                fmt_num(sol.link_usage[a]),
                fmt_num(sol.link_capacity[a]),
                fmt_num(sol.congestion[a]),
            ]);
        }
        Ok(t)
    }

    pub fn ledger(l: &SettlementLedger) -> Table {
        let mut t = Table::new(&["item", "amount_usd_per_hr"]);
        for (k, v) in [
            ("user_payments", l.user_payments),
            ("compute_revenue", l.compute_revenue),
            ("network_revenue", l.network_revenue),
            ("surplus", l.surplus),
            ("tariff_revenue", l.tariff_revenue),
            ("congestion_revenue", l.congestion_revenue),
            ("routing_cost", l.routing_cost),
        ] {
            t.push(vec![k.into(), fmt_num(v)]);
        }
        t
    }

    pub fn ledger_nodes(l: &SettlementLedger) -> Table {
        let mut t = Table::new(&["node", "payments_usd_per_hr", "compute_revenue_usd_per_hr", "unserved_tokens_per_s"]);
        for n in &l.nodes {
            t.push(vec![n.node.clone(), fmt_num(n.payments), fmt_num(n.compute_revenue), fmt_num(n.unserved)]);
        }
        t
    }

    pub fn ledger_arcs(l: &SettlementLedger) -> Table {
        let mut t = Table::new(&[
            "from",
            "to",
            "carried_tokens_per_s",
            "carried_gb_per_s",
            "tariff_usd_per_hr",
            "congestion_usd_per_hr",
            "routing_usd_per_hr",
        ]);
        for a in &l.arcs {
            t.push(vec![
                a.from.clone(),
                a.to.clone(),
                fmt_num(a.carried_tokens),
                fmt_num(a.carried_gb),
                fmt_num(a.tariff_revenue),
                fmt_num(a.congestion_revenue),
                fmt_num(a.routing_cost),
            ]);
        }
        t
    }

    pub fn sweep(table: &SweepTable) -> Table {
        let mut header: Vec<String> = ["scale", "feasible", "total_cost_usd_per_hr", "scarce_pairs", "congested_links", "saturated_links"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(table.classes.iter().map(|c| format!("mean_price_{c}_usd_per_mtok")));
        let mut t = Table { header, rows: Vec::new() };
        for r in &table.rows {
            let opt = |v: Option<f64>| v.map_or_else(String::new, fmt_num);
            let cnt = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
            let mut row = vec![
                fmt_num(r.scale),
                r.feasible.to_string(),
                opt(r.total_cost),
                cnt(r.scarce_pairs),
                cnt(r.congested_links),
                cnt(r.saturated_links),
            ];
            row.extend((0..table.classes.len()).map(|c| opt(r.mean_prices.as_ref().map(|m| m[c]))));
            t.push(row);
        }
        t
    }

    pub fn comparison(table: &ComparisonTable) -> Table {
        let mut header: Vec<String> = ["formulation", "feasible", "total_cost_usd_per_hr", "congested_links", "saturated_links", "opex_adder_usd_per_mtok"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(table.classes.iter().map(|c| format!("mean_price_{c}_usd_per_mtok")));
        let mut t = Table { header, rows: Vec::new() };
        for r in &table.rows {
            let cnt = |v: Option<usize>| v.map_or_else(String::new, |v| v.to_string());
            let mut row = vec![
                r.label.clone(),
                r.feasible.to_string(),
                r.total_cost.map_or_else(String::new, fmt_num),
                cnt(r.congested_links),
                cnt(r.saturated_links),
                fmt_num(r.opex_adder),
            ];
            row.extend((0..table.classes.len()).map(|c| r.mean_prices.as_ref().map_or_else(String::new, |m| fmt_num(m[c]))));
            t.push(row);
        }
        t
    }

    pub fn latency(report: &LatencyReport) -> Table {
        let mut t = Table::new(&[
            "node",
            "class",
            "price_before_usd_per_mtok",
            "price_after_usd_per_mtok",
            "delta_usd_per_mtok",
            "cluster",
        ]);
        for r in &report.rows {
            t.push(vec![
                r.node.clone(),
                r.class.clone(),
                fmt_num(r.before),
                r.after.map_or_else(String::new, fmt_num),
                r.after.map_or_else(String::new, |a| fmt_num(a - r.before)),
                r.cluster.to_string(),
            ]);
        }
        t
    }
}
