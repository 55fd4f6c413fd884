//! `tokenflow` command-line driver.
//!
//! Exit codes: 0 success, 1 infeasible must-serve clearing, 2 input error,
//! 3 solver failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use tokenflow_base::experiments::{
    compare_formulations, demand_sweep, latency_experiment, opex_adder_for_increase, scale_up_run, DEFAULT_SCALES,
    REFERENCE_OPEX_INCREASE,
};
use tokenflow_base::io::{load_scenario, tables, write_json, Diagnostic, Metadata, Table};
use tokenflow_base::settlement::{settle, NetworkLeg};
use tokenflow_base::{ClearingResult, Formulation, LpStatus, Scenario, Tolerances};

#[derive(Parser)]
#[command(name = "tokenflow", version, about = "Locational market clearing for token-flow service networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clear one scenario and export prices, flows and settlement.
    Clear(ClearArgs),
    /// Clear a scenario at several demand scales.
    Sweep(SweepArgs),
    /// Compare baseline, transfer-aware and opex-adder clearings.
    Compare(CompareArgs),
    /// Re-clear with tighter latency bounds and report price changes.
    Latency(LatencyArgs),
    /// Clear and print the settlement ledger.
    Settle(ClearArgs),
    /// Parse and validate a scenario file.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct Common {
    /// Scenario file, or a built-in name (five_node, us_twenty).
    #[arg(long)]
    scenario: String,
    /// Demand scale multiplier; defaults to the file's value.
    #[arg(long)]
    scale: Option<f64>,
    /// Output directory for CSV and JSON files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClearArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "baseline")]
    formulation: Formulation,
    /// Unmet-demand penalty for partial service, $/M tokens.
    #[arg(long, default_value_t = 1000.0)]
    penalty: f64,
    /// Network leg of the settlement: tariff_plus_congestion or tariff_only.
    #[arg(long, default_value = "tariff_plus_congestion")]
    settlement: NetworkLeg,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value = "baseline")]
    formulation: Formulation,
    #[arg(long, default_value_t = 1000.0)]
    penalty: f64,
    /// Comma-separated demand scales in increasing order.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Uniform opex adder, $/M tokens. Defaults to the adder that raises the
    /// cost of serving all demand by `--opex-increase`.
    #[arg(long)]
    opex_adder: Option<f64>,
    #[arg(long, default_value_t = REFERENCE_OPEX_INCREASE)]
    opex_increase: f64,
}

#[derive(Args)]
struct LatencyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 15.0)]
    chat_ms: f64,
    #[arg(long, default_value_t = 20.0)]
    code_ms: f64,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: String,
}

/// Failure categories mapped to exit codes.
enum Failure {
    Infeasible(String),
    Input(String),
    Solver(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<Diagnostic> for Failure {
    fn from(d: Diagnostic) -> Self {
        Failure::Input(d.to_string())
    }
}

impl From<tokenflow_base::ModelError> for Failure {
    fn from(e: tokenflow_base::ModelError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Infeasible(_) => 1,
            Failure::Input(_) => 2,
            Failure::Solver(_) | Failure::Other(_) => 3,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Infeasible(m) => eprintln!("infeasible: {m}"),
                Failure::Input(m) => eprintln!("{m}"),
                Failure::Solver(m) => eprintln!("solver failure: {m}"),
                Failure::Other(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let tol = Tolerances::default();
    match cli.command {
        Command::Validate(a) => {
            let s = load_scenario(&a.scenario)?;
            println!(
                "{}: ok ({} nodes, {} arcs, {} classes)",
                s.name,
                s.nodes.len(),
                s.arcs.len(),
                s.classes.len()
            );
            Ok(())
        }
        Command::Clear(a) => clear(a, &tol, false),
        Command::Settle(a) => clear(a, &tol, true),
        Command::Sweep(a) => sweep(a, &tol),
        Command::Compare(a) => compare(a, &tol),
        Command::Latency(a) => latency(a, &tol),
    }
}

fn scenario(c: &Common) -> Result<Scenario, Failure> {
    let s = load_scenario(&c.scenario)?;
    Ok(match c.scale {
        Some(x) if !(x > 0.0 && x.is_finite()) => return Err(Failure::Input(format!("--scale must be finite and > 0, got {x}"))),
        Some(x) => s.with_demand_scale(x),
        None => s,
    })
}

fn prepare(out: &Option<PathBuf>) -> Result<Option<&Path>, Failure> {
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(out.as_deref())
}

fn write_table(dir: &Path, name: &str, t: &Table) -> Result<()> {
    t.write(&dir.join(name)).with_context(|| format!("writing {name}"))
}

fn write_metadata(dir: &Path, command: &str, s: &Scenario, notes: &[(&str, String)]) -> Result<()> {
    let mut m = Metadata::now(command, &s.name);
    m.notes.insert("mean_price_aggregation".into(), "unweighted_node_mean".into());
    for (k, v) in notes {
        m.notes.insert((*k).into(), v.clone());
    }
    write_json(&dir.join("metadata.json"), &m).context("writing metadata.json")
}

/// Maps a non-optimal status to its failure category.
fn check_status(r: &ClearingResult) -> Result<(), Failure> {
    match r.status {
        LpStatus::Optimal => Ok(()),
        LpStatus::Infeasible => Err(Failure::Infeasible(format!(
            "{} at scale {} has no must-serve dispatch ({})",
            r.scenario.name, r.scenario.demand_scale, r.message
        ))),
        LpStatus::Unbounded | LpStatus::SolverError => Err(Failure::Solver(format!("{}: {}", r.status, r.message))),
    }
}

/// Aggregate demand and capacity per class, used to explain infeasibility.
fn infeasibility_report(s: &Scenario) -> serde_json::Value {
    let rows: Vec<_> = s
        .classes
        .iter()
        .enumerate()
        .map(|(c, class)| {
            let demand: f64 = (0..s.nodes.len()).map(|j| s.effective_demand(j, c)).sum();
            let capacity: f64 = s.nodes.iter().map(|n| n.capacity[c]).sum();
            json!({
                "class": class.id,
                "demand_tokens_per_s": demand,
                "capacity_tokens_per_s": capacity,
                "shortfall_tokens_per_s": (demand - capacity).max(0.0),
            })
        })
        .collect();
    json!({ "classes": rows })
}

fn clear(a: ClearArgs, tol: &Tolerances, ledger_only: bool) -> Result<(), Failure> {
    let s = scenario(&a.common)?;
    let run = scale_up_run(&s, s.demand_scale, a.formulation, a.penalty, tol)?;
    let r = run.result;
    let out = prepare(&a.common.out)?;
    let command = if ledger_only { "settle" } else { "clear" };

    if !r.is_feasible() {
        if let Some(dir) = out {
            let report = json!({
                "scenario": s.name,
                "formulation": r.formulation,
                "demand_scale": s.demand_scale,
                "status": r.status,
                "message": r.message,
                "infeasibility": infeasibility_report(&s),
            });
            write_json(&dir.join("summary.json"), &report).context("writing summary.json")?;
            write_metadata(dir, command, &s, &[])?;
        }
        println!("scenario {} formulation {} scale {}", s.name, r.formulation.as_str(), s.demand_scale);
        println!("status {}", r.status);
        return check_status(&r);
    }

    let sol = r.solution().map_err(|e| Failure::Solver(e.to_string()))?;
    let report = run.report.expect("report exists for an optimal clearing");
    let ledger = settle(&r, a.settlement).map_err(|e| Failure::Solver(e.to_string()))?;
    let decomp = tables::decompositions(&r).map_err(|e| Failure::Solver(e.to_string()))?;

    println!("scenario {} formulation {} scale {}", s.name, r.formulation.as_str(), s.demand_scale);
    println!("status {}", r.status);
    println!("total_cost_usd_per_hr {:.6}", sol.total_cost);
    if !ledger_only {
        println!("scarce_pairs {}", report.scarce_pairs.len());
        println!("congested_links {}", report.congested_links.len());
        println!("saturated_links {}", report.saturated_links.len());
        for cp in &report.class_prices {
            println!("mean_price_{}_usd_per_mtok {:.6}", cp.class, cp.mean);
        }
    }
    println!("settlement {}", ledger.convention.as_str());
    println!("user_payments_usd_per_hr {:.6}", ledger.user_payments);
    println!("compute_revenue_usd_per_hr {:.6}", ledger.compute_revenue);
    println!("network_revenue_usd_per_hr {:.6}", ledger.network_revenue);
    println!("surplus_usd_per_hr {:.6}", ledger.surplus);

    if let Some(dir) = out {
        let err = |e: tokenflow_base::AnalysisError| Failure::Solver(e.to_string());
        if !ledger_only {
            write_table(dir, "prices.csv", &tables::prices(&r).map_err(err)?)?;
            write_table(dir, "dispatch.csv", &tables::dispatch(&r).map_err(err)?)?;
            write_table(dir, "flows.csv", &tables::flows(&r).map_err(err)?)?;
            write_table(dir, "links.csv", &tables::links(&r).map_err(err)?)?;
        }
        write_table(dir, "ledger.csv", &tables::ledger(&ledger))?;
        write_table(dir, "ledger_nodes.csv", &tables::ledger_nodes(&ledger))?;
        write_table(dir, "ledger_arcs.csv", &tables::ledger_arcs(&ledger))?;
        let summary = json!({
            "scenario": s.name,
            "formulation": r.formulation,
            "demand_scale": s.demand_scale,
            "status": r.status,
            "total_cost_usd_per_hr": sol.total_cost,
            "kkt": r.kkt,
            "scarcity": report,
            "settlement": ledger,
            "decomposition": decomp,
        });
        write_json(&dir.join("summary.json"), &summary).context("writing summary.json")?;
        write_metadata(dir, command, &s, &[("settlement", ledger.convention.as_str().into())])?;
    }
    Ok(())
}

fn sweep(a: SweepArgs, tol: &Tolerances) -> Result<(), Failure> {
    let s = scenario(&a.common)?;
    let scales = a.scales.unwrap_or_else(|| DEFAULT_SCALES.to_vec());
    let t = demand_sweep(&s, &scales, a.formulation, a.penalty, tol)?;
    if let Some(r) = t.rows.iter().find(|r| matches!(r.status, LpStatus::Unbounded | LpStatus::SolverError)) {
        return Err(Failure::Solver(format!("scale {}: {}", r.scale, r.status)));
    }
    let csv = tables::sweep(&t);
    print!("{}", csv.to_csv().context("formatting sweep table")?);
    if let Some(dir) = prepare(&a.common.out)? {
        write_table(dir, "sweep.csv", &csv)?;
        write_json(&dir.join("sweep.json"), &t).context("writing sweep.json")?;
        write_metadata(dir, "sweep", &s, &[])?;
    }
    Ok(())
}

fn compare(a: CompareArgs, tol: &Tolerances) -> Result<(), Failure> {
    let s = scenario(&a.common)?;
    let adder = a.opex_adder.unwrap_or_else(|| opex_adder_for_increase(&s, a.opex_increase));
    let c = compare_formulations(&s, adder, tol)?;
    for r in [&c.baseline, &c.transfer, &c.opex] {
        if matches!(r.status, LpStatus::Unbounded | LpStatus::SolverError) {
            return Err(Failure::Solver(format!("{}: {}", r.formulation.as_str(), r.status)));
        }
    }
    let csv = tables::comparison(&c.table);
    print!("{}", csv.to_csv().context("formatting comparison table")?);
    if let Some(dir) = prepare(&a.common.out)? {
        write_table(dir, "comparison.csv", &csv)?;
        write_json(&dir.join("comparison.json"), &c.table).context("writing comparison.json")?;
        write_metadata(dir, "compare", &s, &[("opex_adder_usd_per_mtok", format!("{adder:.16e}"))])?;
    }
    Ok(())
}

fn latency(a: LatencyArgs, tol: &Tolerances) -> Result<(), Failure> {
    let s = scenario(&a.common)?;
    let mut bounds = Vec::new();
    for (id, ms) in [("chat", a.chat_ms), ("code", a.code_ms)] {
        if s.class_index(id).is_some() {
            bounds.push((id.to_string(), ms));
        }
    }
    let rep = latency_experiment(&s, &bounds, tol).map_err(|e| match e {
        tokenflow_base::AnalysisError::Model(m) => Failure::Input(m.to_string()),
        other => Failure::Solver(other.to_string()),
    })?;
    let csv = tables::latency(&rep);
    print!("{}", csv.to_csv().context("formatting latency table")?);
    println!("cost_before_usd_per_hr {:.6}", rep.before_cost);
    match (rep.after_cost, rep.cost_change) {
        (Some(c), Some(p)) => println!("cost_after_usd_per_hr {c:.6}\ncost_change_percent {p:.6}"),
        _ => println!("after_status {}", rep.after_status),
    }
    for cc in &rep.components {
        let groups: Vec<String> = cc.components.iter().map(|g| format!("[{}]", g.join(" "))).collect();
        println!("components_{} {}", cc.class, groups.join(" "));
    }
    if let Some(dir) = prepare(&a.common.out)? {
        write_table(dir, "latency.csv", &csv)?;
        write_json(&dir.join("latency.json"), &rep).context("writing latency.json")?;
        write_metadata(dir, "latency", &s, &[])?;
    }
    if rep.after_status == LpStatus::Infeasible {
        return Err(Failure::Infeasible("tightened latency bounds leave demand unserved".into()));
    }
    Ok(())
}
