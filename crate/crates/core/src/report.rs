//! Deterministic output writers for run artifacts. Every file begins with a
//! `# config_hash=...` comment line so any artifact can be traced back to the
//! exact configuration that produced it; equal hashes imply equal outputs.
//! All times in files are seconds, all flows veh/hr, all totals veh-hours.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::capacity::CapacityProfile;
use crate::network::{Network, OdPair};
use crate::optimizer::{OptimizeOutcome, SensitivityRow};
use crate::solver::AssignmentResult;

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON encoding of a run
/// configuration. Callers must exclude fields that cannot change results
/// (output directory, worker count) before hashing.
pub fn config_hash(config: &Value) -> String {
    let canonical = serde_json::to_string(config).expect("JSON value always serializes");
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    format!("{:x}", h.finalize())
}

/// Hex SHA-256 of a file's bytes, used to tie input data into config hashes.
pub fn file_sha256(path: &FsPath) -> Result<String> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading input file {}", path.display()))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn create(path: &FsPath, hash: &str) -> Result<BufWriter<File>> {
    let file =
        File::create(path).with_context(|| format!("creating output file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash={hash}")?;
    Ok(w)
}

fn join_ids(ids: &[i64]) -> String {
    ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-")
}

/// Per-interval link table: `interval,link_id,flow_vph,queue_veh,travel_time_s,capacity_vph`.
/// `capacity_vph` is the discharge rate in effect during the interval;
/// `queue_veh` is the committed end-of-interval queue.
pub fn write_link_flows_csv(
    path: &FsPath,
    hash: &str,
    net: &Network,
    profile: &CapacityProfile,
    result: &AssignmentResult,
) -> Result<()> {
    let mut w = create(path, hash)?;
    writeln!(w, "interval,link_id,flow_vph,queue_veh,travel_time_s,capacity_vph")?;
    for rec in &result.intervals {
        let caps = profile.caps_at(rec.m);
        for (i, link) in net.links.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                rec.m,
                link.id,
                rec.link_flows_vph[i],
                rec.queues_veh[i],
                rec.travel_times_h[i] * 3600.0,
                caps[i]
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-interval, per-OD convergence trace:
/// `interval,od,iterations,relative_gap[,corrected_gap]`. The corrected
/// column reports the gap of the converged flows under reduction-aware times
/// and is included when `include_corrected` is set (distorted models).
pub fn write_gap_trace_csv(
    path: &FsPath,
    hash: &str,
    ods: &[OdPair],
    result: &AssignmentResult,
    include_corrected: bool,
) -> Result<()> {
    let mut w = create(path, hash)?;
    if include_corrected {
        writeln!(w, "interval,od,iterations,relative_gap,corrected_gap")?;
    } else {
        writeln!(w, "interval,od,iterations,relative_gap")?;
    }
    for rec in &result.intervals {
        for (i, od) in ods.iter().enumerate() {
            write!(
                w,
                "{},{}->{},{},{}",
                rec.m, od.origin_id, od.destination_id, rec.od_iterations[i], rec.od_gaps[i]
            )?;
            if include_corrected {
                write!(w, ",{}", rec.od_corrected_gaps[i])?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Ranked candidate table:
/// `rank,route_links,tstt_vehh,system_cost_vehh,system_cost_pct`.
/// `route_links` is the dash-joined link-id sequence of the convoy route.
pub fn write_routes_ranked_csv(path: &FsPath, hash: &str, outcome: &OptimizeOutcome) -> Result<()> {
    let mut w = create(path, hash)?;
    writeln!(w, "rank,route_links,tstt_vehh,system_cost_vehh,system_cost_pct")?;
    for (i, ev) in outcome.ranked.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i + 1,
            join_ids(&ev.route_link_ids),
            ev.tstt_vehh,
            ev.system_cost_vehh,
            ev.system_cost_pct(outcome.baseline_tstt_vehh)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format sensitivity table:
/// `sweep_param,value,rank,candidate,route_links,tstt_vehh,system_cost_vehh,system_cost_pct`.
/// Baseline rows carry rank 0 and the literal route `baseline`.
pub fn write_sensitivity_csv(path: &FsPath, hash: &str, rows: &[SensitivityRow]) -> Result<()> {
    let mut w = create(path, hash)?;
    writeln!(
        w,
        "sweep_param,value,rank,candidate,route_links,tstt_vehh,system_cost_vehh,system_cost_pct"
    )?;
    for r in rows {
        let route = if r.route_link_ids.is_empty() {
            "baseline".to_string()
        } else {
            join_ids(&r.route_link_ids)
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.sweep_param,
            r.value,
            r.rank,
            r.candidate,
            route,
            r.tstt_vehh,
            r.system_cost_vehh,
            r.system_cost_pct
        )?;
    }
    w.flush()?;
    Ok(())
}

/// One stacked comparison row: which cost model, which convoy scenario, and
/// the average corrected gap its converged flows leave under truth times.
#[derive(Debug, Clone)]
pub struct ModelSummaryRow {
    pub model: String,
    pub path_scenario: String,
    pub avg_corrected_gap: f64,
}

/// Model comparison table: `model,path_scenario,avg_corrected_gap`.
pub fn write_model_summary_csv(path: &FsPath, hash: &str, rows: &[ModelSummaryRow]) -> Result<()> {
    let mut w = create(path, hash)?;
    writeln!(w, "model,path_scenario,avg_corrected_gap")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.model, r.path_scenario, r.avg_corrected_gap)?;
    }
    w.flush()?;
    Ok(())
}

/// Machine-readable assignment summary: config echo, hash, totals, and
/// per-interval convergence series. The corrected-gap series is attached for
/// distorted models.
pub fn assignment_summary(
    config: &Value,
    hash: &str,
    ods: &[OdPair],
    result: &AssignmentResult,
    include_corrected: bool,
) -> Value {
    let mut summary = json!({
        "config": config,
        "config_hash": hash,
        "od_count": ods.len(),
        "tstt_vehh": result.tstt_vehh,
        "truth_tstt_vehh": result.truth_tstt_vehh,
        "intervals": result.intervals.len(),
        "intervals_converged": result.intervals_converged(),
        "max_iterations": result.max_iterations(),
        "aggregate_gap_series": result.intervals.iter().map(|r| r.aggregate_gap).collect::<Vec<_>>(),
    });
    if include_corrected {
        summary["corrected_gap_series"] =
            json!(result.intervals.iter().map(|r| r.corrected_gap).collect::<Vec<_>>());
        summary["mean_corrected_gap"] = json!(result.mean_corrected_gap());
        summary["max_corrected_gap"] = json!(result.max_corrected_gap());
    }
    summary
}

/// Machine-readable optimization summary: the best route plus the ranking.
pub fn optimize_summary(config: &Value, hash: &str, outcome: &OptimizeOutcome) -> Value {
    let route_json = |ev: &crate::optimizer::RouteEvaluation, rank: usize| {
        json!({
            "rank": rank,
            "candidate": ev.candidate,
            "route_links": ev.route_link_ids,
            "route_nodes": ev.route_node_ids,
            "route_fftt_s": ev.route_fftt_h * 3600.0,
            "tstt_vehh": ev.tstt_vehh,
            "system_cost_vehh": ev.system_cost_vehh,
            "system_cost_pct": ev.system_cost_pct(outcome.baseline_tstt_vehh),
            "intervals_converged": ev.intervals_converged,
            "intervals_total": ev.intervals_total,
            "mean_gap": ev.mean_gap,
            "max_gap": ev.max_gap,
        })
    };
    json!({
        "config": config,
        "config_hash": hash,
        "baseline_tstt_vehh": outcome.baseline_tstt_vehh,
        "best_route": route_json(outcome.best(), 1),
        "ranked": outcome
            .ranked
            .iter()
            .enumerate()
            .map(|(i, ev)| route_json(ev, i + 1))
            .collect::<Vec<_>>(),
    })
}

/// Writes a pretty-printed JSON document with a trailing newline. JSON has no
/// comment syntax, so the config hash lives inside the document instead of on
/// a leading comment line.
pub fn write_json(path: &FsPath, value: &Value) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating output file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
