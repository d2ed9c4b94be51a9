//! Command-line front end: reproducible assignment, route-ranking, and
//! sensitivity runs over GMNS-style CSV inputs, with CSV/JSON artifacts
//! suitable for plotting. Times cross this boundary in seconds; the engine
//! works in hours internally.

use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use qbta_core::capacity::{
    compile_profile, default_theta, flat_profile, load_events, AtmaRoute, CapacityProfile,
    CapacityReductionEvent,
};
use qbta_core::network::{
    load_demand, load_network, path_from_node_ids, Network, OdPair, TimeGrid,
};
use qbta_core::optimizer::{
    enumerate_candidates, optimize, sensitivity_sweep, SensitivitySpec, Study,
};
use qbta_core::report::{
    self, assignment_summary, config_hash, file_sha256, optimize_summary, ModelSummaryRow,
};
use qbta_core::solver::{
    run_assignment, ConvergenceParams, CostModel, QueueCommitCapacity,
};

#[derive(Parser)]
#[command(
    name = "qbta",
    version,
    about = "Queue-based semi-dynamic traffic assignment with moving maintenance-convoy capacity drops"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one assignment and write link flows, gap trace, and a summary
    Assign(AssignArgs),
    /// Rank candidate convoy routes by the system cost each one adds
    Optimize(OptimizeArgs),
    /// Sweep demand multipliers and convoy speeds over the candidates
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct SharedArgs {
    /// Directory containing node.csv and link.csv
    #[arg(long, value_name = "DIR")]
    network_dir: PathBuf,
    /// Demand table (o_zone_id,d_zone_id,volume)
    #[arg(long, value_name = "FILE")]
    demand: PathBuf,
    /// Horizon length in seconds
    #[arg(long, value_name = "S")]
    horizon_s: f64,
    /// Interval length in seconds; must divide the horizon evenly
    #[arg(long, value_name = "S")]
    dt_s: f64,
    /// Relative-gap tolerance as a fraction (0.001 = 0.1%)
    #[arg(long, default_value_t = 1e-3)]
    gap_tol: f64,
    /// Inner-iteration cap per OD pair and interval
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    /// Uniform reduction fraction while the convoy occupies a link
    /// (default: 1/lanes, per link)
    #[arg(long)]
    theta: Option<f64>,
    /// Cost model: proposed | benchmark1 | benchmark2
    #[arg(long, default_value = "proposed")]
    model: String,
    /// Output directory, created if missing
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Worker threads for candidate evaluation; 0 = all cores, 1 = sequential
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Which interval's discharge rate advances the queue recursion
    #[arg(long, value_name = "prev|curr", default_value = "prev")]
    queue_commit_capacity: String,
}

#[derive(Args)]
struct ConvoyArgs {
    /// Explicit convoy route as comma-separated node ids; repeatable to give
    /// an explicit candidate list
    #[arg(long = "atma-route", value_name = "N1,N2,...")]
    atma_route: Vec<String>,
    /// Convoy endpoints "origin,destination" for k-shortest enumeration
    #[arg(long = "atma-od", value_name = "O,D", conflicts_with = "atma_route")]
    atma_od: Option<String>,
    /// How many shortest candidate routes to enumerate
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Convoy crawl speed in mph
    #[arg(long = "atma-speed-mph", default_value_t = 10.0)]
    atma_speed_mph: f64,
    /// Convoy departure time in seconds after the horizon start
    #[arg(long = "atma-start-s", default_value_t = 0.0)]
    atma_start_s: f64,
    /// Links under maintenance, as "from-to" node pairs or bare link ids
    #[arg(long = "maintenance-links", value_name = "A-B,C-D,...")]
    maintenance_links: Option<String>,
    /// Drop enumerated candidates that miss any maintenance link
    #[arg(long, default_value_t = false)]
    require_coverage: bool,
}

#[derive(Args)]
struct AssignArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    convoy: ConvoyArgs,
    /// Hand-authored reduction windows (link_id,t_start_s,t_end_s,theta);
    /// mutually exclusive with a convoy route
    #[arg(long, value_name = "FILE", conflicts_with_all = ["atma_route", "atma_od"])]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    convoy: ConvoyArgs,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    shared: SharedArgs,
    #[command(flatten)]
    convoy: ConvoyArgs,
    /// Comma-separated demand multipliers, e.g. "1.1,1.2,1.3"
    #[arg(long = "demand-multipliers", value_name = "M1,M2,...")]
    demand_multipliers: Option<String>,
    /// Comma-separated convoy speeds in mph, e.g. "10,15,20"
    #[arg(long = "atma-speeds-mph", value_name = "V1,V2,...")]
    atma_speeds_mph: Option<String>,
}

/// Failures before any computation exit 2; failures during or after exit 3.
enum RunError {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

type CliResult<T> = std::result::Result<T, RunError>;

trait Stage<T> {
    fn config(self) -> CliResult<T>;
    fn runtime(self) -> CliResult<T>;
}

impl<T> Stage<T> for Result<T> {
    fn config(self) -> CliResult<T> {
        self.map_err(RunError::Config)
    }
    fn runtime(self) -> CliResult<T> {
        self.map_err(RunError::Runtime)
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(RunError::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            2
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("runtime error: {e:#}");
            3
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Assign(args) => cmd_assign(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Sensitivity(args) => cmd_sensitivity(args),
    }
}

/// Everything validated and loaded before any computation starts.
struct Prepared {
    net: Network,
    ods: Vec<OdPair>,
    grid: TimeGrid,
    params: ConvergenceParams,
    theta: Option<f64>,
    model: CostModel,
    model_name: String,
    commit: QueueCommitCapacity,
    out: PathBuf,
    jobs: usize,
    /// Canonical config (content digests instead of paths; no out/jobs).
    canonical: Value,
    /// Full config echo for the summary, including paths, out, and jobs.
    echo: Value,
}

impl Prepared {
    fn hash(&self) -> String {
        config_hash(&self.canonical)
    }

    fn study<'a>(&'a self, demands: &'a [OdPair]) -> Study<'a> {
        Study {
            net: &self.net,
            demands,
            grid: self.grid,
            params: self.params,
            theta: self.theta,
            model: self.model,
            commit: self.commit,
        }
    }
}

fn parse_model(name: &str) -> Result<CostModel> {
    match name {
        "proposed" => Ok(CostModel::PointQueue),
        "benchmark1" => Ok(CostModel::PointQueueNoDrop),
        "benchmark2" => Ok(CostModel::Bpr(Default::default())),
        other => bail!("unknown model '{other}', expected proposed | benchmark1 | benchmark2"),
    }
}

fn prepare(shared: &SharedArgs, command: &str, extra: Value) -> Result<Prepared> {
    let model = parse_model(&shared.model)?;
    let commit = QueueCommitCapacity::from_str(&shared.queue_commit_capacity)
        .context("--queue-commit-capacity")?;
    if let Some(t) = shared.theta {
        if !(0.0..1.0).contains(&t) {
            bail!("--theta must be in [0, 1), got {t}");
        }
    }
    let grid = TimeGrid::from_seconds(shared.horizon_s, shared.dt_s)
        .context("--horizon-s / --dt-s")?;
    let params = ConvergenceParams {
        gap_tolerance: shared.gap_tol,
        max_iterations: shared.max_iters,
        ..Default::default()
    };
    params.validate().context("--gap-tol / --max-iters")?;

    let net = load_network(&shared.network_dir)?;
    let ods = load_demand(&shared.demand, &net)?;

    let node_csv = shared.network_dir.join("node.csv");
    let link_csv = shared.network_dir.join("link.csv");
    let canonical = json!({
        "command": command,
        "horizon_s": shared.horizon_s,
        "dt_s": shared.dt_s,
        "gap_tol": shared.gap_tol,
        "max_iters": shared.max_iters,
        "theta": shared.theta,
        "model": shared.model,
        "queue_commit_capacity": shared.queue_commit_capacity,
        "inputs": {
            "node_csv_sha256": file_sha256(&node_csv)?,
            "link_csv_sha256": file_sha256(&link_csv)?,
            "demand_csv_sha256": file_sha256(&shared.demand)?,
        },
        "scenario": extra,
    });
    let mut echo = canonical.clone();
    echo["network_dir"] = json!(shared.network_dir.display().to_string());
    echo["demand"] = json!(shared.demand.display().to_string());
    echo["out"] = json!(shared.out.display().to_string());
    echo["jobs"] = json!(shared.jobs);

    std::fs::create_dir_all(&shared.out)
        .with_context(|| format!("creating output directory {}", shared.out.display()))?;

    Ok(Prepared {
        net,
        ods,
        grid,
        params,
        theta: shared.theta,
        model,
        model_name: shared.model.clone(),
        commit,
        out: shared.out.clone(),
        jobs: shared.jobs,
        canonical,
        echo,
    })
}

fn parse_i64_list(s: &str, what: &str) -> Result<Vec<i64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<i64>()
                .with_context(|| format!("{what}: '{tok}' is not an integer id"))
        })
        .collect()
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .with_context(|| format!("{what}: '{tok}' is not a number"))
        })
        .collect()
}

/// Maintenance links given either as bare link ids or "from-to" node pairs.
fn parse_maintenance_links(net: &Network, s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for tok in s.split(',') {
        let tok = tok.trim();
        if let Some((a, b)) = tok.split_once('-') {
            let from: i64 = a.trim().parse().context("maintenance link endpoint")?;
            let to: i64 = b.trim().parse().context("maintenance link endpoint")?;
            let idx = net.link_between(from, to).ok_or_else(|| {
                anyhow::anyhow!("no link from node {from} to node {to} in the network")
            })?;
            out.push(idx);
        } else {
            let id: i64 = tok.parse().context("maintenance link id")?;
            let idx = net
                .link_idx(id)
                .ok_or_else(|| anyhow::anyhow!("unknown link id {id}"))?;
            out.push(idx);
        }
    }
    Ok(out)
}

/// Resolves the candidate convoy routes: explicit node lists verbatim, or
/// k-shortest enumeration between the given endpoints.
fn resolve_candidates(
    net: &Network,
    convoy: &ConvoyArgs,
    warnings: &mut Vec<String>,
) -> Result<Vec<AtmaRoute>> {
    let start_h = convoy.atma_start_s / 3600.0;
    if !convoy.atma_route.is_empty() {
        return convoy
            .atma_route
            .iter()
            .map(|spec| {
                let nodes = parse_i64_list(spec, "--atma-route")?;
                let path = path_from_node_ids(net, &nodes)?;
                AtmaRoute::new(net, path, start_h, convoy.atma_speed_mph)
            })
            .collect();
    }
    let Some(od) = &convoy.atma_od else {
        bail!("supply a convoy route with --atma-route or endpoints with --atma-od");
    };
    let ids = parse_i64_list(od, "--atma-od")?;
    let [o, d] = ids[..] else {
        bail!("--atma-od expects exactly two node ids, got '{od}'");
    };
    let origin = net
        .node_idx(o)
        .ok_or_else(|| anyhow::anyhow!("--atma-od: unknown node id {o}"))?;
    let destination = net
        .node_idx(d)
        .ok_or_else(|| anyhow::anyhow!("--atma-od: unknown node id {d}"))?;
    let maintenance = match &convoy.maintenance_links {
        Some(s) => parse_maintenance_links(net, s)?,
        None => Vec::new(),
    };
    let (paths, warning) = enumerate_candidates(
        net,
        origin,
        destination,
        &maintenance,
        convoy.k,
        convoy.require_coverage,
    )?;
    if let Some(w) = warning {
        eprintln!("warning: {w}");
        warnings.push(w);
    }
    paths
        .into_iter()
        .map(|p| AtmaRoute::new(net, p, start_h, convoy.atma_speed_mph))
        .collect()
}

fn convoy_echo(convoy: &ConvoyArgs) -> Value {
    json!({
        "atma_route": convoy.atma_route,
        "atma_od": convoy.atma_od,
        "k": convoy.k,
        "atma_speed_mph": convoy.atma_speed_mph,
        "atma_start_s": convoy.atma_start_s,
        "maintenance_links": convoy.maintenance_links,
        "require_coverage": convoy.require_coverage,
    })
}

/// Fills unspecified per-event reductions: a uniform --theta wins, otherwise
/// each link's lane-based default applies.
fn compile_with_defaults(
    net: &Network,
    grid: &TimeGrid,
    mut events: Vec<CapacityReductionEvent>,
    theta: Option<f64>,
) -> Result<CapacityProfile> {
    if theta.is_none() {
        for ev in &mut events {
            if ev.theta.is_none() {
                ev.theta = Some(default_theta(net.links[ev.link].lanes));
            }
        }
    }
    compile_profile(&events, net, grid, theta.unwrap_or(0.0))
}

fn route_label(net: &Network, route: &AtmaRoute) -> String {
    route
        .path
        .node_ids(net)
        .iter()
        .map(|n| n.to_string())
        .collect::<Vec<_>>()
        .join("-")
}

fn cmd_assign(args: AssignArgs) -> CliResult<()> {
    let mut extra = convoy_echo(&args.convoy);
    if let Some(ev) = &args.events {
        extra["events_csv_sha256"] = json!(file_sha256(ev).map_err(RunError::Config)?);
    }
    let prepared = prepare(&args.shared, "assign", extra).config()?;
    let mut warnings = Vec::new();

    // Scenario: explicit event windows, a convoy route, or all-base capacity.
    let (profile, scenario) = if let Some(path) = &args.events {
        let events = load_events(path, &prepared.net).config()?;
        let profile =
            compile_with_defaults(&prepared.net, &prepared.grid, events, prepared.theta)
                .config()?;
        (profile, "events".to_string())
    } else if !args.convoy.atma_route.is_empty() || args.convoy.atma_od.is_some() {
        let mut candidates =
            resolve_candidates(&prepared.net, &args.convoy, &mut warnings).config()?;
        if candidates.len() > 1 && !args.convoy.atma_route.is_empty() {
            return Err(RunError::Config(anyhow::anyhow!(
                "assign runs one scenario; give a single --atma-route (or use optimize)"
            )));
        }
        let route = candidates.remove(0);
        let label = route_label(&prepared.net, &route);
        let events = qbta_core::capacity::build_atma_schedule(&prepared.net, &route);
        let profile =
            compile_with_defaults(&prepared.net, &prepared.grid, events, prepared.theta)
                .config()?;
        (profile, format!("route-{label}"))
    } else {
        (flat_profile(&prepared.net, &prepared.grid), "none".to_string())
    };

    let hash = prepared.hash();
    let result = run_assignment(
        &prepared.net,
        &prepared.ods,
        &profile,
        prepared.grid,
        prepared.params,
        prepared.model,
        prepared.commit,
    )
    .runtime()?;

    let include_corrected = prepared.model != CostModel::PointQueue;
    report::write_link_flows_csv(
        &prepared.out.join("link_flows.csv"),
        &hash,
        &prepared.net,
        &profile,
        &result,
    )
    .runtime()?;
    report::write_gap_trace_csv(
        &prepared.out.join("gap_trace.csv"),
        &hash,
        &prepared.ods,
        &result,
        include_corrected,
    )
    .runtime()?;
    let mut summary =
        assignment_summary(&prepared.echo, &hash, &prepared.ods, &result, include_corrected);
    summary["scenario"] = json!(scenario);
    if !warnings.is_empty() {
        summary["warnings"] = json!(warnings);
    }
    report::write_json(&prepared.out.join("summary.json"), &summary).runtime()?;
    report::write_model_summary_csv(
        &prepared.out.join("model_summary.csv"),
        &hash,
        &[ModelSummaryRow {
            model: prepared.model_name.clone(),
            path_scenario: scenario.clone(),
            avg_corrected_gap: result.mean_corrected_gap(),
        }],
    )
    .runtime()?;

    println!(
        "assign[{}] scenario={} intervals={}/{} converged tstt={:.3} veh-h -> {}",
        prepared.model_name,
        scenario,
        result.intervals_converged(),
        result.intervals.len(),
        result.tstt_vehh,
        prepared.out.display()
    );
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> CliResult<()> {
    let prepared = prepare(&args.shared, "optimize", convoy_echo(&args.convoy)).config()?;
    let mut warnings = Vec::new();
    let candidates =
        resolve_candidates(&prepared.net, &args.convoy, &mut warnings).config()?;
    let hash = prepared.hash();

    let study = prepared.study(&prepared.ods);
    let outcome = optimize(&study, &candidates, prepared.jobs).runtime()?;

    report::write_routes_ranked_csv(&prepared.out.join("routes_ranked.csv"), &hash, &outcome)
        .runtime()?;
    let mut summary = optimize_summary(&prepared.echo, &hash, &outcome);
    if !warnings.is_empty() {
        summary["warnings"] = json!(warnings);
    }
    report::write_json(&prepared.out.join("best_route.json"), &summary).runtime()?;

    let best = outcome.best();
    println!(
        "optimize[{}] candidates={} best=candidate {} (+{:.4}% of baseline {:.3} veh-h) -> {}",
        prepared.model_name,
        outcome.ranked.len(),
        best.candidate,
        best.system_cost_pct(outcome.baseline_tstt_vehh),
        outcome.baseline_tstt_vehh,
        prepared.out.display()
    );
    Ok(())
}

fn cmd_sensitivity(args: SensitivityArgs) -> CliResult<()> {
    let mut extra = convoy_echo(&args.convoy);
    extra["demand_multipliers"] = json!(args.demand_multipliers);
    extra["atma_speeds_mph"] = json!(args.atma_speeds_mph);
    let prepared = prepare(&args.shared, "sensitivity", extra).config()?;

    let spec = SensitivitySpec {
        demand_multipliers: match &args.demand_multipliers {
            Some(s) => parse_f64_list(s, "--demand-multipliers").config()?,
            None => Vec::new(),
        },
        atma_speeds_mph: match &args.atma_speeds_mph {
            Some(s) => parse_f64_list(s, "--atma-speeds-mph").config()?,
            None => Vec::new(),
        },
    };
    spec.validate().config()?;
    let mut warnings = Vec::new();
    let candidates =
        resolve_candidates(&prepared.net, &args.convoy, &mut warnings).config()?;
    let hash = prepared.hash();

    let study = prepared.study(&prepared.ods);
    let rows = sensitivity_sweep(&study, &spec, &candidates, prepared.jobs).runtime()?;

    report::write_sensitivity_csv(&prepared.out.join("sensitivity.csv"), &hash, &rows)
        .runtime()?;
    let mut summary = json!({
        "config": prepared.echo,
        "config_hash": hash,
        "rows": rows.len(),
        "candidates": candidates.len(),
        "sweep_points": spec.demand_multipliers.len() + spec.atma_speeds_mph.len(),
    });
    if !warnings.is_empty() {
        summary["warnings"] = json!(warnings);
    }
    report::write_json(&prepared.out.join("sensitivity_summary.json"), &summary).runtime()?;

    println!(
        "sensitivity[{}] candidates={} sweep_points={} rows={} -> {}",
        prepared.model_name,
        candidates.len(),
        spec.demand_multipliers.len() + spec.atma_speeds_mph.len(),
        rows.len(),
        prepared.out.display()
    );
    Ok(())
}
