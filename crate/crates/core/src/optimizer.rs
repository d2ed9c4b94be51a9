//! Maintenance-route selection. Enumerates candidate convoy routes between a
//! work-zone origin and destination, prices each candidate by rerunning the
//! full assignment under the capacity schedule it induces, and ranks the
//! candidates by the system cost they add over a shared no-convoy baseline.
//! Also hosts the demand- and crawl-speed sensitivity sweeps built on the
//! same machinery.

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use crate::capacity::{
    build_atma_schedule, compile_profile, default_theta, flat_profile, AtmaRoute, CapacityProfile,
};
use crate::network::{k_shortest_paths, Network, OdPair, Path, TimeGrid};
use crate::solver::{
    run_assignment, AssignmentResult, ConvergenceParams, CostModel, QueueCommitCapacity,
};

/// Shared inputs for one route study. Every baseline and candidate evaluation
/// in a study uses the same network, demand table, grid, and solver settings,
/// so added costs are directly comparable.
#[derive(Clone, Copy)]
pub struct Study<'a> {
    pub net: &'a Network,
    pub demands: &'a [OdPair],
    pub grid: TimeGrid,
    pub params: ConvergenceParams,
    /// Uniform reduction fraction while the convoy occupies a link. `None`
    /// falls back to each link's lane-based default.
    pub theta: Option<f64>,
    pub model: CostModel,
    pub commit: QueueCommitCapacity,
}

impl<'a> Study<'a> {
    /// Compiles the reduction profile the convoy induces along `route`.
    pub fn schedule_profile(&self, route: &AtmaRoute) -> Result<CapacityProfile> {
        let mut events = build_atma_schedule(self.net, route);
        if self.theta.is_none() {
            for ev in &mut events {
                ev.theta = Some(default_theta(self.net.links[ev.link].lanes));
            }
        }
        compile_profile(&events, self.net, &self.grid, self.theta.unwrap_or(0.0))
    }

    fn run(&self, profile: &CapacityProfile) -> Result<AssignmentResult> {
        run_assignment(
            self.net,
            self.demands,
            profile,
            self.grid,
            self.params,
            self.model,
            self.commit,
        )
    }

    /// Assignment with every link at base capacity throughout.
    pub fn run_baseline(&self) -> Result<AssignmentResult> {
        self.run(&flat_profile(self.net, &self.grid))
    }
}

/// One candidate priced by a full assignment run. Totals are measured under
/// reduction-aware travel times, so a distorted cost model is still charged
/// for the queueing its flows actually cause; under the standard model these
/// coincide with the model's own converged times.
#[derive(Debug, Clone)]
pub struct RouteEvaluation {
    pub route: AtmaRoute,
    /// 1-based position in the candidate enumeration order (stable across
    /// runs; rankings refer to candidates by this number).
    pub candidate: usize,
    pub route_link_ids: Vec<i64>,
    pub route_node_ids: Vec<i64>,
    /// Route traversal time at general-traffic free speeds, hours.
    pub route_fftt_h: f64,
    pub tstt_vehh: f64,
    /// Added total time over the shared no-convoy baseline, veh-hours.
    pub system_cost_vehh: f64,
    pub intervals_total: usize,
    pub intervals_converged: usize,
    pub max_gap: f64,
    pub mean_gap: f64,
    pub mean_corrected_gap: f64,
}

impl RouteEvaluation {
    /// Added cost as a percentage of the baseline total.
    pub fn system_cost_pct(&self, baseline_tstt_vehh: f64) -> f64 {
        if baseline_tstt_vehh <= 0.0 {
            return 0.0;
        }
        100.0 * self.system_cost_vehh / baseline_tstt_vehh
    }
}

/// Prices one convoy route: builds its occupancy schedule, compiles the
/// capacity profile, reruns the assignment, and reports the added total time
/// over the supplied no-convoy baseline total.
pub fn system_cost(
    study: &Study,
    route: &AtmaRoute,
    candidate: usize,
    baseline_tstt_vehh: f64,
) -> Result<RouteEvaluation> {
    let profile = study.schedule_profile(route)?;
    let result = study.run(&profile)?;
    let n = result.intervals.len();
    let mean_gap = if n == 0 {
        0.0
    } else {
        result.intervals.iter().map(|r| r.aggregate_gap).sum::<f64>() / n as f64
    };
    let max_gap = result.intervals.iter().map(|r| r.aggregate_gap).fold(0.0, f64::max);
    Ok(RouteEvaluation {
        route_link_ids: route.path.link_ids(study.net),
        route_node_ids: route.path.node_ids(study.net),
        route_fftt_h: route.path.cost(&study.net.free_flow_times()),
        route: route.clone(),
        candidate,
        tstt_vehh: result.truth_tstt_vehh,
        system_cost_vehh: result.truth_tstt_vehh - baseline_tstt_vehh,
        intervals_total: n,
        intervals_converged: result.intervals_converged(),
        max_gap,
        mean_gap,
        mean_corrected_gap: result.mean_corrected_gap(),
    })
}

/// The `k` shortest free-flow routes between two nodes (internal indices),
/// optionally filtered to those covering every maintenance link. When the
/// filter would empty the list, the unfiltered list is kept and a warning
/// string is returned alongside it.
pub fn enumerate_candidates(
    net: &Network,
    origin: usize,
    destination: usize,
    maintenance_links: &[usize],
    k: usize,
    require_coverage: bool,
) -> Result<(Vec<Path>, Option<String>)> {
    if k == 0 {
        bail!("candidate count k must be at least 1");
    }
    let times = net.free_flow_times();
    let ranked = k_shortest_paths(net, &times, origin, destination, k);
    let paths: Vec<Path> = ranked.into_iter().map(|(p, _)| p).collect();
    if paths.is_empty() {
        bail!(
            "no route from node {} to node {}",
            net.nodes[origin].id,
            net.nodes[destination].id
        );
    }
    if !require_coverage || maintenance_links.is_empty() {
        return Ok((paths, None));
    }
    let covering: Vec<Path> = paths
        .iter()
        .filter(|p| maintenance_links.iter().all(|l| p.links.contains(l)))
        .cloned()
        .collect();
    if covering.is_empty() {
        let warning = format!(
            "none of the {} candidate routes covers every maintenance link; keeping the unfiltered list",
            paths.len()
        );
        Ok((paths, Some(warning)))
    } else {
        Ok((covering, None))
    }
}

/// Full ranking of one candidate set against one shared baseline.
#[derive(Debug)]
pub struct OptimizeOutcome {
    /// Best first: smallest added cost, ties broken by shorter route
    /// free-flow time, then lexicographic link ids.
    pub ranked: Vec<RouteEvaluation>,
    pub baseline_tstt_vehh: f64,
    pub baseline: AssignmentResult,
}

impl OptimizeOutcome {
    pub fn best(&self) -> &RouteEvaluation {
        &self.ranked[0]
    }
}

/// Evaluates every candidate against one shared baseline and returns the
/// ranking. Candidates run in parallel on `jobs` workers (0 = library
/// default); each evaluation owns its state and results are merged in
/// enumeration order, so the outcome is identical for any worker count.
pub fn optimize(study: &Study, candidates: &[AtmaRoute], jobs: usize) -> Result<OptimizeOutcome> {
    if candidates.is_empty() {
        bail!("no candidate routes to evaluate");
    }
    let baseline = study.run_baseline()?;
    let tstt0 = baseline.truth_tstt_vehh;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building the evaluation thread pool")?;
    let mut ranked: Vec<RouteEvaluation> = pool.install(|| {
        candidates
            .par_iter()
            .enumerate()
            .map(|(i, route)| system_cost(study, route, i + 1, tstt0))
            .collect::<Result<Vec<_>>>()
    })?;
    ranked.sort_by(|a, b| {
        a.system_cost_vehh
            .total_cmp(&b.system_cost_vehh)
            .then(a.route_fftt_h.total_cmp(&b.route_fftt_h))
            .then_with(|| a.route_link_ids.cmp(&b.route_link_ids))
    });
    Ok(OptimizeOutcome { ranked, baseline_tstt_vehh: tstt0, baseline })
}

/// Axes for the sensitivity study: demand scaling and convoy crawl speed.
#[derive(Debug, Clone, Default)]
pub struct SensitivitySpec {
    pub demand_multipliers: Vec<f64>,
    pub atma_speeds_mph: Vec<f64>,
}

impl SensitivitySpec {
    pub fn validate(&self) -> Result<()> {
        if self.demand_multipliers.is_empty() && self.atma_speeds_mph.is_empty() {
            bail!("nothing to sweep: no demand multipliers and no convoy speeds given");
        }
        for &m in &self.demand_multipliers {
            if !(m > 0.0) {
                bail!("demand multiplier must be positive, got {m}");
            }
        }
        for &v in &self.atma_speeds_mph {
            if !(v > 0.0) {
                bail!("convoy speed must be positive, got {v} mph");
            }
        }
        Ok(())
    }
}

/// One row of the sensitivity table. `rank == 0` marks the sweep point's own
/// no-convoy baseline; candidate rows follow, best first.
#[derive(Debug, Clone)]
pub struct SensitivityRow {
    pub sweep_param: &'static str,
    pub value: f64,
    pub rank: usize,
    pub candidate: usize,
    pub route_link_ids: Vec<i64>,
    pub tstt_vehh: f64,
    pub system_cost_vehh: f64,
    /// Added cost relative to this sweep point's own baseline, percent.
    pub system_cost_pct: f64,
    pub baseline_tstt_vehh: f64,
}

/// Reruns the baseline and all candidates at every sweep point. Demand sweeps
/// scale every OD volume by the multiplier; speed sweeps re-time the convoy's
/// occupancy windows at the given crawl speed. Relative costs are always
/// against the same sweep point's baseline, never reused across points.
pub fn sensitivity_sweep(
    study: &Study,
    spec: &SensitivitySpec,
    candidates: &[AtmaRoute],
    jobs: usize,
) -> Result<Vec<SensitivityRow>> {
    spec.validate()?;
    if candidates.is_empty() {
        bail!("no candidate routes to evaluate");
    }
    let mut rows = Vec::new();
    for &mult in &spec.demand_multipliers {
        let scaled: Vec<OdPair> = study
            .demands
            .iter()
            .map(|od| OdPair { demand_vph: od.demand_vph * mult, ..od.clone() })
            .collect();
        let point = Study { demands: &scaled, ..*study };
        let outcome = optimize(&point, candidates, jobs)
            .with_context(|| format!("sweep point: demand multiplier {mult}"))?;
        push_rows(&mut rows, "demand_multiplier", mult, &outcome);
    }
    for &speed in &spec.atma_speeds_mph {
        let retimed: Vec<AtmaRoute> = candidates
            .iter()
            .map(|r| AtmaRoute::new(study.net, r.path.clone(), r.start_h, speed))
            .collect::<Result<Vec<_>>>()?;
        let outcome = optimize(study, &retimed, jobs)
            .with_context(|| format!("sweep point: convoy speed {speed} mph"))?;
        push_rows(&mut rows, "atma_speed_mph", speed, &outcome);
    }
    Ok(rows)
}

fn push_rows(
    rows: &mut Vec<SensitivityRow>,
    param: &'static str,
    value: f64,
    outcome: &OptimizeOutcome,
) {
    rows.push(SensitivityRow {
        sweep_param: param,
        value,
        rank: 0,
        candidate: 0,
        route_link_ids: Vec::new(),
        tstt_vehh: outcome.baseline_tstt_vehh,
        system_cost_vehh: 0.0,
        system_cost_pct: 0.0,
        baseline_tstt_vehh: outcome.baseline_tstt_vehh,
    });
    for (i, ev) in outcome.ranked.iter().enumerate() {
        rows.push(SensitivityRow {
            sweep_param: param,
            value,
            rank: i + 1,
            candidate: ev.candidate,
            route_link_ids: ev.route_link_ids.clone(),
            tstt_vehh: ev.tstt_vehh,
            system_cost_vehh: ev.system_cost_vehh,
            system_cost_pct: ev.system_cost_pct(outcome.baseline_tstt_vehh),
            baseline_tstt_vehh: outcome.baseline_tstt_vehh,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::tests::two_path_net;
    use crate::network::path_from_node_ids;

    fn demand() -> Vec<OdPair> {
        vec![OdPair {
            origin: 0,
            destination: 3,
            origin_id: 1,
            destination_id: 4,
            demand_vph: 6000.0,
        }]
    }

    fn study<'a>(net: &'a Network, demands: &'a [OdPair], theta: Option<f64>) -> Study<'a> {
        Study {
            net,
            demands,
            grid: TimeGrid::from_seconds(600.0, 30.0).unwrap(),
            params: ConvergenceParams {
                gap_tolerance: 1e-4,
                max_iterations: 50,
                ..Default::default()
            },
            theta,
            model: CostModel::PointQueue,
            commit: QueueCommitCapacity::Prev,
        }
    }

    fn routes(net: &Network, speed: f64) -> Vec<AtmaRoute> {
        let direct = path_from_node_ids(net, &[1, 4]).unwrap();
        let chain = path_from_node_ids(net, &[1, 2, 3, 4]).unwrap();
        vec![
            AtmaRoute::new(net, direct, 0.0, speed).unwrap(),
            AtmaRoute::new(net, chain, 0.0, speed).unwrap(),
        ]
    }

    #[test]
    fn exhaustive_enumeration_finds_both_routes() {
        let net = two_path_net();
        let (paths, warn) = enumerate_candidates(&net, 0, 3, &[], 10, false).unwrap();
        assert!(warn.is_none());
        assert_eq!(paths.len(), 2);
        // Direct 90 s route first, 135 s chain second.
        assert_eq!(paths[0].link_ids(&net), vec![1]);
        assert_eq!(paths[1].link_ids(&net), vec![2, 3, 4]);
    }

    #[test]
    fn coverage_filter_keeps_only_covering_routes() {
        let net = two_path_net();
        let chain_first = net.link_idx(2).unwrap();
        let (paths, warn) = enumerate_candidates(&net, 0, 3, &[chain_first], 10, true).unwrap();
        assert!(warn.is_none());
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].link_ids(&net), vec![2, 3, 4]);
    }

    #[test]
    fn impossible_coverage_warns_and_keeps_unfiltered_list() {
        let net = two_path_net();
        // No simple path contains both the direct link and a chain link.
        let want = vec![net.link_idx(1).unwrap(), net.link_idx(2).unwrap()];
        let (paths, warn) = enumerate_candidates(&net, 0, 3, &want, 10, true).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(warn.unwrap().contains("keeping the unfiltered list"));
    }

    #[test]
    fn unreachable_endpoints_error() {
        let net = two_path_net();
        assert!(enumerate_candidates(&net, 3, 0, &[], 5, false).is_err());
        assert!(enumerate_candidates(&net, 0, 3, &[], 0, false).is_err());
    }

    #[test]
    fn zero_reduction_costs_exactly_nothing() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, Some(0.0));
        let outcome = optimize(&st, &routes(&net, 10.0), 1).unwrap();
        for ev in &outcome.ranked {
            assert_eq!(ev.system_cost_vehh, 0.0);
            assert_eq!(ev.tstt_vehh.to_bits(), outcome.baseline_tstt_vehh.to_bits());
        }
        // All costs tie; the shorter-free-flow-time route ranks first.
        assert_eq!(outcome.ranked[0].route_link_ids, vec![1]);
    }

    #[test]
    fn slower_convoy_never_costs_less() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, Some(0.5));
        let baseline = st.run_baseline().unwrap();
        let slow = routes(&net, 10.0);
        let fast = routes(&net, 20.0);
        for i in 0..slow.len() {
            let c_slow =
                system_cost(&st, &slow[i], i + 1, baseline.truth_tstt_vehh).unwrap();
            let c_fast =
                system_cost(&st, &fast[i], i + 1, baseline.truth_tstt_vehh).unwrap();
            assert!(c_slow.system_cost_vehh > 0.0, "route {i} should cost something");
            assert!(
                c_fast.system_cost_vehh <= c_slow.system_cost_vehh + 1e-12,
                "route {i}: fast {} vs slow {}",
                c_fast.system_cost_vehh,
                c_slow.system_cost_vehh
            );
        }
    }

    #[test]
    fn ranking_is_identical_across_worker_counts() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, Some(0.5));
        let cands = routes(&net, 10.0);
        let a = optimize(&st, &cands, 1).unwrap();
        let b = optimize(&st, &cands, 4).unwrap();
        assert_eq!(a.baseline_tstt_vehh.to_bits(), b.baseline_tstt_vehh.to_bits());
        assert_eq!(a.ranked.len(), b.ranked.len());
        for (x, y) in a.ranked.iter().zip(&b.ranked) {
            assert_eq!(x.candidate, y.candidate);
            assert_eq!(x.tstt_vehh.to_bits(), y.tstt_vehh.to_bits());
            assert_eq!(x.system_cost_vehh.to_bits(), y.system_cost_vehh.to_bits());
        }
    }

    #[test]
    fn baseline_rerun_is_bit_identical() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, Some(0.25));
        let a = st.run_baseline().unwrap();
        let b = st.run_baseline().unwrap();
        assert_eq!(a.tstt_vehh.to_bits(), b.tstt_vehh.to_bits());
    }

    #[test]
    fn sweep_covers_the_cross_product_with_per_point_baselines() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, Some(0.5));
        let cands = routes(&net, 10.0);
        let spec = SensitivitySpec {
            demand_multipliers: vec![1.0, 1.3],
            atma_speeds_mph: vec![10.0, 20.0],
        };
        let rows = sensitivity_sweep(&st, &spec, &cands, 1).unwrap();
        // Per sweep point: one baseline row + two candidate rows.
        assert_eq!(rows.len(), 4 * 3);
        let base_at = |param: &str, v: f64| {
            rows.iter()
                .find(|r| r.sweep_param == param && r.value == v && r.rank == 0)
                .unwrap()
                .tstt_vehh
        };
        assert!(base_at("demand_multiplier", 1.3) > base_at("demand_multiplier", 1.0));
        // Relative costs are computed against the same point's baseline.
        for r in rows.iter().filter(|r| r.rank > 0) {
            let expect = 100.0 * r.system_cost_vehh / r.baseline_tstt_vehh;
            assert_eq!(r.system_cost_pct.to_bits(), expect.to_bits());
        }
        // Speed sweep reuses the unscaled demand, so its baselines agree.
        assert_eq!(
            base_at("atma_speed_mph", 10.0).to_bits(),
            base_at("atma_speed_mph", 20.0).to_bits()
        );
    }

    #[test]
    fn empty_spec_is_rejected() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, None);
        let err = sensitivity_sweep(&st, &SensitivitySpec::default(), &routes(&net, 10.0), 1)
            .unwrap_err();
        assert!(err.to_string().contains("nothing to sweep"));
    }

    #[test]
    fn lane_based_default_reduction_applies_when_theta_is_unset() {
        let net = two_path_net();
        let demands = demand();
        let st = study(&net, &demands, None);
        let route = &routes(&net, 10.0)[0];
        let profile = st.schedule_profile(route).unwrap();
        // 4 lanes on the fixture links, so the default drop is 1/4.
        let reduced = net.links[route.path.links[0]].capacity_vph * 0.75;
        let l = route.path.links[0];
        let seen = profile.link_profile(l);
        assert!(seen.iter().any(|&c| (c - reduced).abs() < 1e-9));
    }
}
