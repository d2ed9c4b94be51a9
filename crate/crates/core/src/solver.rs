//! Per-interval user-equilibrium assignment coupled by link queues.
//!
//! Each interval solves a static UE problem by path-based gradient projection
//! (Newton-sized shifts toward the per-OD shortest path), holding the queue
//! state inherited from the previous interval fixed. Converged flows then
//! advance the queues, coupling the intervals. A parallel "truth" queue state
//! always evolves under the real (reduction-aware) capacities so that models
//! which assign under distorted costs can still be scored against reality.

use anyhow::{bail, Context, Result};

use crate::benchmark::{bpr_derivative, bpr_travel_time, BprParams};
use crate::capacity::CapacityProfile;
use crate::network::{
    shortest_path_scratch, Network, OdPair, Path, SearchScratch, TimeGrid,
};
use crate::queue::{self, QueueState};

/// Flows at or below this are treated as zero and their paths retired.
pub const FLOW_EPS_VPH: f64 = 1e-6;
/// Newton denominators below this trigger the all-or-nothing fallback.
pub const DERIV_EPS: f64 = 1e-12;

/// Which interval's capacity commits the queue after convergence. Travel-time
/// evaluation inside the interval always uses the previous interval's rate;
/// this only affects the end-of-interval queue recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueueCommitCapacity {
    Prev,
    Curr,
}

impl std::str::FromStr for QueueCommitCapacity {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prev" => Ok(QueueCommitCapacity::Prev),
            "curr" => Ok(QueueCommitCapacity::Curr),
            other => bail!("expected 'prev' or 'curr', got '{other}'"),
        }
    }
}

/// The travel-time model the assignment inner loop believes in. The truth
/// side is always the reduction-aware point queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    /// Point-queue times from the real capacity profile (the proposed model).
    PointQueue,
    /// Point-queue times that ignore every capacity reduction (benchmark 1).
    PointQueueNoDrop,
    /// Static BPR times using the current interval's (reduced) capacity and
    /// no queue carry-over (benchmark 2).
    Bpr(BprParams),
}

#[derive(Debug, Clone, Copy)]
pub struct ConvergenceParams {
    /// Relative-gap target, e.g. 1e-4 for 0.01%.
    pub gap_tolerance: f64,
    /// Newton-shift rounds allowed per OD per interval.
    pub max_iterations: usize,
    /// Path retirement threshold (veh/hr).
    pub flow_epsilon_vph: f64,
    /// Assert conservation and nonnegativity after every round.
    pub check_invariants: bool,
}

impl Default for ConvergenceParams {
    fn default() -> Self {
        ConvergenceParams {
            gap_tolerance: 1e-4,
            max_iterations: 100,
            flow_epsilon_vph: FLOW_EPS_VPH,
            check_invariants: true,
        }
    }
}

impl ConvergenceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tolerance > 0.0) {
            bail!("gap tolerance must be positive, got {}", self.gap_tolerance);
        }
        if self.max_iterations < 1 {
            bail!("max iterations must be at least 1");
        }
        Ok(())
    }
}

/// Working path set of one OD pair: parallel path/flow arrays.
#[derive(Debug, Clone, Default)]
pub struct PathSet {
    pub paths: Vec<Path>,
    pub flows_vph: Vec<f64>,
}

impl PathSet {
    pub fn total_flow(&self) -> f64 {
        self.flows_vph.iter().sum()
    }

    fn find(&self, path: &Path) -> Option<usize> {
        self.paths.iter().position(|p| p == path)
    }
}

/// Eq. "x = sum of path flows over links": accumulates every OD's path flows
/// onto the links they traverse.
pub fn link_flows_from_paths(path_sets: &[PathSet], net: &Network) -> Vec<f64> {
    let mut x = vec![0.0; net.links.len()];
    for ps in path_sets {
        for (path, &h) in ps.paths.iter().zip(&ps.flows_vph) {
            for &l in &path.links {
                x[l] += h;
            }
        }
    }
    x
}

/// Newton-sized flow shift from a costlier path onto the basic (shortest)
/// path: `min(h, (c - c_basic) / derivative_sum)`, all of `h` when the
/// denominator vanishes (costs insensitive to flow), never negative.
pub fn newton_shift(
    cost_nonbasic_h: f64,
    cost_basic_h: f64,
    derivative_sum: f64,
    h_nonbasic_vph: f64,
) -> Result<f64> {
    if h_nonbasic_vph < 0.0 {
        bail!("negative path flow {h_nonbasic_vph}");
    }
    if derivative_sum < DERIV_EPS {
        return Ok(h_nonbasic_vph);
    }
    let gap = cost_nonbasic_h - cost_basic_h;
    if gap <= 0.0 {
        return Ok(0.0);
    }
    Ok(h_nonbasic_vph.min(gap / derivative_sum))
}

/// Excess-cost ratio of one OD: `(sum h c - d c*) / (d c*)`, zero for empty
/// demand. Tiny negative float residue is clamped to zero.
pub fn od_relative_gap(flows_vph: &[f64], costs_h: &[f64], demand_vph: f64, c_star_h: f64) -> f64 {
    if demand_vph <= 0.0 || c_star_h <= 0.0 {
        return 0.0;
    }
    let total: f64 = flows_vph.iter().zip(costs_h).map(|(h, c)| h * c).sum();
    ((total - demand_vph * c_star_h) / (demand_vph * c_star_h)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct GapResult {
    pub per_od: Vec<f64>,
    /// Demand-weighted mean of the per-OD gaps.
    pub aggregate: f64,
}

/// Relative gap of the given path flows under the given link times. The
/// shortest-path cost is recomputed fresh per OD, so this measures against
/// the true minimum, not just the working set.
pub fn relative_gap(
    net: &Network,
    path_sets: &[PathSet],
    ods: &[OdPair],
    times_h: &[f64],
) -> Result<GapResult> {
    let mut scratch = SearchScratch::new(net);
    let mut per_od = Vec::with_capacity(ods.len());
    let mut weighted = 0.0;
    let mut total_d = 0.0;
    for (od, ps) in ods.iter().zip(path_sets) {
        let gap = if od.demand_vph <= 0.0 {
            0.0
        } else {
            let (_, c_star) =
                shortest_path_scratch(net, times_h, od.origin, od.destination, &mut scratch)
                    .with_context(|| format!("OD {}->{}", od.origin_id, od.destination_id))?;
            let costs: Vec<f64> = ps.paths.iter().map(|p| p.cost(times_h)).collect();
            od_relative_gap(&ps.flows_vph, &costs, od.demand_vph, c_star)
        };
        weighted += gap * od.demand_vph;
        total_d += od.demand_vph;
        per_od.push(gap);
    }
    let aggregate = if total_d > 0.0 { weighted / total_d } else { 0.0 };
    Ok(GapResult { per_od, aggregate })
}

/// Everything recorded about one converged interval.
#[derive(Debug, Clone)]
pub struct IntervalRecord {
    /// 1-based interval index.
    pub m: usize,
    pub link_flows_vph: Vec<f64>,
    /// Travel times the assignment model converged under.
    pub travel_times_h: Vec<f64>,
    /// Queueing delays under the assignment model, `tt - fftt`.
    pub delays_h: Vec<f64>,
    /// Queue state committed at interval end under the assignment model.
    pub queues_veh: Vec<f64>,
    pub od_gaps: Vec<f64>,
    pub od_iterations: Vec<usize>,
    pub aggregate_gap: f64,
    pub converged: bool,
    /// Reduction-aware point-queue times at the converged flows.
    pub truth_times_h: Vec<f64>,
    pub truth_queues_veh: Vec<f64>,
    pub od_corrected_gaps: Vec<f64>,
    pub corrected_gap: f64,
}

#[derive(Debug, Clone)]
pub struct FinalPathFlow {
    pub origin_id: i64,
    pub destination_id: i64,
    pub link_ids: Vec<i64>,
    pub flow_vph: f64,
}

#[derive(Debug, Clone)]
pub struct AssignmentResult {
    pub intervals: Vec<IntervalRecord>,
    /// Total system travel time under the assignment model's own times.
    pub tstt_vehh: f64,
    /// Total system travel time under the truth times.
    pub truth_tstt_vehh: f64,
    pub final_path_flows: Vec<FinalPathFlow>,
}

impl AssignmentResult {
    pub fn intervals_converged(&self) -> usize {
        self.intervals.iter().filter(|r| r.converged).count()
    }

    pub fn max_corrected_gap(&self) -> f64 {
        self.intervals.iter().map(|r| r.corrected_gap).fold(0.0, f64::max)
    }

    pub fn mean_corrected_gap(&self) -> f64 {
        if self.intervals.is_empty() {
            return 0.0;
        }
        self.intervals.iter().map(|r| r.corrected_gap).sum::<f64>() / self.intervals.len() as f64
    }

    /// Worst inner-iteration count over intervals and ODs.
    pub fn max_iterations(&self) -> usize {
        self.intervals
            .iter()
            .flat_map(|r| r.od_iterations.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Total system travel time: `sum over m, links of x * dt * tt`, in veh-hours.
pub fn tstt(intervals: &[IntervalRecord], dt_h: f64) -> f64 {
    intervals
        .iter()
        .map(|r| -> f64 {
            r.link_flows_vph
                .iter()
                .zip(&r.travel_times_h)
                .map(|(x, tt)| x * dt_h * tt)
                .sum()
        })
        .sum()
}

fn truth_tstt(intervals: &[IntervalRecord], dt_h: f64) -> f64 {
    intervals
        .iter()
        .map(|r| -> f64 {
            r.link_flows_vph
                .iter()
                .zip(&r.truth_times_h)
                .map(|(x, tt)| x * dt_h * tt)
                .sum()
        })
        .sum()
}

pub struct Assignment<'a> {
    net: &'a Network,
    ods: &'a [OdPair],
    /// Real (reduction-aware) capacity profile; the truth side always uses it.
    profile: &'a CapacityProfile,
    grid: TimeGrid,
    params: ConvergenceParams,
    model: CostModel,
    commit: QueueCommitCapacity,
    path_sets: Vec<PathSet>,
    /// Queue state under the assignment model's beliefs.
    q_assign: QueueState,
    /// Queue state under real capacities at the same flows.
    q_truth: QueueState,
    link_flows: Vec<f64>,
    times: Vec<f64>,
    scratch: SearchScratch,
}

impl<'a> Assignment<'a> {
    pub fn new(
        net: &'a Network,
        ods: &'a [OdPair],
        profile: &'a CapacityProfile,
        grid: TimeGrid,
        params: ConvergenceParams,
        model: CostModel,
        commit: QueueCommitCapacity,
    ) -> Result<Self> {
        params.validate()?;
        if profile.intervals() != grid.intervals {
            bail!(
                "capacity profile has {} intervals, grid has {}",
                profile.intervals(),
                grid.intervals
            );
        }
        if profile.n_links() != net.links.len() {
            bail!("capacity profile covers {} links, network has {}", profile.n_links(), net.links.len());
        }
        let n = net.links.len();
        Ok(Assignment {
            net,
            ods,
            profile,
            grid,
            params,
            model,
            commit,
            path_sets: vec![PathSet::default(); ods.len()],
            q_assign: QueueState::zeros(n),
            q_truth: QueueState::zeros(n),
            link_flows: vec![0.0; n],
            times: vec![0.0; n],
            scratch: SearchScratch::new(net),
        })
    }

    /// Capacity the assignment model evaluates travel times with during
    /// interval `m` (the previous interval's rate for queue models).
    fn eval_capacity(&self, link: usize, m: usize) -> f64 {
        match self.model {
            CostModel::PointQueue => self.profile.discharge_rate(link, m - 1),
            CostModel::PointQueueNoDrop => self.profile.base()[link],
            CostModel::Bpr(_) => self.profile.discharge_rate(link, m),
        }
    }

    fn link_time(&self, link: usize, x: f64, m: usize) -> f64 {
        let fftt = self.net.links[link].fftt_h;
        match self.model {
            CostModel::PointQueue | CostModel::PointQueueNoDrop => queue::qbtd_travel_time_h(
                fftt,
                self.q_assign.q_veh[link],
                x,
                self.eval_capacity(link, m),
                self.grid.dt_h,
            ),
            CostModel::Bpr(p) => bpr_travel_time(x, self.eval_capacity(link, m), fftt, p),
        }
    }

    fn link_deriv(&self, link: usize, x: f64, m: usize) -> f64 {
        match self.model {
            CostModel::PointQueue | CostModel::PointQueueNoDrop => queue::travel_time_derivative(
                self.q_assign.q_veh[link],
                x,
                self.eval_capacity(link, m),
                self.grid.dt_h,
            ),
            CostModel::Bpr(p) => {
                bpr_derivative(x, self.eval_capacity(link, m), self.net.links[link].fftt_h, p)
            }
        }
    }

    fn refresh_all_times(&mut self, m: usize) {
        for l in 0..self.net.links.len() {
            self.times[l] = self.link_time(l, self.link_flows[l], m);
        }
    }

    /// Applies flow deltas to the named links and refreshes their times.
    fn apply_deltas(&mut self, deltas: &[(usize, f64)], m: usize) {
        for &(l, d) in deltas {
            self.link_flows[l] += d;
            if self.link_flows[l] < 0.0 {
                debug_assert!(self.link_flows[l] > -1e-6, "flow went negative: {}", self.link_flows[l]);
                self.link_flows[l] = 0.0;
            }
            self.times[l] = self.link_time(l, self.link_flows[l], m);
        }
    }

    /// Path cost under hypothetical link-flow deltas without committing them.
    fn trial_path_cost(&self, path: &Path, deltas: &std::collections::HashMap<usize, f64>, m: usize) -> f64 {
        path.links
            .iter()
            .map(|&l| match deltas.get(&l) {
                Some(d) => self.link_time(l, (self.link_flows[l] + d).max(0.0), m),
                None => self.times[l],
            })
            .sum()
    }

    /// One OD's inner equilibration loop for interval `m`. Returns
    /// (iterations, final gap). `self.times` is kept consistent with
    /// `self.link_flows` throughout.
    fn equilibrate_od(&mut self, od_idx: usize, m: usize) -> Result<(usize, f64)> {
        let od = &self.ods[od_idx];
        let demand = od.demand_vph;
        if demand <= 0.0 {
            return Ok((0, 0.0));
        }
        let od_label = format!("OD {}->{}", od.origin_id, od.destination_id);

        let mut iterations = 0usize;
        loop {
            let (sp, c_star) = shortest_path_scratch(
                self.net,
                &self.times,
                od.origin,
                od.destination,
                &mut self.scratch,
            )
            .with_context(|| od_label.clone())?;

            let ps = &self.path_sets[od_idx];
            // An empty working set carries no flow yet; it must never read as
            // converged, whatever the gap formula says about zero flow.
            let gap = if ps.paths.is_empty() {
                f64::INFINITY
            } else {
                let costs: Vec<f64> = ps.paths.iter().map(|p| p.cost(&self.times)).collect();
                od_relative_gap(&ps.flows_vph, &costs, demand, c_star)
            };
            if gap <= self.params.gap_tolerance || iterations >= self.params.max_iterations {
                return Ok((iterations, gap));
            }
            iterations += 1;

            // Ensure the shortest path is in the working set and find it.
            let basic = match self.path_sets[od_idx].find(&sp) {
                Some(i) => i,
                None => {
                    self.path_sets[od_idx].paths.push(sp);
                    self.path_sets[od_idx].flows_vph.push(0.0);
                    self.path_sets[od_idx].paths.len() - 1
                }
            };

            // First contact: everything goes onto the shortest path.
            if self.path_sets[od_idx].paths.len() == 1 {
                let deltas: Vec<(usize, f64)> = self.path_sets[od_idx].paths[0]
                    .links
                    .iter()
                    .map(|&l| (l, demand - self.path_sets[od_idx].flows_vph[0]))
                    .collect();
                self.path_sets[od_idx].flows_vph[0] = demand;
                self.apply_deltas(&deltas, m);
                continue;
            }

            let shifted = self.shift_toward_basic(od_idx, basic, m)?;
            self.drop_tiny_paths(od_idx, demand, m);
            if self.params.check_invariants {
                let total = self.path_sets[od_idx].total_flow();
                debug_assert!(
                    (total - demand).abs() <= 1e-6,
                    "{od_label}: path flows sum to {total}, demand {demand}"
                );
                debug_assert!(self.path_sets[od_idx].flows_vph.iter().all(|&h| h >= 0.0));
            }
            if !shifted {
                // No progress is possible (all proposed moves rejected); the
                // recorded gap is whatever the next loop head measures.
                let ps = &self.path_sets[od_idx];
                let costs: Vec<f64> = ps.paths.iter().map(|p| p.cost(&self.times)).collect();
                let (_, c_star) = shortest_path_scratch(
                    self.net,
                    &self.times,
                    od.origin,
                    od.destination,
                    &mut self.scratch,
                )
                .with_context(|| od_label.clone())?;
                let gap = od_relative_gap(&ps.flows_vph, &costs, demand, c_star);
                return Ok((iterations, gap));
            }
        }
    }

    /// Simultaneous Newton shifts from every nonbasic path onto the basic
    /// one, with a halving backtrack whenever the proposed move would raise
    /// this OD's excess cost (the raw iteration can cycle across the queue
    /// kinks; a non-increasing excess cost restores convergence). Returns
    /// false when every move was backed off to nothing.
    fn shift_toward_basic(&mut self, od_idx: usize, basic: usize, m: usize) -> Result<bool> {
        let n_paths = self.path_sets[od_idx].paths.len();
        let costs: Vec<f64> = self.path_sets[od_idx]
            .paths
            .iter()
            .map(|p| p.cost(&self.times))
            .collect();
        let c_basic = costs[basic];

        let mut basic_links = vec![false; self.net.links.len()];
        for &l in &self.path_sets[od_idx].paths[basic].links {
            basic_links[l] = true;
        }

        let mut raw_shift = vec![0.0; n_paths];
        for i in 0..n_paths {
            if i == basic {
                continue;
            }
            let h = self.path_sets[od_idx].flows_vph[i];
            if h <= 0.0 {
                continue;
            }
            // Links where the two paths differ are the ones whose times move.
            let mut deriv_sum = 0.0;
            for &l in &self.path_sets[od_idx].paths[i].links {
                if !basic_links[l] {
                    deriv_sum += self.link_deriv(l, self.link_flows[l], m);
                }
            }
            let nonbasic_links: std::collections::HashSet<usize> =
                self.path_sets[od_idx].paths[i].links.iter().copied().collect();
            for &l in &self.path_sets[od_idx].paths[basic].links {
                if !nonbasic_links.contains(&l) {
                    deriv_sum += self.link_deriv(l, self.link_flows[l], m);
                }
            }
            raw_shift[i] = newton_shift(costs[i], c_basic, deriv_sum, h)?;
        }
        if raw_shift.iter().all(|&s| s <= 0.0) {
            return Ok(false);
        }

        // Excess cost before the move, measured against the working set's
        // own minimum (the basic path, by construction).
        let flows = &self.path_sets[od_idx].flows_vph;
        let demand: f64 = self.ods[od_idx].demand_vph;
        let excess_before: f64 = flows
            .iter()
            .zip(&costs)
            .map(|(h, c)| h * (c - c_basic))
            .sum();

        let mut scale = 1.0;
        for _attempt in 0..40 {
            // Trial link deltas for this scaling of the shift vector.
            let mut deltas: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
            let mut moved = 0.0;
            for i in 0..n_paths {
                let s = raw_shift[i] * scale;
                if s <= 0.0 {
                    continue;
                }
                moved += s;
                for &l in &self.path_sets[od_idx].paths[i].links {
                    *deltas.entry(l).or_insert(0.0) -= s;
                }
            }
            if moved <= self.params.flow_epsilon_vph {
                return Ok(false);
            }
            for &l in &self.path_sets[od_idx].paths[basic].links {
                *deltas.entry(l).or_insert(0.0) += moved;
            }
            deltas.retain(|_, d| d.abs() > 0.0);

            let trial_costs: Vec<f64> = self.path_sets[od_idx]
                .paths
                .iter()
                .map(|p| self.trial_path_cost(p, &deltas, m))
                .collect();
            let trial_min = trial_costs.iter().copied().fold(f64::INFINITY, f64::min);
            let mut excess_after = 0.0;
            for i in 0..n_paths {
                let h = if i == basic {
                    self.path_sets[od_idx].flows_vph[i] + moved
                } else {
                    self.path_sets[od_idx].flows_vph[i] - raw_shift[i] * scale
                };
                excess_after += h.max(0.0) * (trial_costs[i] - trial_min);
            }

            let tol = 1e-12 * demand.max(1.0);
            if excess_after <= excess_before + tol {
                // Accept: commit path flows and link flows/times.
                let mut delta_list: Vec<(usize, f64)> = deltas.into_iter().collect();
                delta_list.sort_unstable_by_key(|&(l, _)| l);
                for i in 0..n_paths {
                    let s = raw_shift[i] * scale;
                    if s > 0.0 {
                        self.path_sets[od_idx].flows_vph[i] =
                            (self.path_sets[od_idx].flows_vph[i] - s).max(0.0);
                    }
                }
                // Exact closure: the basic flow absorbs the float residue so
                // conservation holds to machine precision.
                let others: f64 = self.path_sets[od_idx]
                    .flows_vph
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != basic)
                    .map(|(_, &h)| h)
                    .sum();
                self.path_sets[od_idx].flows_vph[basic] = (demand - others).max(0.0);
                self.apply_deltas(&delta_list, m);
                return Ok(true);
            }
            scale *= 0.5;
        }
        Ok(false)
    }

    /// Retires paths at or below the flow threshold; their residue lands on
    /// the largest-flow survivor so demand conservation stays exact.
    fn drop_tiny_paths(&mut self, od_idx: usize, demand: f64, m: usize) {
        let ps = &mut self.path_sets[od_idx];
        if ps.paths.len() <= 1 {
            return;
        }
        let eps = self.params.flow_epsilon_vph;
        let mut keep_paths = Vec::with_capacity(ps.paths.len());
        let mut keep_flows = Vec::with_capacity(ps.paths.len());
        for (p, &h) in ps.paths.iter().zip(&ps.flows_vph) {
            if h > eps {
                keep_paths.push(p.clone());
                keep_flows.push(h);
            }
        }
        if keep_paths.is_empty() {
            // Degenerate: keep the largest-flow path.
            let best = ps
                .flows_vph
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap();
            keep_paths.push(ps.paths[best].clone());
            keep_flows.push(ps.flows_vph[best]);
        }
        if keep_paths.len() == ps.paths.len() {
            return;
        }
        // Dropped flow (and float residue) goes to the biggest survivor.
        let kept: f64 = keep_flows.iter().sum();
        let top = keep_flows
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        keep_flows[top] += demand - kept;
        // The dropped paths' link flows move to the survivor's links.
        let mut deltas: std::collections::HashMap<usize, f64> = std::collections::HashMap::new();
        for (p, &h) in ps.paths.iter().zip(&ps.flows_vph) {
            if h <= eps {
                for &l in &p.links {
                    *deltas.entry(l).or_insert(0.0) -= h;
                }
            }
        }
        for &l in &keep_paths[top].links.clone() {
            *deltas.entry(l).or_insert(0.0) += demand - kept;
        }
        ps.paths = keep_paths;
        ps.flows_vph = keep_flows;
        let mut delta_list: Vec<(usize, f64)> = deltas.into_iter().collect();
        delta_list.sort_unstable_by_key(|&(l, _)| l);
        self.apply_deltas(&delta_list, m);
    }

    /// Aligns every OD's warm-started path flows with its demand by
    /// proportional rescale, with an exact closure on the largest flow.
    /// Callers rebuild `link_flows` afterwards.
    fn rescale_to_demand(&mut self) {
        for i in 0..self.ods.len() {
            let d = self.ods[i].demand_vph;
            let ps = &mut self.path_sets[i];
            let total = ps.total_flow();
            if d <= 0.0 {
                ps.flows_vph.iter_mut().for_each(|h| *h = 0.0);
                continue;
            }
            if total <= self.params.flow_epsilon_vph {
                // Nothing meaningful to rescale; start this OD afresh.
                ps.paths.clear();
                ps.flows_vph.clear();
                continue;
            }
            let factor = d / total;
            if factor != 1.0 {
                for h in &mut ps.flows_vph {
                    *h *= factor;
                }
            }
            let top = ps
                .flows_vph
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(j, _)| j)
                .unwrap();
            let others: f64 = ps
                .flows_vph
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != top)
                .map(|(_, &h)| h)
                .sum();
            ps.flows_vph[top] = (d - others).max(0.0);
        }
    }

    /// Runs the full horizon and returns the per-interval records.
    pub fn run(mut self) -> Result<AssignmentResult> {
        let intervals = self.run_intervals()?;
        let dt = self.grid.dt_h;
        let final_path_flows = self
            .ods
            .iter()
            .zip(&self.path_sets)
            .flat_map(|(od, ps)| {
                ps.paths.iter().zip(&ps.flows_vph).map(move |(p, &h)| (od, p, h))
            })
            .map(|(od, p, h)| FinalPathFlow {
                origin_id: od.origin_id,
                destination_id: od.destination_id,
                link_ids: p.link_ids(self.net),
                flow_vph: h,
            })
            .collect();
        Ok(AssignmentResult {
            tstt_vehh: tstt(&intervals, dt),
            truth_tstt_vehh: truth_tstt(&intervals, dt),
            intervals,
            final_path_flows,
        })
    }

    fn run_intervals(&mut self) -> Result<Vec<IntervalRecord>> {
        let mut records = Vec::with_capacity(self.grid.intervals);
        for m in 1..=self.grid.intervals {
            self.rescale_to_demand();
            // Re-anchor link flows to the path flows exactly, discarding any
            // float dust accumulated by incremental updates.
            self.link_flows = link_flows_from_paths(&self.path_sets, self.net);
            self.refresh_all_times(m);

            let mut od_iterations = vec![0usize; self.ods.len()];
            for i in 0..self.ods.len() {
                let (iters, _) = self.equilibrate_od(i, m)?;
                od_iterations[i] = iters;
            }

            // Final measurement under the post-assignment times.
            let gaps = relative_gap(self.net, &self.path_sets, self.ods, &self.times)?;
            let converged = gaps.aggregate <= self.params.gap_tolerance;

            // Truth side: reduction-aware times at the converged flows.
            let mut truth_times = vec![0.0; self.net.links.len()];
            for l in 0..self.net.links.len() {
                truth_times[l] = queue::qbtd_travel_time_h(
                    self.net.links[l].fftt_h,
                    self.q_truth.q_veh[l],
                    self.link_flows[l],
                    self.profile.discharge_rate(l, m - 1),
                    self.grid.dt_h,
                );
            }
            let corrected = relative_gap(self.net, &self.path_sets, self.ods, &truth_times)?;

            // Commit queues for the next interval.
            let commit_m = match self.commit {
                QueueCommitCapacity::Prev => m - 1,
                QueueCommitCapacity::Curr => m,
            };
            let assign_caps: Vec<f64> = match self.model {
                CostModel::PointQueue => self.profile.caps_at(commit_m).to_vec(),
                CostModel::PointQueueNoDrop => self.profile.base().to_vec(),
                CostModel::Bpr(_) => Vec::new(),
            };
            if !assign_caps.is_empty() {
                self.q_assign.advance(&self.link_flows, &assign_caps, self.grid.dt_h);
            }
            let truth_caps = self.profile.caps_at(commit_m).to_vec();
            self.q_truth.advance(&self.link_flows, &truth_caps, self.grid.dt_h);

            if self.params.check_invariants {
                debug_assert!(self.q_truth.min_queue_veh() >= 0.0);
                debug_assert!(self.q_truth.max_identity_residual_veh() < 1e-6);
                debug_assert!(self.q_assign.max_identity_residual_veh() < 1e-6);
            }

            let delays: Vec<f64> = self
                .times
                .iter()
                .zip(&self.net.links)
                .map(|(tt, link)| (tt - link.fftt_h).max(0.0))
                .collect();
            records.push(IntervalRecord {
                m,
                link_flows_vph: self.link_flows.clone(),
                travel_times_h: self.times.clone(),
                delays_h: delays,
                queues_veh: self.q_assign.q_veh.clone(),
                od_gaps: gaps.per_od,
                od_iterations,
                aggregate_gap: gaps.aggregate,
                converged,
                truth_times_h: truth_times,
                truth_queues_veh: self.q_truth.q_veh.clone(),
                od_corrected_gaps: corrected.per_od,
                corrected_gap: corrected.aggregate,
            });
        }
        Ok(records)
    }
}

/// Convenience wrapper building and running an assignment in one call.
#[allow(clippy::too_many_arguments)]
pub fn run_assignment(
    net: &Network,
    ods: &[OdPair],
    profile: &CapacityProfile,
    grid: TimeGrid,
    params: ConvergenceParams,
    model: CostModel,
    commit: QueueCommitCapacity,
) -> Result<AssignmentResult> {
    Assignment::new(net, ods, profile, grid, params, model, commit)?.run()
}
