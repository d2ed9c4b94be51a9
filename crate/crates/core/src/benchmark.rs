//! Distorted comparison models and the corrected relative gap.
//!
//! Two deliberately wrong assignment models bracket the proposed one:
//! the first ignores capacity reductions entirely (point-queue times at base
//! capacity), the second swaps the queue model for a static BPR curve that
//! does see the reduced capacity. Either way, a truth-side queue state is
//! advanced with the real capacities at whatever flows the distorted model
//! converged to, and the "corrected" gap re-scores those flows under the
//! truth travel times.

use anyhow::Result;

use crate::capacity::CapacityProfile;
use crate::network::{Network, OdPair, TimeGrid};
use crate::solver::{
    relative_gap, run_assignment, AssignmentResult, ConvergenceParams, CostModel, GapResult,
    PathSet, QueueCommitCapacity,
};

/// Polynomial volume-delay coefficients, `tt = fftt (1 + alpha (x/c)^beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BprParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BprParams {
    fn default() -> Self {
        BprParams { alpha: 0.15, beta: 4.0 }
    }
}

pub fn bpr_travel_time(x_vph: f64, capacity_vph: f64, fftt_h: f64, p: BprParams) -> f64 {
    fftt_h * (1.0 + p.alpha * (x_vph / capacity_vph).powf(p.beta))
}

/// d(tt)/dx of the BPR curve: `fftt alpha beta x^(beta-1) / c^beta`.
pub fn bpr_derivative(x_vph: f64, capacity_vph: f64, fftt_h: f64, p: BprParams) -> f64 {
    if x_vph <= 0.0 {
        return 0.0;
    }
    fftt_h * p.alpha * p.beta * (x_vph / capacity_vph).powf(p.beta - 1.0) / capacity_vph
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BenchmarkKind {
    /// Assign as if no reduction existed (queue model at base capacity).
    NoCapacityDrop,
    /// Assign with BPR times on the reduced capacity, no queue carry-over.
    BprWithDrop(BprParams),
}

impl BenchmarkKind {
    pub fn cost_model(self) -> CostModel {
        match self {
            BenchmarkKind::NoCapacityDrop => CostModel::PointQueueNoDrop,
            BenchmarkKind::BprWithDrop(p) => CostModel::Bpr(p),
        }
    }
}

/// Runs a distorted-model assignment over the horizon. The result's
/// `corrected_gap` fields already score every interval's converged flows
/// under the truth (reduction-aware) travel times; `tstt_vehh` is the TSTT
/// the distorted model believes, `truth_tstt_vehh` the one it causes.
pub fn run_benchmark(
    kind: BenchmarkKind,
    net: &Network,
    ods: &[OdPair],
    profile: &CapacityProfile,
    grid: TimeGrid,
    params: ConvergenceParams,
    commit: QueueCommitCapacity,
) -> Result<AssignmentResult> {
    run_assignment(net, ods, profile, grid, params, kind.cost_model(), commit)
}

/// The corrected relative gap as a standalone evaluation: the distorted
/// model's path flows, re-costed with truth travel times.
pub fn corrected_relative_gap(
    net: &Network,
    distorted_path_sets: &[PathSet],
    ods: &[OdPair],
    truth_times_h: &[f64],
) -> Result<GapResult> {
    relative_gap(net, distorted_path_sets, ods, truth_times_h)
}
