//! Time-varying link discharge rates induced by a slow maintenance convoy.
//!
//! A convoy crawling a route at constant speed occupies each route link for a
//! contiguous window; while present it reduces the link's discharge rate to
//! `base * (1 - theta)`. Windows are compiled onto the assignment time grid
//! by interval midpoint so boundary alignment never matters.

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use crate::network::{Network, Path, TimeGrid};

/// Discharge rates never drop below this; a fully closed link is outside the
/// model (delay formulas divide by the rate).
pub const MIN_CAPACITY_VPH: f64 = 1.0;

pub fn mps_to_mph(v_mps: f64) -> f64 {
    v_mps * 3.6 / 1.609344
}

/// A maintenance convoy's route, start time, and crawl speed.
#[derive(Debug, Clone)]
pub struct AtmaRoute {
    pub path: Path,
    pub start_h: f64,
    pub speed_mph: f64,
}

impl AtmaRoute {
    /// Validates the path is connected and the crawl speed is positive and no
    /// faster than any route link's free speed.
    pub fn new(net: &Network, path: Path, start_h: f64, speed_mph: f64) -> Result<Self> {
        if !(speed_mph > 0.0) {
            bail!("maintenance speed must be positive, got {speed_mph} mph");
        }
        path.validate(net)?;
        if path.is_empty() {
            bail!("maintenance route must contain at least one link");
        }
        for &l in &path.links {
            let link = &net.links[l];
            if speed_mph > link.free_speed_mph {
                bail!(
                    "maintenance speed {} mph exceeds free speed {} mph on link {}",
                    speed_mph,
                    link.free_speed_mph,
                    link.id
                );
            }
        }
        Ok(AtmaRoute { path, start_h, speed_mph })
    }
}

/// One reduction window on one link. `theta = None` defers to the compile-time
/// default fraction.
#[derive(Debug, Clone)]
pub struct CapacityReductionEvent {
    pub link: usize,
    pub t_s_h: f64,
    pub t_e_h: f64,
    pub theta: Option<f64>,
}

/// Walks the route at the crawl speed: link k is occupied from
/// `start + (length of links before k)/v` until the convoy exits it. Windows
/// are contiguous by construction and sum to route length / speed.
pub fn build_atma_schedule(net: &Network, route: &AtmaRoute) -> Vec<CapacityReductionEvent> {
    let mut events = Vec::with_capacity(route.path.links.len());
    let mut cum_mi = 0.0;
    for &l in &route.path.links {
        let t_s = route.start_h + cum_mi / route.speed_mph;
        cum_mi += net.links[l].length_mi;
        let t_e = route.start_h + cum_mi / route.speed_mph;
        events.push(CapacityReductionEvent { link: l, t_s_h: t_s, t_e_h: t_e, theta: None });
    }
    events
}

/// Per-link, per-interval discharge rates. Interval index 0 is the
/// initialization convention and always returns the base rate.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityProfile {
    base_vph: Vec<f64>,
    /// `per_interval[m-1][link]` for m in 1..=M.
    per_interval: Vec<Vec<f64>>,
}

impl CapacityProfile {
    pub fn intervals(&self) -> usize {
        self.per_interval.len()
    }

    pub fn n_links(&self) -> usize {
        self.base_vph.len()
    }

    /// Discharge rate of `link` during interval `m` (1-based); `m = 0` is the
    /// pre-horizon initialization and returns the undisturbed base rate.
    pub fn discharge_rate(&self, link: usize, m: usize) -> f64 {
        if m == 0 {
            self.base_vph[link]
        } else {
            self.per_interval[m - 1][link]
        }
    }

    /// All links' rates for interval `m` (same indexing as `discharge_rate`).
    pub fn caps_at(&self, m: usize) -> &[f64] {
        if m == 0 {
            &self.base_vph
        } else {
            &self.per_interval[m - 1]
        }
    }

    pub fn base(&self) -> &[f64] {
        &self.base_vph
    }

    /// One link's rate across intervals 1..=M, e.g. for exit-order checks.
    pub fn link_profile(&self, link: usize) -> Vec<f64> {
        self.per_interval.iter().map(|row| row[link]).collect()
    }

    /// True when every interval equals the base rate.
    pub fn is_flat(&self) -> bool {
        self.per_interval
            .iter()
            .all(|row| row == &self.base_vph)
    }
}

/// Base rates everywhere: no maintenance activity.
pub fn flat_profile(net: &Network, grid: &TimeGrid) -> CapacityProfile {
    let base = net.base_capacities();
    CapacityProfile { per_interval: vec![base.clone(); grid.intervals], base_vph: base }
}

/// Applies reduction events to the grid. An interval is affected by an event
/// iff its midpoint lies in `[t_s, t_e)`; overlapping events on one link keep
/// the largest reduction. Rates are floored at `MIN_CAPACITY_VPH`.
pub fn compile_profile(
    events: &[CapacityReductionEvent],
    net: &Network,
    grid: &TimeGrid,
    theta_default: f64,
) -> Result<CapacityProfile> {
    if !(0.0..1.0).contains(&theta_default) {
        bail!("default reduction fraction must be in [0, 1), got {theta_default}");
    }
    let mut profile = flat_profile(net, grid);
    for (i, ev) in events.iter().enumerate() {
        if ev.link >= net.links.len() {
            bail!("event {i}: link index {} out of range", ev.link);
        }
        let theta = ev.theta.unwrap_or(theta_default);
        if !(0.0..1.0).contains(&theta) {
            bail!(
                "event {i} on link {}: reduction fraction must be in [0, 1), got {theta}",
                net.links[ev.link].id
            );
        }
        if !(ev.t_s_h < ev.t_e_h) {
            bail!(
                "event {i} on link {}: window start {} h not before end {} h",
                net.links[ev.link].id,
                ev.t_s_h,
                ev.t_e_h
            );
        }
        let base = net.links[ev.link].capacity_vph;
        let reduced = (base * (1.0 - theta)).max(MIN_CAPACITY_VPH);
        for m in 1..=grid.intervals {
            let mid = grid.midpoint_h(m);
            if ev.t_s_h <= mid && mid < ev.t_e_h {
                let cell = &mut profile.per_interval[m - 1][ev.link];
                *cell = cell.min(reduced);
            }
        }
    }
    Ok(profile)
}

/// Default reduction fraction for a link blocked in one of its lanes,
/// capped just under full closure for single-lane links.
pub fn default_theta(lanes: u32) -> f64 {
    (1.0 / lanes.max(1) as f64).min(0.95)
}

#[derive(Debug, Deserialize)]
struct EventRow {
    link_id: i64,
    t_start_s: f64,
    t_end_s: f64,
    theta: Option<f64>,
}

/// Loads hand-authored reduction windows from
/// `link_id,t_start_s,t_end_s,theta` (times in seconds; empty theta defers to
/// the run default).
pub fn load_events(
    path: impl AsRef<std::path::Path>,
    net: &Network,
) -> Result<Vec<CapacityReductionEvent>> {
    let path = path.as_ref();
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut events = Vec::new();
    for (i, row) in rdr.deserialize::<EventRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        let link = net.link_idx(row.link_id).ok_or_else(|| {
            anyhow::anyhow!("{}: row {}: unknown link_id {}", path.display(), i + 2, row.link_id)
        })?;
        events.push(CapacityReductionEvent {
            link,
            t_s_h: row.t_start_s / 3600.0,
            t_e_h: row.t_end_s / 3600.0,
            theta: row.theta,
        });
    }
    Ok(events)
}
