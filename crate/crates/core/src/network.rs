//! Network model and deterministic path search.
//!
//! Loads GMNS-style `node.csv` / `link.csv` / `demand.csv` files. Internally
//! nodes and links are dense indices in file order; external ids are i64.
//! Lengths are miles, speeds mph, flows veh/hr, times hours.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone)]
pub struct Node {
    pub id: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: i64,
    /// Dense index of the tail node.
    pub from: usize,
    /// Dense index of the head node.
    pub to: usize,
    pub length_mi: f64,
    pub free_speed_mph: f64,
    pub lanes: u32,
    pub capacity_vph: f64,
    /// Free-flow traversal time in hours, `length / free_speed`.
    pub fftt_h: f64,
    /// Present in some link files; stored but not used by the point-queue model.
    pub backward_wave_mph: Option<f64>,
}

/// An origin-destination demand pair. Zones are nodes (no connectors).
#[derive(Debug, Clone)]
pub struct OdPair {
    pub origin: usize,
    pub destination: usize,
    pub origin_id: i64,
    pub destination_id: i64,
    pub demand_vph: f64,
}

/// An ordered, connected sequence of link indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    pub links: Vec<usize>,
}

impl Path {
    pub fn new(links: Vec<usize>) -> Self {
        Path { links }
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn cost(&self, times_h: &[f64]) -> f64 {
        self.links.iter().map(|&l| times_h[l]).sum()
    }

    pub fn link_ids(&self, net: &Network) -> Vec<i64> {
        self.links.iter().map(|&l| net.links[l].id).collect()
    }

    /// Node id sequence, length `links + 1`; empty path yields nothing.
    pub fn node_ids(&self, net: &Network) -> Vec<i64> {
        let mut out = Vec::with_capacity(self.links.len() + 1);
        for (i, &l) in self.links.iter().enumerate() {
            if i == 0 {
                out.push(net.nodes[net.links[l].from].id);
            }
            out.push(net.nodes[net.links[l].to].id);
        }
        out
    }

    /// Checks consecutive links share a node; empty paths are valid.
    pub fn validate(&self, net: &Network) -> Result<()> {
        for w in self.links.windows(2) {
            let (a, b) = (&net.links[w[0]], &net.links[w[1]]);
            if a.to != b.from {
                bail!(
                    "links {} and {} are not consecutive (node {} != {})",
                    a.id,
                    b.id,
                    net.nodes[a.to].id,
                    net.nodes[b.from].id
                );
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    node_index: HashMap<i64, usize>,
    link_index: HashMap<i64, usize>,
    /// Outgoing link indices per node, sorted by link id for deterministic scans.
    out_links: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(nodes: Vec<Node>, mut links: Vec<Link>) -> Result<Self> {
        if links.is_empty() {
            bail!("no links");
        }
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.id, i).is_some() {
                bail!("duplicate node id {}", n.id);
            }
        }
        let mut link_index = HashMap::with_capacity(links.len());
        for (i, l) in links.iter_mut().enumerate() {
            if link_index.insert(l.id, i).is_some() {
                bail!("duplicate link id {}", l.id);
            }
            if !(l.length_mi > 0.0) {
                bail!("link {}: length must be positive, got {}", l.id, l.length_mi);
            }
            if !(l.free_speed_mph > 0.0) {
                bail!("link {}: free_speed must be positive, got {}", l.id, l.free_speed_mph);
            }
            if !(l.capacity_vph > 0.0) {
                bail!("link {}: capacity must be positive, got {}", l.id, l.capacity_vph);
            }
            if l.lanes == 0 {
                bail!("link {}: lanes must be a positive integer", l.id);
            }
            l.fftt_h = l.length_mi / l.free_speed_mph;
        }
        let mut out_links = vec![Vec::new(); nodes.len()];
        for (i, l) in links.iter().enumerate() {
            out_links[l.from].push(i);
        }
        for outs in &mut out_links {
            outs.sort_by_key(|&i| links[i].id);
        }
        Ok(Network { nodes, links, node_index, link_index, out_links })
    }

    pub fn node_idx(&self, id: i64) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn link_idx(&self, id: i64) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    /// Link index from tail node id to head node id, if such a link exists.
    /// When parallel links exist the smallest link id wins.
    pub fn link_between(&self, from_id: i64, to_id: i64) -> Option<usize> {
        let from = self.node_idx(from_id)?;
        let to = self.node_idx(to_id)?;
        self.out_links[from]
            .iter()
            .copied()
            .find(|&l| self.links[l].to == to)
    }

    pub fn free_flow_times(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.fftt_h).collect()
    }

    pub fn base_capacities(&self) -> Vec<f64> {
        self.links.iter().map(|l| l.capacity_vph).collect()
    }
}

#[derive(Debug, Deserialize)]
struct NodeRow {
    node_id: i64,
    x_coord: f64,
    y_coord: f64,
}

#[derive(Debug, Deserialize)]
struct LinkRow {
    link_id: i64,
    from_node_id: i64,
    to_node_id: i64,
    length: f64,
    free_speed: f64,
    lanes: u32,
    capacity: f64,
    backward_wave_speed: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct DemandRow {
    o_zone_id: i64,
    d_zone_id: i64,
    volume: f64,
}

/// Loads `node.csv` and `link.csv` from a directory.
pub fn load_network(dir: impl AsRef<std::path::Path>) -> Result<Network> {
    let dir = dir.as_ref();
    let node_path = dir.join("node.csv");
    let link_path = dir.join("link.csv");

    let mut nodes = Vec::new();
    let mut rdr = csv::Reader::from_path(&node_path)
        .with_context(|| format!("opening {}", node_path.display()))?;
    for (i, row) in rdr.deserialize::<NodeRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", node_path.display(), i + 2))?;
        nodes.push(Node { id: row.node_id, x: row.x_coord, y: row.y_coord });
    }

    let mut links = Vec::new();
    let mut rdr = csv::Reader::from_path(&link_path)
        .with_context(|| format!("opening {}", link_path.display()))?;
    let mut pending: Vec<(usize, LinkRow)> = Vec::new();
    for (i, row) in rdr.deserialize::<LinkRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", link_path.display(), i + 2))?;
        pending.push((i + 2, row));
    }
    let node_ids: HashMap<i64, usize> =
        nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
    for (rowno, row) in pending {
        let from = *node_ids.get(&row.from_node_id).ok_or_else(|| {
            anyhow!("{}: row {}: unknown from_node_id {}", link_path.display(), rowno, row.from_node_id)
        })?;
        let to = *node_ids.get(&row.to_node_id).ok_or_else(|| {
            anyhow!("{}: row {}: unknown to_node_id {}", link_path.display(), rowno, row.to_node_id)
        })?;
        links.push(Link {
            id: row.link_id,
            from,
            to,
            length_mi: row.length,
            free_speed_mph: row.free_speed,
            lanes: row.lanes,
            capacity_vph: row.capacity,
            fftt_h: 0.0,
            backward_wave_mph: row.backward_wave_speed,
        });
    }
    Network::new(nodes, links).with_context(|| format!("validating {}", link_path.display()))
}

/// Loads a demand table. Duplicate (o, d) rows are summed; the result is
/// sorted by (origin id, destination id) so assignment order does not depend
/// on file row order.
pub fn load_demand(path: impl AsRef<std::path::Path>, net: &Network) -> Result<Vec<OdPair>> {
    let path = path.as_ref();
    let mut rdr =
        csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut agg: HashMap<(i64, i64), f64> = HashMap::new();
    for (i, row) in rdr.deserialize::<DemandRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 2))?;
        if row.volume < 0.0 {
            bail!("{}: row {}: negative volume {}", path.display(), i + 2, row.volume);
        }
        if net.node_idx(row.o_zone_id).is_none() {
            bail!("{}: row {}: unknown o_zone_id {}", path.display(), i + 2, row.o_zone_id);
        }
        if net.node_idx(row.d_zone_id).is_none() {
            bail!("{}: row {}: unknown d_zone_id {}", path.display(), i + 2, row.d_zone_id);
        }
        *agg.entry((row.o_zone_id, row.d_zone_id)).or_insert(0.0) += row.volume;
    }
    let mut keys: Vec<(i64, i64)> = agg.keys().copied().collect();
    keys.sort_unstable();
    Ok(keys
        .into_iter()
        .map(|(o, d)| OdPair {
            origin: net.node_idx(o).unwrap(),
            destination: net.node_idx(d).unwrap(),
            origin_id: o,
            destination_id: d,
            demand_vph: agg[&(o, d)],
        })
        .collect())
}

/// Free-flow traversal time of a path at a given speed (hours), e.g. for a
/// maintenance vehicle crawling the route. Empty path is 0.
pub fn path_free_flow_time(net: &Network, path: &Path, speed_mph: f64) -> Result<f64> {
    if !(speed_mph > 0.0) {
        bail!("speed must be positive, got {speed_mph}");
    }
    Ok(path.links.iter().map(|&l| net.links[l].length_mi / speed_mph).sum())
}

/// Discretization of the horizon into equal intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon_h: f64,
    pub dt_h: f64,
    pub intervals: usize,
}

impl TimeGrid {
    pub fn new(horizon_h: f64, dt_h: f64) -> Result<Self> {
        if !(dt_h > 0.0) {
            bail!("dt must be positive, got {dt_h}");
        }
        if !(horizon_h > 0.0) {
            bail!("horizon must be positive, got {horizon_h}");
        }
        let m = (horizon_h / dt_h).round();
        if m < 1.0 || (m * dt_h - horizon_h).abs() > 1e-9 * horizon_h.max(1.0) {
            bail!("dt ({dt_h} h) does not divide horizon ({horizon_h} h) into whole intervals");
        }
        Ok(TimeGrid { horizon_h, dt_h, intervals: m as usize })
    }

    pub fn from_seconds(horizon_s: f64, dt_s: f64) -> Result<Self> {
        Self::new(horizon_s / 3600.0, dt_s / 3600.0)
    }

    /// Midpoint of interval m (1-based) in hours.
    pub fn midpoint_h(&self, m: usize) -> f64 {
        (m as f64 - 0.5) * self.dt_h
    }
}

/// Wrapper giving f64 a total order for use in the heap.
#[derive(PartialEq)]
struct HeapEntry {
    cost: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed: BinaryHeap is a max-heap, we want smallest cost first.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub struct SearchScratch {
    dist: Vec<f64>,
    parent: Vec<usize>,
    /// usize::MAX marks "no parent".
    heap: BinaryHeap<HeapEntry>,
}

impl SearchScratch {
    pub fn new(net: &Network) -> Self {
        SearchScratch {
            dist: vec![f64::INFINITY; net.nodes.len()],
            parent: vec![usize::MAX; net.nodes.len()],
            heap: BinaryHeap::new(),
        }
    }
}

/// Link-id chain from the origin to `node`, via parent pointers.
fn chain_ids(net: &Network, parent: &[usize], mut node: usize) -> Vec<i64> {
    let mut rev = Vec::new();
    while parent[node] != usize::MAX {
        let l = parent[node];
        rev.push(net.links[l].id);
        node = net.links[l].from;
    }
    rev.reverse();
    rev
}

/// Compares the candidate chain (chain to `from` + link `l`) against the
/// incumbent chain to `to`, lexicographically by link id.
fn candidate_is_lex_smaller(net: &Network, parent: &[usize], l: usize, to: usize) -> bool {
    let link = &net.links[l];
    let mut cand = chain_ids(net, parent, link.from);
    cand.push(link.id);
    let inc = chain_ids(net, parent, to);
    cand < inc
}

/// Dijkstra with banned links/nodes. On exact cost ties the parent giving the
/// lexicographically smallest link-id chain wins; tie improvements re-push so
/// downstream chains are rebuilt. Sound because all link times are positive.
fn dijkstra_filtered(
    net: &Network,
    times_h: &[f64],
    origin: usize,
    destination: usize,
    banned_links: &HashSet<usize>,
    banned_nodes: &HashSet<usize>,
    scratch: &mut SearchScratch,
) -> Option<(Path, f64)> {
    debug_assert_eq!(times_h.len(), net.links.len());
    let dist = &mut scratch.dist;
    let parent = &mut scratch.parent;
    let heap = &mut scratch.heap;
    dist.fill(f64::INFINITY);
    parent.fill(usize::MAX);
    heap.clear();

    dist[origin] = 0.0;
    heap.push(HeapEntry { cost: 0.0, node: origin });
    while let Some(HeapEntry { cost, node }) = heap.pop() {
        if cost > dist[node] {
            continue;
        }
        // No early exit at the destination: equal-cost ties elsewhere may
        // still improve the lexicographic chain of a later relaxation.
        for &l in &net.out_links[node] {
            if banned_links.contains(&l) {
                continue;
            }
            let link = &net.links[l];
            if banned_nodes.contains(&link.to) {
                continue;
            }
            let next = cost + times_h[l];
            match next.total_cmp(&dist[link.to]) {
                Ordering::Less => {
                    dist[link.to] = next;
                    parent[link.to] = l;
                    heap.push(HeapEntry { cost: next, node: link.to });
                }
                Ordering::Equal => {
                    if candidate_is_lex_smaller(net, parent, l, link.to) {
                        parent[link.to] = l;
                        heap.push(HeapEntry { cost: next, node: link.to });
                    }
                }
                Ordering::Greater => {}
            }
        }
    }
    if dist[destination].is_infinite() {
        return None;
    }
    let mut links = Vec::new();
    let mut node = destination;
    while parent[node] != usize::MAX {
        let l = parent[node];
        links.push(l);
        node = net.links[l].from;
    }
    links.reverse();
    Some((Path::new(links), dist[destination]))
}

/// Least-cost path under the given link times. Ties are broken toward the
/// lexicographically smallest link-id sequence. Origin == destination yields
/// the empty path at cost 0.
pub fn shortest_path(
    net: &Network,
    times_h: &[f64],
    origin: usize,
    destination: usize,
) -> Result<(Path, f64)> {
    let mut scratch = SearchScratch::new(net);
    shortest_path_scratch(net, times_h, origin, destination, &mut scratch)
}

pub fn shortest_path_scratch(
    net: &Network,
    times_h: &[f64],
    origin: usize,
    destination: usize,
    scratch: &mut SearchScratch,
) -> Result<(Path, f64)> {
    static EMPTY_LINKS: std::sync::OnceLock<HashSet<usize>> = std::sync::OnceLock::new();
    let empty = EMPTY_LINKS.get_or_init(HashSet::new);
    dijkstra_filtered(net, times_h, origin, destination, empty, empty, scratch).ok_or_else(|| {
        anyhow!(
            "node {} unreachable from node {}",
            net.nodes[destination].id,
            net.nodes[origin].id
        )
    })
}

struct RankedPath {
    cost: f64,
    ids: Vec<i64>,
    path: Path,
}

/// Yen's loopless k-shortest paths, ordered by (cost, lexicographic link-id
/// sequence). Returns fewer than k when the network runs out of simple paths;
/// empty when the destination is unreachable.
pub fn k_shortest_paths(
    net: &Network,
    times_h: &[f64],
    origin: usize,
    destination: usize,
    k: usize,
) -> Vec<(Path, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let mut scratch = SearchScratch::new(net);
    let empty: HashSet<usize> = HashSet::new();
    let Some((first, cost)) =
        dijkstra_filtered(net, times_h, origin, destination, &empty, &empty, &mut scratch)
    else {
        return Vec::new();
    };
    let mut accepted: Vec<RankedPath> =
        vec![RankedPath { cost, ids: first.link_ids(net), path: first }];
    let mut candidates: Vec<RankedPath> = Vec::new();
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    seen.insert(accepted[0].path.links.clone());

    while accepted.len() < k {
        let prev = &accepted.last().unwrap().path;
        let prev_links = prev.links.clone();
        for j in 0..prev_links.len() {
            let root = &prev_links[..j];
            let spur_node = if j == 0 {
                origin
            } else {
                net.links[prev_links[j - 1]].to
            };
            let mut banned_links: HashSet<usize> = HashSet::new();
            for acc in &accepted {
                if acc.path.links.len() > j && acc.path.links[..j] == *root {
                    banned_links.insert(acc.path.links[j]);
                }
            }
            for cand in &candidates {
                if cand.path.links.len() > j && cand.path.links[..j] == *root {
                    banned_links.insert(cand.path.links[j]);
                }
            }
            let mut banned_nodes: HashSet<usize> = HashSet::new();
            if j > 0 {
                banned_nodes.insert(net.links[prev_links[0]].from);
                for &l in &prev_links[..j] {
                    let to = net.links[l].to;
                    if to != spur_node {
                        banned_nodes.insert(to);
                    }
                }
                banned_nodes.remove(&spur_node);
            }
            let Some((spur, _)) = dijkstra_filtered(
                net,
                times_h,
                spur_node,
                destination,
                &banned_links,
                &banned_nodes,
                &mut scratch,
            ) else {
                continue;
            };
            let mut links = root.to_vec();
            links.extend_from_slice(&spur.links);
            if !seen.insert(links.clone()) {
                continue;
            }
            let path = Path::new(links);
            let cost = path.cost(times_h);
            candidates.push(RankedPath { cost, ids: path.link_ids(net), path });
        }
        if candidates.is_empty() {
            break;
        }
        let best = candidates
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.cost
                    .total_cmp(&b.cost)
                    .then_with(|| a.ids.cmp(&b.ids))
            })
            .map(|(i, _)| i)
            .unwrap();
        accepted.push(candidates.swap_remove(best));
    }
    accepted
        .into_iter()
        .map(|r| (r.path, r.cost))
        .collect()
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, l) in self.links.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "]")
    }
}

/// Resolves a node-id sequence ("6,8,16") to the path along existing links.
pub fn path_from_node_ids(net: &Network, node_ids: &[i64]) -> Result<Path> {
    if node_ids.len() < 2 {
        bail!("a route needs at least two nodes");
    }
    let mut links = Vec::with_capacity(node_ids.len() - 1);
    for w in node_ids.windows(2) {
        let l = net
            .link_between(w[0], w[1])
            .ok_or_else(|| anyhow!("no link from node {} to node {}", w[0], w[1]))?;
        links.push(l);
    }
    Ok(Path::new(links))
}

/// Resolves a link-id sequence to a path, validating connectivity.
pub fn path_from_link_ids(net: &Network, link_ids: &[i64]) -> Result<Path> {
    let mut links = Vec::with_capacity(link_ids.len());
    for &id in link_ids {
        links.push(net.link_idx(id).ok_or_else(|| anyhow!("unknown link id {id}"))?);
    }
    let path = Path::new(links);
    path.validate(net)?;
    Ok(path)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn link(id: i64, from: usize, to: usize, length: f64, speed: f64, cap: f64) -> Link {
        Link {
            id,
            from,
            to,
            length_mi: length,
            free_speed_mph: speed,
            lanes: 4,
            capacity_vph: cap,
            fftt_h: 0.0,
            backward_wave_mph: None,
        }
    }

    fn nodes(n: usize) -> Vec<Node> {
        (0..n).map(|i| Node { id: i as i64 + 1, x: i as f64, y: 0.0 }).collect()
    }

    /// Two-path network: direct link 1->4 (1.0 mi) and chain 1->2->3->4
    /// (0.5 mi each) at 40 mph. FFTTs are 90 s and 135 s.
    pub(crate) fn two_path_net() -> Network {
        Network::new(
            nodes(4),
            vec![
                link(1, 0, 3, 1.0, 40.0, 3000.0),
                link(2, 0, 1, 0.5, 40.0, 3000.0),
                link(3, 1, 2, 0.5, 40.0, 3000.0),
                link(4, 2, 3, 0.5, 40.0, 3000.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fftt_is_length_over_speed() {
        let net = two_path_net();
        assert_relative_eq!(net.links[0].fftt_h * 3600.0, 90.0, epsilon = 1e-9);
        assert_relative_eq!(net.links[1].fftt_h * 3600.0, 45.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_bad_links() {
        let err = Network::new(nodes(2), vec![]).unwrap_err();
        assert!(err.to_string().contains("no links"));
        let err = Network::new(nodes(2), vec![link(1, 0, 1, 0.0, 40.0, 100.0)]).unwrap_err();
        assert!(err.to_string().contains("length"));
        let err = Network::new(nodes(2), vec![link(1, 0, 1, 1.0, 40.0, 0.0)]).unwrap_err();
        assert!(err.to_string().contains("capacity"));
        let err = Network::new(
            nodes(2),
            vec![link(1, 0, 1, 1.0, 40.0, 100.0), link(1, 1, 0, 1.0, 40.0, 100.0)],
        )
        .unwrap_err();
        assert!(err.to_string().contains("duplicate link id"));
    }

    #[test]
    fn shortest_path_picks_cheaper_route() {
        let net = two_path_net();
        let times = net.free_flow_times();
        let (p, c) = shortest_path(&net, &times, 0, 3).unwrap();
        assert_eq!(p.links, vec![0]);
        assert_relative_eq!(c * 3600.0, 90.0, epsilon = 1e-9);
        // Make the direct link slow; the chain wins.
        let mut t2 = times.clone();
        t2[0] = 200.0 / 3600.0;
        let (p, c) = shortest_path(&net, &t2, 0, 3).unwrap();
        assert_eq!(p.links, vec![1, 2, 3]);
        assert_relative_eq!(c * 3600.0, 135.0, epsilon = 1e-9);
    }

    #[test]
    fn shortest_path_breaks_exact_ties_lexicographically() {
        // Two parallel two-link routes with identical cost; the one whose
        // link-id sequence is smaller must win regardless of file order.
        let net = Network::new(
            nodes(4),
            vec![
                link(9, 0, 1, 1.0, 40.0, 100.0),
                link(5, 1, 3, 1.0, 40.0, 100.0),
                link(2, 0, 2, 1.0, 40.0, 100.0),
                link(7, 2, 3, 1.0, 40.0, 100.0),
            ],
        )
        .unwrap();
        let times = net.free_flow_times();
        let (p, _) = shortest_path(&net, &times, 0, 3).unwrap();
        assert_eq!(p.link_ids(&net), vec![2, 7]);
    }

    #[test]
    fn unreachable_destination_errors() {
        let net = Network::new(nodes(3), vec![link(1, 0, 1, 1.0, 40.0, 100.0)]).unwrap();
        let times = net.free_flow_times();
        let err = shortest_path(&net, &times, 0, 2).unwrap_err();
        assert!(err.to_string().contains("unreachable"));
    }

    #[test]
    fn origin_equals_destination_is_empty_path() {
        let net = two_path_net();
        let times = net.free_flow_times();
        let (p, c) = shortest_path(&net, &times, 2, 2).unwrap();
        assert!(p.is_empty());
        assert_eq!(c, 0.0);
    }

    #[test]
    fn k_shortest_on_two_path_net_finds_exactly_two() {
        let net = two_path_net();
        let times = net.free_flow_times();
        let got = k_shortest_paths(&net, &times, 0, 3, 5);
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].0.links, vec![0]);
        assert_eq!(got[1].0.links, vec![1, 2, 3]);
        assert!(got[0].1 <= got[1].1);
    }

    #[test]
    fn k_shortest_paths_are_loopless_and_ordered() {
        // Grid-ish net with several routes 1->6.
        let net = Network::new(
            nodes(6),
            vec![
                link(1, 0, 1, 1.0, 40.0, 100.0),
                link(2, 0, 2, 1.2, 40.0, 100.0),
                link(3, 1, 3, 1.0, 40.0, 100.0),
                link(4, 2, 3, 1.0, 40.0, 100.0),
                link(5, 1, 4, 2.0, 40.0, 100.0),
                link(6, 3, 5, 1.0, 40.0, 100.0),
                link(7, 4, 5, 1.0, 40.0, 100.0),
                link(8, 3, 4, 0.4, 40.0, 100.0),
                link(9, 4, 3, 0.4, 40.0, 100.0),
            ],
        )
        .unwrap();
        let times = net.free_flow_times();
        let got = k_shortest_paths(&net, &times, 0, 5, 10);
        assert!(got.len() >= 4);
        for w in got.windows(2) {
            assert!(w[0].1 <= w[1].1 + 1e-12);
        }
        for (p, _) in &got {
            let mut seen = HashSet::new();
            seen.insert(net.links[p.links[0]].from);
            for &l in &p.links {
                assert!(seen.insert(net.links[l].to), "loop in {:?}", p.link_ids(&net));
            }
        }
        let unique: HashSet<_> = got.iter().map(|(p, _)| p.links.clone()).collect();
        assert_eq!(unique.len(), got.len());
    }

    #[test]
    fn k_shortest_unreachable_is_empty() {
        let net = Network::new(nodes(3), vec![link(1, 0, 1, 1.0, 40.0, 100.0)]).unwrap();
        let times = net.free_flow_times();
        assert!(k_shortest_paths(&net, &times, 0, 2, 3).is_empty());
    }

    #[test]
    fn path_free_flow_time_sums_lengths() {
        let net = two_path_net();
        let p = Path::new(vec![1, 2, 3]);
        let t = path_free_flow_time(&net, &p, 10.0).unwrap();
        assert_relative_eq!(t, 0.15, epsilon = 1e-12);
        assert_eq!(path_free_flow_time(&net, &Path::new(vec![]), 10.0).unwrap(), 0.0);
        assert!(path_free_flow_time(&net, &p, 0.0).is_err());
    }

    #[test]
    fn time_grid_divisibility() {
        let g = TimeGrid::from_seconds(600.0, 30.0).unwrap();
        assert_eq!(g.intervals, 20);
        assert_relative_eq!(g.midpoint_h(1) * 3600.0, 15.0, epsilon = 1e-9);
        assert!(TimeGrid::from_seconds(600.0, 7.0).is_err());
        assert!(TimeGrid::from_seconds(0.0, 30.0).is_err());
    }

    #[test]
    fn node_and_link_path_parsing() {
        let net = two_path_net();
        let p = path_from_node_ids(&net, &[1, 2, 3, 4]).unwrap();
        assert_eq!(p.links, vec![1, 2, 3]);
        assert!(path_from_node_ids(&net, &[1, 3]).is_err());
        let p = path_from_link_ids(&net, &[2, 3, 4]).unwrap();
        assert_eq!(p.links, vec![1, 2, 3]);
        assert!(path_from_link_ids(&net, &[1, 3]).is_err());
    }
}
