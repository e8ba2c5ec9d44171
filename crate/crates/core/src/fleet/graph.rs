use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::contracts::{GeoPoint, ZoneId};

/// Multiplier applied to edges carrying a known incident.
pub const PENALTY_FACTOR: u64 = 10;

const ORIGIN: (f64, f64) = (35.680, 139.760);
const STEP_DEG: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("node {0} is not in the graph")]
    UnknownNode(usize),
    #[error("no path from {from} to {to}")]
    Unreachable { from: usize, to: usize },
}

/// Undirected road network with integer travel costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    positions: Vec<GeoPoint>,
    /// Sorted by neighbour index.
    adjacency: Vec<Vec<(usize, u64)>>,
    zone_of: Vec<ZoneId>,
    penalized: BTreeSet<(usize, usize)>,
}

fn norm(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl RoadGraph {
    /// `width × height` grid, unit weights, zones as vertical bands.
    pub fn grid(width: usize, height: usize, zones: &[ZoneId]) -> Self {
        Self::grid_with_weights(width, height, zones, |_, _| 1)
    }

    /// Grid whose edge `(a, b)` (with `a < b`) has weight `weight(a, b)`.
    pub fn grid_with_weights(
        width: usize,
        height: usize,
        zones: &[ZoneId],
        mut weight: impl FnMut(usize, usize) -> u64,
    ) -> Self {
        assert!(width > 0 && height > 0 && !zones.is_empty());
        let n = width * height;
        let mut positions = Vec::with_capacity(n);
        let mut zone_of = Vec::with_capacity(n);
        for row in 0..height {
            for col in 0..width {
                positions.push(GeoPoint::new(ORIGIN.0 + row as f64 * STEP_DEG, ORIGIN.1 + col as f64 * STEP_DEG));
                zone_of.push(zones[col * zones.len() / width].clone());
            }
        }
        let mut adjacency = vec![Vec::new(); n];
        for row in 0..height {
            for col in 0..width {
                let a = row * width + col;
                let mut link = |b: usize| {
                    let w = weight(a, b).max(1);
                    adjacency[a].push((b, w));
                    adjacency[b].push((a, w));
                };
                if col + 1 < width {
                    link(a + 1);
                }
                if row + 1 < height {
                    link(a + width);
                }
            }
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }
        RoadGraph { positions, adjacency, zone_of, penalized: BTreeSet::new() }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, node: usize) -> GeoPoint {
        self.positions[node]
    }

    pub fn zone_of(&self, node: usize) -> &ZoneId {
        &self.zone_of[node]
    }

    pub fn neighbours(&self, node: usize) -> &[(usize, u64)] {
        &self.adjacency[node]
    }

    /// Each undirected edge once, as `(low, high, base weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, adj)| adj.iter().filter(move |(b, _)| a < *b).map(move |(b, w)| (a, *b, *w)))
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency.get(a).is_some_and(|adj| adj.iter().any(|(n, _)| *n == b))
    }

    pub fn penalize(&mut self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) && self.penalized.insert(norm(a, b))
    }

    pub fn is_penalized(&self, a: usize, b: usize) -> bool {
        self.penalized.contains(&norm(a, b))
    }

    /// Effective weight, including any incident penalty.
    pub fn weight(&self, a: usize, b: usize) -> Option<u64> {
        let w = self.adjacency.get(a)?.iter().find(|(n, _)| *n == b)?.1;
        Some(if self.is_penalized(a, b) { w * PENALTY_FACTOR } else { w })
    }

    /// Cost of visiting `path` starting at `from`.
    pub fn path_cost(&self, from: usize, path: &[usize]) -> Option<u64> {
        let mut cost = 0;
        let mut at = from;
        for &n in path {
            cost += self.weight(at, n)?;
            at = n;
        }
        Some(cost)
    }

    /// Edge closest to a GPS point (planar distance in degrees; ties go to
    /// the smaller node pair).
    pub fn nearest_edge(&self, p: GeoPoint) -> (usize, usize) {
        let mut best = None;
        for (a, b, _) in self.edges() {
            let d = segment_distance(p, self.positions[a], self.positions[b]);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, (a, b)));
            }
        }
        best.expect("graph has edges").1
    }

    /// Midpoint of an edge, as a vehicle would report it.
    pub fn edge_midpoint(&self, a: usize, b: usize) -> GeoPoint {
        let (pa, pb) = (self.positions[a], self.positions[b]);
        GeoPoint::new((pa.lat + pb.lat) / 2.0, (pa.lon + pb.lon) / 2.0)
    }
}

fn segment_distance(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2).clamp(0.0, 1.0) };
    let (cx, cy) = (a.lon + t * dx, a.lat + t * dy);
    ((p.lon - cx).powi(2) + (p.lat - cy).powi(2)).sqrt()
}

/// Minimum-cost path from `from` to `to`, excluding `from` itself.
///
/// Among equal-cost paths the lexicographically smallest node sequence
/// wins: costs-to-go come from Dijkstra run backwards from `to`, then the
/// walk forward always takes the lowest-index neighbour that stays on an
/// optimal path.
pub fn plan_route(graph: &RoadGraph, from: usize, to: usize) -> Result<Vec<usize>, RouteError> {
    for n in [from, to] {
        if n >= graph.len() {
            return Err(RouteError::UnknownNode(n));
        }
    }
    let mut dist = vec![u64::MAX; graph.len()];
    dist[to] = 0;
    let mut heap = BinaryHeap::from([Reverse((0u64, to))]);
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, _) in graph.neighbours(u) {
            let nd = d + graph.weight(u, v).expect("neighbour edge");
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    if dist[from] == u64::MAX {
        return Err(RouteError::Unreachable { from, to });
    }
    let mut path = Vec::new();
    let mut at = from;
    while at != to {
        at = graph
            .neighbours(at)
            .iter()
            .map(|(v, _)| *v)
            .find(|&v| dist[v] != u64::MAX && dist[v] + graph.weight(at, v).expect("edge") == dist[at])
            .expect("an optimal successor exists");
        path.push(at);
    }
    Ok(path)
}

/// A vehicle's position on its planned route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteState {
    pub graph: RoadGraph,
    pub position: usize,
    pub destination: usize,
    /// Nodes still to visit, ending at the destination.
    pub route: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reroute {
    pub edge: (usize, usize),
    pub old_route: Vec<usize>,
    pub new_route: Vec<usize>,
}

impl RouteState {
    pub fn new(graph: RoadGraph, from: usize, to: usize) -> Result<Self, RouteError> {
        let route = plan_route(&graph, from, to)?;
        Ok(RouteState { graph, position: from, destination: to, route })
    }

    /// Edges still ahead of the vehicle.
    pub fn remaining_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(self.position).chain(self.route.iter().copied()).zip(self.route.iter().copied())
    }

    /// Moves one node along the route. Returns false at the destination.
    pub fn advance(&mut self) -> bool {
        if self.route.is_empty() {
            return false;
        }
        self.position = self.route.remove(0);
        true
    }

    /// Penalizes the edge nearest to an incident and replans if that edge
    /// is still ahead.
    pub fn on_incident(&mut self, gps: GeoPoint) -> Option<Reroute> {
        let edge = self.graph.nearest_edge(gps);
        self.graph.penalize(edge.0, edge.1);
        let ahead = self.remaining_edges().any(|(a, b)| norm(a, b) == edge);
        if !ahead {
            return None;
        }
        let new_route = plan_route(&self.graph, self.position, self.destination).ok()?;
        let old_route = std::mem::replace(&mut self.route, new_route.clone());
        Some(Reroute { edge, old_route, new_route })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zones() -> Vec<ZoneId> {
        ["red", "green", "blue"].map(ZoneId::new).to_vec()
    }

    /// Every simple path from `from` to `to`, excluding `from`.
    fn all_simple_paths(g: &RoadGraph, from: usize, to: usize) -> Vec<Vec<usize>> {
        fn go(
            g: &RoadGraph,
            at: usize,
            to: usize,
            seen: &mut Vec<bool>,
            path: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
        ) {
            if at == to {
                out.push(path.clone());
                return;
            }
            for &(n, _) in g.neighbours(at) {
                if !seen[n] {
                    seen[n] = true;
                    path.push(n);
                    go(g, n, to, seen, path, out);
                    path.pop();
                    seen[n] = false;
                }
            }
        }
        let mut seen = vec![false; g.len()];
        seen[from] = true;
        let mut out = Vec::new();
        go(g, from, to, &mut seen, &mut Vec::new(), &mut out);
        out
    }

    /// Exhaustive reference: minimum cost, then smallest node sequence.
    fn oracle(g: &RoadGraph, from: usize, to: usize) -> Vec<usize> {
        all_simple_paths(g, from, to)
            .into_iter()
            .min_by(|a, b| g.path_cost(from, a).cmp(&g.path_cost(from, b)).then_with(|| a.cmp(b)))
            .unwrap()
    }

    #[test]
    fn straight_grid_route_is_manhattan() {
        let g = RoadGraph::grid(4, 4, &zones());
        let path = plan_route(&g, 0, 15).unwrap();
        assert_eq!(path.len(), 6);
        assert_eq!(g.path_cost(0, &path), Some(6));
        assert_eq!(path, vec![1, 2, 3, 7, 11, 15]);
        assert_eq!(plan_route(&g, 5, 5).unwrap(), Vec::<usize>::new());
        assert_eq!(plan_route(&g, 0, 16), Err(RouteError::UnknownNode(16)));
    }

    #[test]
    fn penalized_edge_on_unique_shortest_path_forces_detour() {
        // Row 0 is cheap, everything else costs 2: the top row is the
        // unique shortest path from 0 to 3.
        let g0 = RoadGraph::grid_with_weights(4, 4, &zones(), |a, b| if a < 4 && b < 4 { 1 } else { 2 });
        assert_eq!(plan_route(&g0, 0, 3).unwrap(), vec![1, 2, 3]);
        let mut g = g0.clone();
        g.penalize(1, 2);
        let detour = plan_route(&g, 0, 3).unwrap();
        assert_eq!(detour, oracle(&g, 0, 3));
        let mut at = 0;
        for &n in &detour {
            assert!(!g.is_penalized(at, n));
            at = n;
        }
        assert_eq!(detour, vec![1, 5, 6, 2, 3]);
        assert_eq!(g.path_cost(0, &detour), Some(8));
    }

    #[test]
    fn matches_exhaustive_search_on_small_grids() {
        let mut rng_state = 0x2545_f491_4f6c_dd1du64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            rng_state
        };
        for (w, h) in [(2, 2), (3, 3), (4, 3), (4, 4), (5, 4)] {
            for _ in 0..6 {
                let weights: Vec<u64> = (0..w * h * 2).map(|_| 1 + next() % 4).collect();
                let mut g = RoadGraph::grid_with_weights(w, h, &zones(), |a, b| weights[a + b]);
                let edges: Vec<_> = g.edges().collect();
                for _ in 0..(next() % 4) {
                    let (a, b, _) = edges[(next() as usize) % edges.len()];
                    g.penalize(a, b);
                }
                let from = (next() as usize) % g.len();
                let to = (next() as usize) % g.len();
                assert_eq!(plan_route(&g, from, to).unwrap(), oracle(&g, from, to), "{w}x{h} {from}->{to}");
            }
        }
    }

    #[test]
    fn penalized_edges_avoided_whenever_possible_on_5x5() {
        let mut g = RoadGraph::grid(5, 5, &zones());
        let first = plan_route(&g, 0, 24).unwrap();
        g.penalize(0, first[0]);
        let path = plan_route(&g, 0, 24).unwrap();
        let free_exists = all_simple_paths(&g, 0, 24).iter().any(|p| {
            std::iter::once(0).chain(p.iter().copied()).zip(p.iter().copied()).all(|(a, b)| !g.is_penalized(a, b))
        });
        assert!(free_exists);
        assert!(std::iter::once(0)
            .chain(path.iter().copied())
            .zip(path.iter().copied())
            .all(|(a, b)| !g.is_penalized(a, b)));
        assert_eq!(path, oracle(&g, 0, 24));
    }

    #[test]
    fn zones_tile_columns_and_nearest_edge_finds_midpoints() {
        let g = RoadGraph::grid(6, 2, &zones());
        let cols: Vec<_> = (0..6).map(|c| g.zone_of(c).as_str().to_string()).collect();
        assert_eq!(cols, ["red", "red", "green", "green", "blue", "blue"]);
        for (a, b, _) in g.edges() {
            assert_eq!(g.nearest_edge(g.edge_midpoint(a, b)), (a, b));
        }
    }

    #[test]
    fn incident_ahead_reroutes_behind_or_off_route_does_not() {
        let g = RoadGraph::grid(4, 4, &zones());
        let mut rs = RouteState::new(g.clone(), 0, 15).unwrap();
        let old = rs.route.clone();
        let (a, b) = (old[1], old[2]);
        let r = rs.on_incident(rs.graph.edge_midpoint(a, b)).unwrap();
        assert_eq!(r.old_route, old);
        assert_eq!(r.new_route.last(), Some(&15));
        assert!(!rs.remaining_edges().any(|(x, y)| norm(x, y) == norm(a, b)));
        assert_eq!(rs.route, oracle(&rs.graph, 0, 15));
        // Same incident reported again: already avoided.
        assert!(rs.on_incident(rs.graph.edge_midpoint(a, b)).is_none());

        let mut behind = RouteState::new(g.clone(), 0, 15).unwrap();
        let first = behind.route[0];
        behind.advance();
        behind.advance();
        assert!(behind.on_incident(g.edge_midpoint(0, first)).is_none());

        let mut off = RouteState::new(g.clone(), 0, 3).unwrap();
        assert!(off.on_incident(g.edge_midpoint(12, 13)).is_none());
        assert_eq!(off.route, vec![1, 2, 3]);
    }
}
