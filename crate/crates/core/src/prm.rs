//! Probabilistic roadmap over free space with a shortest-path tree rooted at the
//! vehicle goal, answering "which way to the goal from here" for arbitrary points.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::rng::stream;
use crate::world::Environment;

pub const START: usize = 0;
pub const GOAL: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrmParams {
    pub nodes: usize,
    pub k: usize,
    pub max_retries: usize,
    /// Required clearance of nodes and edges from obstacles (m).
    pub clearance: f64,
}

impl Default for PrmParams {
    fn default() -> Self {
        Self { nodes: 100, k: 10, max_retries: 10, clearance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roadmap {
    pub nodes: Vec<Vec2>,
    /// Undirected edges `(u, v, length)` with `u < v`.
    pub edges: Vec<(usize, usize, f64)>,
    pub adjacency: Vec<Vec<(usize, f64)>>,
    pub next_hop: Vec<Option<usize>>,
    pub cost_to_goal: Vec<f64>,
    pub clearance: f64,
    #[serde(skip)]
    obstacles: Vec<(Vec2, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    cost: f64,
    node: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn sample_free<R: Rng>(env: &Environment, clearance: f64, rng: &mut R) -> Vec2 {
    loop {
        let p = Vec2::new(rng.random::<f64>() * env.width, rng.random::<f64>() * env.height);
        if env.obstacle_clearance(p) >= clearance {
            return p;
        }
    }
}

impl Roadmap {
    /// Connects every node to its `k` nearest neighbors through collision-free
    /// straight segments, then fills in the shortest-path tree.
    pub fn from_nodes(env: &Environment, nodes: Vec<Vec2>, k: usize, clearance: f64) -> Self {
        let n = nodes.len();
        let mut edges = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for u in 0..n {
            let mut order: Vec<(f64, usize)> =
                (0..n).filter(|&v| v != u).map(|v| (nodes[u].dist(nodes[v]), v)).collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(d, v) in order.iter().take(k) {
                let key = (u.min(v), u.max(v));
                if d > 0.0 && !seen.contains(&key) && env.segment_clearance(nodes[u], nodes[v]) >= clearance {
                    seen.insert(key);
                    edges.push((key.0, key.1, d));
                }
            }
        }
        edges.sort_by_key(|e| (e.0, e.1));
        Self::from_edges(env, nodes, edges, clearance)
    }

    pub fn from_edges(env: &Environment, nodes: Vec<Vec2>, edges: Vec<(usize, usize, f64)>, clearance: f64) -> Self {
        let n = nodes.len();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v, w) in &edges {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|a| a.0);
        }
        let mut map = Roadmap {
            nodes,
            edges,
            adjacency,
            next_hop: vec![None; n],
            cost_to_goal: vec![f64::INFINITY; n],
            clearance,
            obstacles: env.obstacles.iter().map(|o| (o.center, o.radius)).collect(),
        };
        map.shortest_paths_to_goal();
        map
    }

    /// Dijkstra from the goal node. Each node's successor is the neighbor minimizing
    /// `cost(v) + w(u, v)`, lower index on ties; unreachable nodes keep `+∞` and no
    /// successor.
    pub fn shortest_paths_to_goal(&mut self) {
        let n = self.nodes.len();
        self.cost_to_goal = vec![f64::INFINITY; n];
        self.next_hop = vec![None; n];
        if n <= GOAL {
            return;
        }
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        self.cost_to_goal[GOAL] = 0.0;
        heap.push(Frontier { cost: 0.0, node: GOAL });
        while let Some(Frontier { cost, node }) = heap.pop() {
            if done[node] {
                continue;
            }
            done[node] = true;
            for &(v, w) in &self.adjacency[node] {
                let c = cost + w;
                if c < self.cost_to_goal[v] {
                    self.cost_to_goal[v] = c;
                    heap.push(Frontier { cost: c, node: v });
                }
            }
        }
        for u in 0..n {
            if u == GOAL || !self.cost_to_goal[u].is_finite() {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &(v, w) in &self.adjacency[u] {
                let c = self.cost_to_goal[v] + w;
                if self.cost_to_goal[v] < self.cost_to_goal[u]
                    && best.is_none_or(|(bc, bv)| c < bc || (c == bc && v < bv))
                {
                    best = Some((c, v));
                }
            }
            self.next_hop[u] = best.map(|b| b.1);
        }
    }

    fn visible(&self, a: Vec2, b: Vec2) -> bool {
        self.obstacles.iter().all(|&(c, r)| crate::geometry::point_segment_distance(c, a, b) - r >= self.clearance)
    }

    /// Best visible reachable node from `p`, ranked by `|p - node| + cost_to_goal(node)`
    /// with lower index on ties.
    pub fn entry_node(&self, p: Vec2) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for (i, &c) in self.cost_to_goal.iter().enumerate() {
            let r = p.dist(self.nodes[i]) + c;
            if c.is_finite() && best.is_none_or(|(b, _)| r < b) {
                best = Some((r, i));
            }
        }
        let (_, first) = best?;
        if self.visible(p, self.nodes[first]) {
            return Some(first);
        }
        let mut ranked: Vec<(f64, usize)> = (0..self.nodes.len())
            .filter(|&i| self.cost_to_goal[i].is_finite())
            .map(|i| (p.dist(self.nodes[i]) + self.cost_to_goal[i], i))
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        ranked.into_iter().map(|(_, i)| i).find(|&i| self.visible(p, self.nodes[i]))
    }

    /// Heading toward the roadmap from `p`. `Ok(None)` when `p` sits on the goal node.
    pub fn next_heading(&self, p: Vec2) -> Result<Option<f64>> {
        let node = self.entry_node(p).ok_or(Error::NoVisibleNode { x: p.x, y: p.y })?;
        if p.dist(self.nodes[node]) > 1e-9 {
            return Ok(Some(p.heading_to(self.nodes[node])));
        }
        Ok(self.next_hop[node].map(|next| p.heading_to(self.nodes[next])))
    }

    /// Length of the roadmap route from `p` to the goal, `+∞` when no node is visible.
    pub fn path_length_from(&self, p: Vec2) -> f64 {
        self.entry_node(p).map_or(f64::INFINITY, |i| p.dist(self.nodes[i]) + self.cost_to_goal[i])
    }

    /// Node sequence from `node` to the goal along successors.
    pub fn route(&self, node: usize) -> Vec<usize> {
        let mut out = vec![node];
        let mut cur = node;
        while let Some(next) = self.next_hop[cur] {
            out.push(next);
            cur = next;
            if out.len() > self.nodes.len() {
                break;
            }
        }
        out
    }

    pub fn write_nodes_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["id", "x", "y", "cost_to_goal", "next_hop"])?;
        for (i, p) in self.nodes.iter().enumerate() {
            w.write_record([
                i.to_string(),
                p.x.to_string(),
                p.y.to_string(),
                self.cost_to_goal[i].to_string(),
                self.next_hop[i].map_or_else(String::new, |n| n.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_edges_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v", "length"])?;
        for (u, v, len) in &self.edges {
            w.write_record([u.to_string(), v.to_string(), len.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Samples a roadmap with the vehicle start as node 0 and goal as node 1, resampling
/// with a fresh stream until the goal is reachable from the start.
pub fn build_roadmap(env: &Environment, params: &PrmParams, seed: u64) -> Result<Roadmap> {
    if params.nodes < 2 || params.k < 1 {
        return Err(Error::Config("roadmap needs at least 2 nodes and k >= 1".into()));
    }
    for attempt in 0..params.max_retries.max(1) {
        let mut rng = stream(seed, attempt as u64);
        let mut nodes = vec![env.vehicle_start, env.vehicle_goal];
        nodes.extend((2..params.nodes).map(|_| sample_free(env, params.clearance, &mut rng)));
        let map = Roadmap::from_nodes(env, nodes, params.k, params.clearance);
        if map.cost_to_goal[START].is_finite() {
            return Ok(map);
        }
    }
    Err(Error::RoadmapDisconnected(params.max_retries.max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_scenario, ScenarioId};

    fn open() -> Environment {
        build_scenario(ScenarioId::OpenField)
    }

    #[test]
    fn two_node_open_field() {
        let env = open();
        let map = build_roadmap(&env, &PrmParams { nodes: 2, k: 1, ..PrmParams::default() }, 1).unwrap();
        assert_eq!(map.edges.len(), 1);
        assert_eq!(map.cost_to_goal[START], env.vehicle_start.dist(env.vehicle_goal));
        assert_eq!(map.next_hop[START], Some(GOAL));
    }

    #[test]
    fn chain_beats_long_direct_edge() {
        let env = open();
        // goal = 1, a = 0, b = 2; a-b 1, b-goal 1, a-goal 3 (weights given explicitly).
        let nodes = vec![Vec2::new(10.0, 10.0), Vec2::new(12.0, 10.0), Vec2::new(11.0, 10.0)];
        let map = Roadmap::from_edges(&env, nodes, vec![(0, 2, 1.0), (1, 2, 1.0), (0, 1, 3.0)], 1.0);
        assert_eq!(map.next_hop[0], Some(2));
        assert_eq!(map.cost_to_goal[0], 2.0);
        assert_eq!(map.cost_to_goal[GOAL], 0.0);
    }

    #[test]
    fn equal_cost_successor_prefers_lower_index() {
        let env = open();
        let nodes = vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(1.0, -1.0)];
        let edges = vec![(0, 2, 1.0), (0, 3, 1.0), (1, 2, 1.0), (1, 3, 1.0)];
        let map = Roadmap::from_edges(&env, nodes, edges, 1.0);
        assert_eq!(map.next_hop[0], Some(2));
    }

    #[test]
    fn bellman_condition_holds() {
        let env = build_scenario(ScenarioId::Scattered);
        let map = build_roadmap(&env, &PrmParams::default(), 5).unwrap();
        assert_eq!(map.cost_to_goal[GOAL], 0.0);
        for &(u, v, w) in &map.edges {
            assert!(map.cost_to_goal[u] <= map.cost_to_goal[v] + w + 1e-12);
            assert!(map.cost_to_goal[v] <= map.cost_to_goal[u] + w + 1e-12);
        }
        for u in 0..map.nodes.len() {
            if map.cost_to_goal[u].is_finite() {
                assert_eq!(*map.route(u).last().unwrap(), GOAL);
            }
        }
    }

    #[test]
    fn same_seed_same_nodes() {
        let env = build_scenario(ScenarioId::Scattered);
        let a = build_roadmap(&env, &PrmParams::default(), 17).unwrap();
        let b = build_roadmap(&env, &PrmParams::default(), 17).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.edges, b.edges);
    }

    #[test]
    fn headings_on_node_and_toward_goal() {
        let env = open();
        let nodes = vec![Vec2::new(10.0, 10.0), Vec2::new(30.0, 10.0), Vec2::new(20.0, 20.0)];
        let map = Roadmap::from_edges(&env, nodes, vec![(0, 2, 200f64.sqrt()), (1, 2, 200f64.sqrt())], 1.0);
        // On node 2: head along its successor (the goal).
        let h = map.next_heading(Vec2::new(20.0, 20.0)).unwrap().unwrap();
        assert!((h - (-45f64).to_radians()).abs() < 1e-12);
        // Goal directly visible and cheapest: head straight at it.
        let h = map.next_heading(Vec2::new(25.0, 10.0)).unwrap().unwrap();
        assert!(h.abs() < 1e-12);
        assert_eq!(map.next_heading(Vec2::new(30.0, 10.0)).unwrap(), None);
    }

    #[test]
    fn pocket_has_no_visible_node() {
        let env = build_scenario(ScenarioId::Scattered);
        let map = build_roadmap(&env, &PrmParams::default(), 3).unwrap();
        let o = env.obstacles[0];
        let inside = o.center + Vec2::new(o.radius + 0.5, 0.0);
        assert!(matches!(map.next_heading(inside), Err(Error::NoVisibleNode { .. })));
    }
}
