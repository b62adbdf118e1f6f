//! Hybrid A* for the speed-only baseline: A* over continuous positions with a
//! discrete set of heading actions. Path cost combines travelled distance with a
//! static-obstacle cost and pedestrian potential fields, the latter two discounted
//! along the path.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::belief::{normalized_entropy, IntentionBelief};
use crate::budget::Budget;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::pomdp::{PedestrianState, VehicleKind};
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathCostParams {
    /// Peak static-obstacle cost, reached at the clearance limit.
    pub c_st: f64,
    /// Peak pedestrian potential.
    pub c_ped: f64,
    /// Per-step discount on the obstacle and pedestrian costs, in `(0, 1]`.
    pub discount: f64,
    /// Expansion step length (m).
    pub step: f64,
    /// Closed-set position resolution (m).
    pub cell: f64,
    /// Width of the soft static-cost band beyond the hard clearance (m).
    pub static_margin: f64,
    /// Hard clearance from obstacles (m).
    pub clearance: f64,
    pub goal_tolerance: f64,
    pub max_expansions: usize,
    /// Wall-clock planning budget (s); `0` disables the clock.
    pub budget_s: f64,
}

impl Default for PathCostParams {
    fn default() -> Self {
        Self {
            c_st: 50.0,
            c_ped: 30.0,
            discount: 0.95,
            step: 1.0,
            cell: 0.5,
            static_margin: 2.0,
            clearance: 1.0,
            goal_tolerance: 1.0,
            max_expansions: 60_000,
            budget_s: 0.15,
        }
    }
}

/// Heading actions: absolute headings for the holonomic vehicle, heading changes for
/// the Dubins vehicle.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSet {
    Absolute(Vec<f64>),
    Relative(Vec<f64>),
}

impl ActionSet {
    /// 36 absolute headings, -170° to 180° every 10°.
    pub fn holonomic() -> Self {
        ActionSet::Absolute((0..36).map(|k| (-170.0 + 10.0 * k as f64).to_radians()).collect())
    }

    /// 19 heading changes, -45° to 45° every 5°.
    pub fn dubins() -> Self {
        ActionSet::Relative((0..19).map(|k| (-45.0 + 5.0 * k as f64).to_radians()).collect())
    }

    pub fn for_vehicle(kind: VehicleKind) -> Self {
        match kind {
            VehicleKind::Holonomic => Self::holonomic(),
            VehicleKind::Dubins => Self::dubins(),
        }
    }

    fn len(&self) -> usize {
        match self {
            ActionSet::Absolute(v) | ActionSet::Relative(v) => v.len(),
        }
    }

    fn next_heading(&self, heading: f64, k: usize) -> f64 {
        match self {
            ActionSet::Absolute(v) => v[k],
            ActionSet::Relative(v) => wrap_angle(heading + v[k]),
        }
    }

    /// Whether `heading` is reachable as an action result from `prev`.
    pub fn admits(&self, prev: f64, heading: f64) -> bool {
        let close = |a: f64, b: f64| wrap_angle(a - b).abs() < 1e-9;
        match self {
            ActionSet::Absolute(v) => v.iter().any(|&h| close(h, heading)),
            ActionSet::Relative(v) => v.iter().any(|&d| close(prev + d, heading)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialMode {
    /// Intention unclear: one large disk at the current position.
    Spread,
    /// Intention clear: disks along the most likely path.
    Path,
}

/// Spread mode when normalized entropy is at or above one half.
pub fn entropy_mode(row: &[f64]) -> PotentialMode {
    if normalized_entropy(row) >= 0.5 {
        PotentialMode::Spread
    } else {
        PotentialMode::Path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Disk {
    pub center: Vec2,
    pub radius: f64,
    pub owner: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PedPotentialField {
    pub disks: Vec<Disk>,
    pub height: f64,
}

impl PedPotentialField {
    /// Builds disks for each pedestrian from its belief row: spread mode gets radius
    /// `2 + 2 H` at the current position; path mode gets 1.5 m disks every meter along
    /// the ray to the most likely goal for a 5 s horizon.
    pub fn from_belief(peds: &[PedestrianState], belief: &IntentionBelief, height: f64) -> Self {
        let mut disks = Vec::new();
        for (owner, (ped, row)) in peds.iter().zip(&belief.rows).enumerate() {
            match entropy_mode(row) {
                PotentialMode::Spread => {
                    disks.push(Disk { center: ped.pos, radius: 2.0 + 2.0 * normalized_entropy(row), owner })
                }
                PotentialMode::Path => {
                    let goal = belief.goals[belief.most_likely(owner)];
                    let reach = (ped.speed * 5.0).min(ped.pos.dist(goal));
                    let dir = if ped.pos.dist(goal) > 1e-9 {
                        (goal - ped.pos) * (1.0 / ped.pos.dist(goal))
                    } else {
                        Vec2::default()
                    };
                    let count = reach.floor() as usize;
                    for s in 0..=count {
                        disks.push(Disk { center: ped.pos + dir * s as f64, radius: 1.5, owner });
                    }
                }
            }
        }
        Self { disks, height }
    }

    /// Sum over pedestrians of the strongest quadratic falloff among their disks.
    pub fn cost(&self, p: Vec2) -> f64 {
        let mut total = 0.0;
        let mut owner = usize::MAX;
        let mut best = 0.0f64;
        for d in &self.disks {
            if d.owner != owner {
                total += best;
                best = 0.0;
                owner = d.owner;
            }
            let dist = p.dist(d.center);
            if dist < d.radius {
                let f = 1.0 - dist / d.radius;
                best = best.max(self.height * f * f);
            }
        }
        total + best
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PlannedPath {
    waypoints: Vec<Vec2>,
    headings: Vec<f64>,
    cost: f64,
    #[serde(skip)]
    arcs: Vec<f64>,
}

impl PlannedPath {
    /// `headings[k]` is the direction of travel from `waypoints[k]` to `waypoints[k + 1]`.
    pub fn new(waypoints: Vec<Vec2>, headings: Vec<f64>, cost: f64) -> Self {
        debug_assert!(waypoints.len() == headings.len() + 1 || (waypoints.is_empty() && headings.is_empty()));
        let mut arcs = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        for (k, w) in waypoints.iter().enumerate() {
            if k > 0 {
                acc += waypoints[k - 1].dist(*w);
            }
            arcs.push(acc);
        }
        Self { waypoints, headings, cost, arcs }
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn headings(&self) -> &[f64] {
        &self.headings
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn is_empty(&self) -> bool {
        self.headings.is_empty()
    }

    pub fn length(&self) -> f64 {
        self.arcs.last().copied().unwrap_or(0.0)
    }

    /// Arc length of the point on the path closest to `p`.
    pub fn project(&self, p: Vec2) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for (k, w) in self.waypoints.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            let t = if len > 0.0 { ((p - w[0]).dot(seg) / (len * len)).clamp(0.0, 1.0) } else { 0.0 };
            let d = p.dist(w[0] + seg * t);
            if d < best.0 {
                best = (d, self.arcs[k] + t * len);
            }
        }
        best.1
    }

    /// Index of the segment containing arc length `s`.
    fn segment(&self, s: f64) -> Option<usize> {
        if self.headings.is_empty() {
            return None;
        }
        let k = self.arcs.partition_point(|&a| a <= s);
        Some(k.saturating_sub(1).min(self.headings.len() - 1))
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        match self.segment(s) {
            None => self.waypoints.last().copied().unwrap_or_default(),
            Some(k) => {
                let len = self.arcs[k + 1] - self.arcs[k];
                if len <= 0.0 {
                    return self.waypoints[k + 1];
                }
                let t = ((s - self.arcs[k]) / len).clamp(0.0, 1.0);
                self.waypoints[k] + (self.waypoints[k + 1] - self.waypoints[k]) * t
            }
        }
    }

    /// Direction of travel at arc length `s`.
    pub fn heading_at(&self, s: f64) -> Option<f64> {
        self.segment(s).map(|k| self.headings[k])
    }

    /// The remainder of this path starting from the point closest to `p`.
    pub fn trimmed_from(&self, p: Vec2) -> PlannedPath {
        let s = self.project(p);
        let mut waypoints = vec![p];
        let mut headings = Vec::new();
        for (k, w) in self.waypoints.iter().enumerate().skip(1) {
            if self.arcs[k] > s + 1e-9 {
                headings.push(waypoints.last().unwrap().heading_to(*w));
                waypoints.push(*w);
            }
        }
        PlannedPath::new(waypoints, headings, self.cost)
    }
}

#[derive(Debug, Clone, Copy)]
struct Open {
    f: f64,
    g: f64,
    node: usize,
}

impl PartialEq for Open {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Open {}

impl Ord for Open {
    // Min f, then deeper nodes first, then insertion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then(self.g.total_cmp(&other.g)).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct SearchNode {
    pos: Vec2,
    heading: f64,
    depth: u32,
    g: f64,
    parent: Option<usize>,
}

/// Cost of occupying `p`: `None` when inside the hard clearance or outside the field.
pub fn static_cost(env: &Environment, p: Vec2, params: &PathCostParams) -> Option<f64> {
    if !env.contains(p) {
        return None;
    }
    let c = env.obstacle_clearance(p);
    if c < params.clearance {
        return None;
    }
    if params.static_margin > 0.0 && c < params.clearance + params.static_margin {
        let f = 1.0 - (c - params.clearance) / params.static_margin;
        return Some(params.c_st * f * f);
    }
    Some(0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchStats {
    pub expansions: usize,
    pub reused_previous: bool,
}

/// Plans from `(start, heading)` to within `goal_tolerance` of `goal`.
///
/// Minimizes travelled length plus `Σ_t λ^t (C_st + C_ped)` over the waypoints. When
/// the budget runs out first, falls back to the unexplored remainder of `previous`.
#[allow(clippy::too_many_arguments)]
pub fn plan_path(
    env: &Environment,
    start: Vec2,
    heading: f64,
    goal: Vec2,
    field: &PedPotentialField,
    actions: &ActionSet,
    params: &PathCostParams,
    previous: Option<&PlannedPath>,
    budget: &Budget,
    stats: &mut SearchStats,
) -> Result<PlannedPath> {
    match search(env, start, heading, goal, field, actions, params, budget, stats) {
        Some(path) => Ok(path),
        None => {
            stats.reused_previous = previous.is_some();
            previous.map(|p| p.trimmed_from(start)).ok_or(Error::NoPath)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn search(
    env: &Environment,
    start: Vec2,
    heading: f64,
    goal: Vec2,
    field: &PedPotentialField,
    actions: &ActionSet,
    params: &PathCostParams,
    budget: &Budget,
    stats: &mut SearchStats,
) -> Option<PlannedPath> {
    let h = |p: Vec2| (p.dist(goal) - params.goal_tolerance).max(0.0);
    // Absolute-heading successors do not depend on the current heading, so the
    // holonomic closed set only needs the cell.
    let key = |p: Vec2, heading: f64| -> (i64, i64, i64) {
        let b = match actions {
            ActionSet::Absolute(_) => 0,
            ActionSet::Relative(_) => ((wrap_angle(heading).to_degrees() / 5.0).round() as i64).rem_euclid(72),
        };
        ((p.x / params.cell).floor() as i64, (p.y / params.cell).floor() as i64, b)
    };

    let mut nodes = vec![SearchNode { pos: start, heading, depth: 0, g: 0.0, parent: None }];
    if h(start) <= 0.0 {
        return Some(reconstruct(&nodes, 0));
    }
    let mut open = BinaryHeap::new();
    let mut best_g: HashMap<(i64, i64, i64), f64> = HashMap::new();
    let mut closed: HashSet<(i64, i64, i64)> = HashSet::new();
    // Cheapest goal-reaching node generated so far.
    let mut incumbent: Option<(f64, usize)> = None;
    open.push(Open { f: h(start), g: 0.0, node: 0 });
    let clock = budget.start();

    while let Some(Open { g, node, .. }) = open.pop() {
        let (pos, cur_heading, depth) = (nodes[node].pos, nodes[node].heading, nodes[node].depth);
        if pos.dist(goal) <= params.goal_tolerance {
            return Some(reconstruct(&nodes, node));
        }
        if !closed.insert(key(pos, cur_heading)) && node != 0 {
            continue;
        }
        stats.expansions += 1;
        if stats.expansions > params.max_expansions || clock.expired(stats.expansions) {
            return incumbent.map(|(_, n)| reconstruct(&nodes, n));
        }
        let discount = params.discount.powi(depth as i32);
        let here = env.obstacle_clearance(pos);
        for a in 0..actions.len() {
            let nh = actions.next_heading(cur_heading, a);
            let np = pos + Vec2::from_heading(nh) * params.step;
            let st = match static_cost(env, np, params) {
                Some(c) => c,
                // Inside the clearance zone only moves that gain clearance are allowed.
                None if env.contains(np) && here < params.clearance && env.obstacle_clearance(np) > here => params.c_st,
                None => continue,
            };
            let ng = g + params.step + discount * (st + field.cost(np));
            let nk = key(np, nh);
            if closed.contains(&nk) || best_g.get(&nk).is_some_and(|&b| b <= ng) {
                continue;
            }
            best_g.insert(nk, ng);
            nodes.push(SearchNode { pos: np, heading: nh, depth: depth + 1, g: ng, parent: Some(node) });
            let id = nodes.len() - 1;
            if h(np) <= 0.0 && incumbent.is_none_or(|(c, _)| ng < c) {
                incumbent = Some((ng, id));
            }
            open.push(Open { f: ng + h(np), g: ng, node: id });
        }
    }
    incumbent.map(|(_, n)| reconstruct(&nodes, n))
}

fn reconstruct(nodes: &[SearchNode], mut idx: usize) -> PlannedPath {
    let cost = nodes[idx].g;
    let mut waypoints = vec![nodes[idx].pos];
    let mut headings = Vec::new();
    while let Some(parent) = nodes[idx].parent {
        headings.push(nodes[idx].heading);
        waypoints.push(nodes[parent].pos);
        idx = parent;
    }
    waypoints.reverse();
    headings.reverse();
    PlannedPath::new(waypoints, headings, cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{build_scenario, CircularObstacle, ScenarioId};

    fn quick() -> Budget {
        Budget::iterations(usize::MAX)
    }

    #[test]
    fn action_sets() {
        let ActionSet::Absolute(h) = ActionSet::holonomic() else { panic!() };
        assert_eq!(h.len(), 36);
        assert!((h[0].to_degrees() + 170.0).abs() < 1e-9 && (h[35].to_degrees() - 180.0).abs() < 1e-9);
        let ActionSet::Relative(d) = ActionSet::dubins() else { panic!() };
        assert_eq!(d.len(), 19);
        assert!((d[0].to_degrees() + 45.0).abs() < 1e-9 && (d[18].to_degrees() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn entropy_modes() {
        assert_eq!(entropy_mode(&[0.25; 4]), PotentialMode::Spread);
        assert_eq!(entropy_mode(&[0.97, 0.01, 0.01, 0.01]), PotentialMode::Path);
        // Two equally likely goals out of four: entropy exactly ln 2 / ln 4 = 0.5.
        assert_eq!(entropy_mode(&[0.5, 0.5, 0.0, 0.0]), PotentialMode::Spread);
    }

    #[test]
    fn open_field_path_is_nearly_straight() {
        let env = build_scenario(ScenarioId::OpenField);
        let mut stats = SearchStats::default();
        let path = plan_path(
            &env,
            env.vehicle_start,
            0.0,
            env.vehicle_goal,
            &PedPotentialField::default(),
            &ActionSet::holonomic(),
            &PathCostParams::default(),
            None,
            &quick(),
            &mut stats,
        )
        .unwrap();
        let straight = env.vehicle_start.dist(env.vehicle_goal) - 1.0;
        assert!(path.length() <= straight * 1.05, "{} vs {}", path.length(), straight);
        assert!(path.waypoints().last().unwrap().dist(env.vehicle_goal) <= 1.0);
        let ActionSet::Absolute(set) = ActionSet::holonomic() else { unreachable!() };
        for h in path.headings() {
            assert!(set.iter().any(|a| wrap_angle(a - h).abs() < 1e-9));
        }
    }

    #[test]
    fn start_at_goal_gives_empty_path() {
        let env = build_scenario(ScenarioId::OpenField);
        let path = plan_path(
            &env,
            env.vehicle_goal + Vec2::new(0.5, 0.0),
            0.0,
            env.vehicle_goal,
            &PedPotentialField::default(),
            &ActionSet::holonomic(),
            &PathCostParams::default(),
            None,
            &quick(),
            &mut SearchStats::default(),
        )
        .unwrap();
        assert!(path.is_empty());
    }

    #[test]
    fn detours_around_obstacle_with_clearance() {
        let mut env = build_scenario(ScenarioId::OpenField);
        env.obstacles.push(CircularObstacle { center: Vec2::new(50.0, 50.0), radius: 6.0 });
        let path = plan_path(
            &env,
            Vec2::new(30.0, 30.0),
            0.0,
            Vec2::new(70.0, 70.0),
            &PedPotentialField::default(),
            &ActionSet::holonomic(),
            &PathCostParams::default(),
            None,
            &quick(),
            &mut SearchStats::default(),
        )
        .unwrap();
        for w in path.waypoints().windows(2) {
            assert!(env.segment_clearance(w[0], w[1]) >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn budget_exhaustion_reuses_previous_path_or_fails() {
        let env = build_scenario(ScenarioId::OpenField);
        let params = PathCostParams { max_expansions: 3, ..PathCostParams::default() };
        let run = |prev: Option<&PlannedPath>| {
            plan_path(
                &env,
                Vec2::new(20.0, 20.0),
                0.0,
                env.vehicle_goal,
                &PedPotentialField::default(),
                &ActionSet::holonomic(),
                &params,
                prev,
                &quick(),
                &mut SearchStats::default(),
            )
        };
        assert!(matches!(run(None), Err(Error::NoPath)));
        let prev = PlannedPath::new(
            vec![Vec2::new(10.0, 10.0), Vec2::new(50.0, 50.0), Vec2::new(90.0, 90.0)],
            vec![45f64.to_radians(); 2],
            0.0,
        );
        let reused = run(Some(&prev)).unwrap();
        assert_eq!(reused.waypoints()[0], Vec2::new(20.0, 20.0));
        assert_eq!(*reused.waypoints().last().unwrap(), Vec2::new(90.0, 90.0));
    }

    #[test]
    fn potential_field_modes() {
        let goals = vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0), Vec2::new(100.0, 100.0), Vec2::new(0.0, 100.0)];
        let peds = vec![
            PedestrianState { pos: Vec2::new(50.0, 50.0), speed: 1.0, goal: goals[0] },
            PedestrianState { pos: Vec2::new(20.0, 80.0), speed: 1.0, goal: goals[0] },
        ];
        let belief = IntentionBelief { goals: goals.clone(), rows: vec![vec![0.25; 4], vec![0.97, 0.01, 0.01, 0.01]] };
        let field = PedPotentialField::from_belief(&peds, &belief, 10.0);
        let spread: Vec<_> = field.disks.iter().filter(|d| d.owner == 0).collect();
        assert_eq!(spread.len(), 1);
        assert!((spread[0].radius - 4.0).abs() < 1e-12);
        assert_eq!(field.disks.iter().filter(|d| d.owner == 1).count(), 6);
        assert_eq!(field.cost(Vec2::new(50.0, 50.0)), 10.0);
        assert_eq!(field.cost(Vec2::new(60.0, 50.0)), 0.0);
        // Along the predicted path toward (0, 0).
        assert!(field.cost(Vec2::new(19.3, 77.0)) > 0.0);
    }

    #[test]
    fn path_queries() {
        let path = PlannedPath::new(
            vec![Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(2.0, 2.0)],
            vec![0.0, std::f64::consts::FRAC_PI_2],
            0.0,
        );
        assert_eq!(path.length(), 4.0);
        assert_eq!(path.point_at(3.0), Vec2::new(2.0, 1.0));
        assert_eq!(path.heading_at(0.5), Some(0.0));
        assert_eq!(path.heading_at(2.5), Some(std::f64::consts::FRAC_PI_2));
        assert!((path.project(Vec2::new(3.0, 1.0)) - 3.0).abs() < 1e-12);
    }
}
