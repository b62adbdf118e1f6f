//! Ground-truth crowd world and the plan-act-observe loop.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::astar::PlannedPath;
use crate::belief::{BeliefParams, IntentionBelief};
use crate::despot::SearchStats;
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use crate::planner::{follow_path, PlanInput, Planner};
use crate::pomdp::{
    advance_vehicle, step_pedestrians, DynamicsParams, NavAction, PedestrianState, RewardParams, VehicleState,
};
use crate::rng::derive_seed;
use crate::world::{nearest_pedestrians, Environment};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub population: usize,
    /// Pedestrians handed to the planner, nearest first.
    pub tracked: usize,
    pub max_steps: usize,
    pub safety_radius: f64,
    pub ped_speed: f64,
    /// No pedestrian starts closer than this to the vehicle (m).
    pub start_clearance: f64,
    pub record_trajectory: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            population: 200,
            tracked: 6,
            max_steps: 600,
            safety_radius: 1.0,
            ped_speed: 1.0,
            start_clearance: 5.0,
            record_trajectory: true,
        }
    }
}

/// Moves the whole population one step. Implementations must draw randomness only
/// from `rng` so that paired runs see the same crowd.
pub trait PedestrianModel {
    fn advance(&self, peds: &[PedestrianState], dt: f64, rng: &mut dyn RngCore) -> Vec<PedestrianState>;
}

/// Walks straight at the goal with bounded speed noise, as in the planning model.
#[derive(Debug, Clone, Copy)]
pub struct GoalWalker {
    pub dynamics: DynamicsParams,
}

impl PedestrianModel for GoalWalker {
    fn advance(&self, peds: &[PedestrianState], dt: f64, rng: &mut dyn RngCore) -> Vec<PedestrianState> {
        step_pedestrians(peds, dt, &self.dynamics, rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub vehicle: VehicleState,
    pub pedestrians: Vec<PedestrianState>,
    pub time: f64,
    pub step: usize,
    pub seed: u64,
}

/// Unsafe when the vehicle is moving within `radius` of any pedestrian.
pub fn safety_check(w: &WorldState, radius: f64) -> bool {
    w.vehicle.speed > 0.0 && w.pedestrians.iter().any(|p| p.pos.dist(w.vehicle.pos) < radius)
}

fn random_point<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> Vec2 {
    Vec2::new(rng.random::<f64>() * env.width, rng.random::<f64>() * env.height)
}

/// Point on the field boundary, uniform by length, with the goals on the opposite edge.
fn edge_spawn<R: Rng + ?Sized>(env: &Environment, rng: &mut R) -> (Vec2, Vec2) {
    let (w, h) = (env.width, env.height);
    let u = rng.random::<f64>() * 2.0 * (w + h);
    let (pos, opposite): (Vec2, fn(Vec2, f64, f64) -> bool) = if u < w {
        (Vec2::new(u, 0.0), |g, _, h| (g.y - h).abs() < 1e-9)
    } else if u < 2.0 * w {
        (Vec2::new(u - w, h), |g, _, _| g.y.abs() < 1e-9)
    } else if u < 2.0 * w + h {
        (Vec2::new(0.0, u - 2.0 * w), |g, w, _| (g.x - w).abs() < 1e-9)
    } else {
        (Vec2::new(w, u - 2.0 * w - h), |g, _, _| g.x.abs() < 1e-9)
    };
    let goals: Vec<Vec2> = env.pedestrian_goals.iter().copied().filter(|&g| opposite(g, w, h)).collect();
    let pool = if goals.is_empty() { env.pedestrian_goals.clone() } else { goals };
    let goal = pool[rng.random_range(0..pool.len())];
    (pos, goal)
}

/// Initial population: uniform positions away from the vehicle, uniform goals.
pub fn spawn_population<R: Rng + ?Sized>(env: &Environment, cfg: &SimConfig, rng: &mut R) -> Vec<PedestrianState> {
    (0..cfg.population)
        .map(|_| {
            let pos = loop {
                let p = random_point(env, rng);
                if p.dist(env.vehicle_start) >= cfg.start_clearance {
                    break p;
                }
            };
            let goal = env.pedestrian_goals[rng.random_range(0..env.pedestrian_goals.len())];
            PedestrianState { pos, speed: cfg.ped_speed, goal }
        })
        .collect()
}

pub fn initial_world(env: &Environment, cfg: &SimConfig, seed: u64, rng: &mut ChaCha8Rng) -> WorldState {
    let pedestrians = spawn_population(env, cfg, rng);
    WorldState {
        vehicle: VehicleState { pos: env.vehicle_start, heading: 0.0, speed: 0.0, goal: env.vehicle_goal },
        pedestrians,
        time: 0.0,
        step: 0,
        seed,
    }
}

/// Control applied to the vehicle: an extended action, or a speed action along a path.
#[derive(Debug, Clone, Copy)]
pub struct Control<'a> {
    pub action: NavAction,
    pub path: Option<&'a PlannedPath>,
}

/// Indices of pedestrians removed this step and the number spawned to replace them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Turnover {
    pub departed: Vec<usize>,
    pub spawned: usize,
}

/// Advances the world by one step. Pedestrians that reach their goal are removed and
/// replaced at the end of the list by new ones entering from a random edge.
#[allow(clippy::too_many_arguments)]
pub fn step_world(
    env: &Environment,
    w: &mut WorldState,
    control: Control<'_>,
    model: &dyn PedestrianModel,
    rng: &mut ChaCha8Rng,
    params: &RewardParams,
    dynamics: &DynamicsParams,
    ped_speed: f64,
) -> Turnover {
    let mut vehicle = match (control.path, control.action) {
        (Some(path), a) => {
            let speed = match a {
                NavAction::SuddenBrake => 0.0,
                NavAction::Steer { dspeed, .. } => (w.vehicle.speed + f64::from(dspeed)).clamp(0.0, params.v_max),
            };
            follow_path(&w.vehicle, path, path.project(w.vehicle.pos), speed, params.dt).0
        }
        (None, a) => advance_vehicle(&w.vehicle, a, params, dynamics),
    };
    vehicle.pos = env.clamp(vehicle.pos);
    w.vehicle = vehicle;
    let moved = model.advance(&w.pedestrians, params.dt, rng);
    let mut departed = Vec::new();
    let mut kept = Vec::with_capacity(moved.len());
    for (i, p) in moved.into_iter().enumerate() {
        if p.pos.dist(p.goal) <= 1e-9 {
            departed.push(i);
        } else {
            kept.push(p);
        }
    }
    for _ in 0..departed.len() {
        let (pos, goal) = edge_spawn(env, rng);
        kept.push(PedestrianState { pos, speed: ped_speed, goal });
    }
    w.pedestrians = kept;
    w.step += 1;
    w.time = w.step as f64 * params.dt;
    Turnover { spawned: departed.len(), departed }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "GOAL")]
    Goal,
    #[serde(rename = "TIMEOUT")]
    Timeout,
    #[serde(rename = "PLANNER_FAILURE")]
    PlannerFailure,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Goal => "GOAL",
            Outcome::Timeout => "TIMEOUT",
            Outcome::PlannerFailure => "PLANNER_FAILURE",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GOAL" => Ok(Outcome::Goal),
            "TIMEOUT" => Ok(Outcome::Timeout),
            "PLANNER_FAILURE" => Ok(Outcome::PlannerFailure),
            _ => Err(Error::Config(format!("unknown outcome {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub action: Option<String>,
    pub pedestrians: Vec<[f64; 2]>,
    /// Tracked pedestrian indices and their belief rows.
    pub tracked: Vec<usize>,
    pub beliefs: Vec<Vec<f64>>,
    /// Search that chose `action`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub search: Option<SearchStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub travel_time_s: f64,
    pub sb_count: usize,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
    pub outcome: Outcome,
    pub steps: usize,
    /// Closest approach of a moving vehicle to any pedestrian (m).
    pub min_moving_distance: f64,
    pub failure: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trajectory: Vec<StepRecord>,
}

impl EpisodeResult {
    /// Trajectory as JSON lines, one record per step.
    pub fn write_trajectory<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.trajectory {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn record(
    w: &WorldState,
    action: Option<NavAction>,
    search: Option<&SearchStats>,
    tracked: &[usize],
    belief: &IntentionBelief,
) -> StepRecord {
    StepRecord {
        time: w.time,
        x: w.vehicle.pos.x,
        y: w.vehicle.pos.y,
        heading: w.vehicle.heading,
        speed: w.vehicle.speed,
        action: action.map(|a| a.to_string()),
        pedestrians: w.pedestrians.iter().map(|p| [p.pos.x, p.pos.y]).collect(),
        tracked: tracked.to_vec(),
        beliefs: tracked.iter().map(|&i| belief.rows[i].clone()).collect(),
        search: search.cloned(),
    }
}

/// Runs one episode. The crowd is driven by its own random stream derived from
/// `seed`, independent of the planner, so equal seeds give equal crowds.
pub fn run_episode(
    env: &Environment,
    planner: &mut Planner,
    sim: &SimConfig,
    belief_params: &BeliefParams,
    model: &dyn PedestrianModel,
    seed: u64,
) -> EpisodeResult {
    let params = planner.cfg.reward;
    let dynamics = planner.cfg.dynamics;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let mut w = initial_world(env, sim, seed, &mut rng);
    let mut belief = IntentionBelief::uniform(env.pedestrian_goals.clone(), w.pedestrians.len());
    let mut result = EpisodeResult {
        travel_time_s: 0.0,
        sb_count: 0,
        is_unsafe: false,
        outcome: Outcome::Timeout,
        steps: 0,
        min_moving_distance: f64::INFINITY,
        failure: None,
        trajectory: Vec::new(),
    };
    let mut tracked = nearest_pedestrians(w.vehicle.pos, w.pedestrians.iter().map(|p| p.pos), sim.tracked);
    if sim.record_trajectory {
        result.trajectory.push(record(&w, None, None, &tracked, &belief));
    }
    loop {
        if w.vehicle.pos.dist(w.vehicle.goal) <= params.d_goal {
            result.outcome = Outcome::Goal;
            break;
        }
        if w.step >= sim.max_steps {
            result.outcome = Outcome::Timeout;
            break;
        }
        let input = PlanInput {
            vehicle: w.vehicle,
            pedestrians: tracked
                .iter()
                .map(|&i| PedestrianState { goal: w.pedestrians[i].pos, ..w.pedestrians[i] })
                .collect(),
            belief: belief.subset(&tracked),
            seed: derive_seed(seed, w.step as u64, 2),
        };
        let decision = match planner.plan(&input) {
            Ok(d) => d,
            Err(e) => {
                result.outcome = Outcome::PlannerFailure;
                result.failure = Some(e.to_string());
                break;
            }
        };
        let Some(action) = decision.action else {
            result.outcome = Outcome::PlannerFailure;
            result.failure = Some("no action".into());
            break;
        };
        if action.is_sudden_brake() {
            result.sb_count += 1;
        }
        let prev: Vec<Vec2> = w.pedestrians.iter().map(|p| p.pos).collect();
        let control = Control { action, path: decision.path.as_ref() };
        let turnover = step_world(env, &mut w, control, model, &mut rng, &params, &dynamics, sim.ped_speed);
        // Beliefs see every pedestrian's move before departures are dropped.
        let mut next: Vec<Vec2> = Vec::with_capacity(prev.len());
        let mut survivors = w.pedestrians.iter().map(|p| p.pos);
        for (i, &p) in prev.iter().enumerate() {
            if turnover.departed.binary_search(&i).is_ok() {
                next.push(p);
            } else {
                next.push(survivors.next().expect("survivor count"));
            }
        }
        belief.update(&prev, &next, belief_params);
        belief.handle_population_change(&turnover.departed, turnover.spawned);

        if w.vehicle.speed > 0.0 {
            let d = w.pedestrians.iter().map(|p| p.pos.dist(w.vehicle.pos)).fold(f64::INFINITY, f64::min);
            result.min_moving_distance = result.min_moving_distance.min(d);
        }
        if safety_check(&w, sim.safety_radius) {
            result.is_unsafe = true;
        }
        tracked = nearest_pedestrians(w.vehicle.pos, w.pedestrians.iter().map(|p| p.pos), sim.tracked);
        if sim.record_trajectory {
            result.trajectory.push(record(&w, Some(action), Some(&decision.search), &tracked, &belief));
        }
    }
    result.steps = w.step;
    result.travel_time_s = w.time;
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{PlannerConfig, PlannerKind};
    use crate::world::{build_scenario, ScenarioId};

    fn quiet() -> GoalWalker {
        GoalWalker { dynamics: DynamicsParams { ped_noise_sigma: 0.0, ..DynamicsParams::default() } }
    }

    fn world(peds: Vec<PedestrianState>, speed: f64) -> WorldState {
        WorldState {
            vehicle: VehicleState { pos: Vec2::new(50.0, 50.0), heading: 0.0, speed, goal: Vec2::new(90.0, 90.0) },
            pedestrians: peds,
            time: 0.0,
            step: 0,
            seed: 0,
        }
    }

    #[test]
    fn safety_thresholds() {
        let at = |d: f64| PedestrianState { pos: Vec2::new(50.0 + d, 50.0), speed: 1.0, goal: Vec2::new(0.0, 0.0) };
        assert!(!safety_check(&world(vec![at(0.2)], 0.0), 1.0));
        assert!(safety_check(&world(vec![at(0.99)], 1.0), 1.0));
        assert!(!safety_check(&world(vec![at(1.01)], 1.0), 1.0));
    }

    #[test]
    fn pedestrian_at_goal_respawns_on_edge_with_opposite_goal() {
        let env = build_scenario(ScenarioId::OpenField);
        let near_goal = PedestrianState { pos: Vec2::new(0.3, 0.0), speed: 1.0, goal: Vec2::new(0.0, 0.0) };
        let other = PedestrianState { pos: Vec2::new(40.0, 40.0), speed: 1.0, goal: Vec2::new(100.0, 100.0) };
        let mut w = world(vec![near_goal, other], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = RewardParams::default();
        let control = Control { action: NavAction::steer(0.0, 0), path: None };
        for _ in 0..50 {
            let t = step_world(&env, &mut w, control, &quiet(), &mut rng, &p, &DynamicsParams::default(), 1.0);
            assert_eq!(w.pedestrians.len(), 2);
            for &i in &t.departed {
                assert!(i < 2);
            }
        }
        // The first pedestrian departed on the first step; check every fresh spawn.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let (pos, goal) = edge_spawn(&env, &mut rng);
            let on = |a: f64, b: f64| (a - b).abs() < 1e-9;
            if on(pos.y, 0.0) {
                assert!(on(goal.y, 100.0));
            } else if on(pos.y, 100.0) {
                assert!(on(goal.y, 0.0));
            } else if on(pos.x, 0.0) {
                assert!(on(goal.x, 100.0));
            } else {
                assert!(on(pos.x, 100.0) && on(goal.x, 0.0));
            }
        }
    }

    #[test]
    fn departed_pedestrian_is_replaced() {
        let env = build_scenario(ScenarioId::OpenField);
        let near_goal = PedestrianState { pos: Vec2::new(0.3, 0.0), speed: 1.0, goal: Vec2::new(0.0, 0.0) };
        let mut w = world(vec![near_goal], 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let control = Control { action: NavAction::steer(0.0, 0), path: None };
        let t = step_world(
            &env,
            &mut w,
            control,
            &quiet(),
            &mut rng,
            &RewardParams::default(),
            &DynamicsParams::default(),
            1.0,
        );
        assert_eq!(t, Turnover { departed: vec![0], spawned: 1 });
        let p = w.pedestrians[0].pos;
        assert!(p.x == 0.0 || p.y == 0.0 || p.x == 100.0 || p.y == 100.0);
    }

    #[test]
    fn stationary_vehicle_stays_put() {
        let env = build_scenario(ScenarioId::OpenField);
        let mut w = world(vec![], 0.0);
        let before = w.vehicle;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let control = Control { action: NavAction::steer(0.0, 0), path: None };
        step_world(
            &env,
            &mut w,
            control,
            &quiet(),
            &mut rng,
            &RewardParams::default(),
            &DynamicsParams::default(),
            1.0,
        );
        assert_eq!(w.vehicle, before);
    }

    #[test]
    fn start_at_goal_finishes_immediately() {
        let mut env = build_scenario(ScenarioId::OpenField);
        env.vehicle_start = env.vehicle_goal + Vec2::new(0.5, 0.0);
        let cfg = PlannerConfig::default().with_iteration_caps(5, 5_000);
        let mut planner = Planner::new(PlannerKind::EsStraight, env.clone(), cfg, 0).unwrap();
        let sim = SimConfig { population: 10, ..SimConfig::default() };
        let r =
            run_episode(&env, &mut planner, &sim, &BeliefParams::default(), &GoalWalker { dynamics: cfg.dynamics }, 3);
        assert_eq!(r.outcome, Outcome::Goal);
        assert_eq!(r.travel_time_s, 0.0);
        assert_eq!(r.sb_count, 0);
    }

    #[test]
    fn paired_seeds_share_the_crowd() {
        let env = build_scenario(ScenarioId::OpenField);
        let cfg = PlannerConfig::default().with_iteration_caps(3, 3_000);
        let sim = SimConfig { population: 30, max_steps: 6, ..SimConfig::default() };
        let walker = GoalWalker { dynamics: cfg.dynamics };
        let mut runs = Vec::new();
        for kind in [PlannerKind::LsAstar, PlannerKind::EsStraight] {
            let mut planner = Planner::new(kind, env.clone(), cfg, 4).unwrap();
            runs.push(run_episode(&env, &mut planner, &sim, &BeliefParams::default(), &walker, 4));
        }
        for (a, b) in runs[0].trajectory.iter().zip(&runs[1].trajectory) {
            assert_eq!(a.pedestrians, b.pedestrians);
        }
        assert_eq!(runs[0].trajectory.len(), 7);
    }
}
