//! The planners compared in experiments: the extended-space search with different
//! roll-out sources, and the baseline that plans a hybrid A* path and searches over
//! speed only.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::astar::{plan_path, ActionSet, PathCostParams, PedPotentialField, PlannedPath, SearchStats as PathStats};
use crate::belief::{sample_scenarios, IntentionBelief};
use crate::budget::Budget;
use crate::despot::{plan, Particle, SearchModel, SearchStats, SolverConfig, Step};
use crate::error::{Error, Result};
use crate::fmm::{solve_environment, FmmParams, TravelTimeGrid};
use crate::pomdp::{
    advance_in_place, finish_transition, generative_step, legal_actions, DynamicsParams, NavAction, NavObservation,
    PedestrianState, PomdpState, RewardParams, VehicleState,
};
use crate::prm::{build_roadmap, PrmParams, Roadmap};
use crate::rng::{derive_seed, stream};
use crate::rollout::{
    cost_to_go, delta_ro, optimistic_value, reactive_speed, rollout_state, PathSource, RolloutConfig,
};
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PlannerKind {
    #[serde(rename = "LS_ASTAR")]
    LsAstar,
    #[serde(rename = "ES_FMM")]
    EsFmm,
    #[serde(rename = "ES_PRM")]
    EsPrm,
    #[serde(rename = "ES_NHV_STRAIGHT")]
    EsStraight,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 4] =
        [PlannerKind::LsAstar, PlannerKind::EsFmm, PlannerKind::EsPrm, PlannerKind::EsStraight];

    pub fn as_str(self) -> &'static str {
        match self {
            PlannerKind::LsAstar => "LS_ASTAR",
            PlannerKind::EsFmm => "ES_FMM",
            PlannerKind::EsPrm => "ES_PRM",
            PlannerKind::EsStraight => "ES_NHV_STRAIGHT",
        }
    }
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown planner {s:?}")))
    }
}

/// Everything a planner needs, with defaults matching the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Search over heading and speed.
    pub es_solver: SolverConfig,
    /// Speed search along the baseline path.
    pub ls_solver: SolverConfig,
    pub path: PathCostParams,
    pub rollout: RolloutConfig,
    pub reward: RewardParams,
    pub dynamics: DynamicsParams,
    pub fmm: FmmParams,
    pub prm: PrmParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            es_solver: SolverConfig::default(),
            ls_solver: SolverConfig { budget_s: 0.35, ..SolverConfig::default() },
            path: PathCostParams::default(),
            rollout: RolloutConfig::default(),
            reward: RewardParams::default(),
            dynamics: DynamicsParams::default(),
            fmm: FmmParams::default(),
            prm: PrmParams::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        self.es_solver.validate()?;
        self.ls_solver.validate()?;
        self.rollout.validate()?;
        self.reward.validate()
    }

    /// Caps every search by iterations instead of time, for reproducible runs.
    pub fn with_iteration_caps(mut self, search: usize, path_expansions: usize) -> Self {
        self.es_solver.max_iterations = Some(search);
        self.ls_solver.max_iterations = Some(search);
        self.path.max_expansions = path_expansions;
        self.path.budget_s = 0.0;
        self
    }

    /// Baseline reward: the path already keeps clear of obstacles.
    pub fn ls_reward(&self) -> RewardParams {
        RewardParams { r_obs: 0.0, ..self.reward }
    }
}

/// The extended-space model: actions change heading and speed.
pub struct EsModel<'a> {
    pub env: &'a Environment,
    pub src: PathSource<'a>,
    pub rollout: RolloutConfig,
    pub reward: RewardParams,
    pub dynamics: DynamicsParams,
}

impl SearchModel for EsModel<'_> {
    type State = PomdpState;
    type Action = NavAction;
    type Observation = NavObservation;

    fn actions(&self, s: &PomdpState) -> Vec<NavAction> {
        let next_speed = if s.vehicle.speed <= 0.0 { 1.0 } else { s.vehicle.speed };
        let ro = delta_ro(&self.src, &s.vehicle, next_speed, &self.reward, &self.dynamics);
        legal_actions(&s.vehicle, ro, self.reward.v_max)
    }

    fn step(&self, s: &PomdpState, a: NavAction, seed: u64, depth: usize) -> Result<Step<PomdpState, NavObservation>> {
        let mut rng = stream(seed, depth as u64);
        let t = generative_step(self.env, s, a, &mut rng, &self.reward, &self.dynamics)?;
        Ok(Step { next: t.next, observation: t.observation, reward: t.reward, terminal: t.terminal })
    }

    fn rollout(&self, s: &PomdpState, seed: u64, depth: usize) -> f64 {
        rollout_state(self.env, s, seed, &self.src, &self.rollout, &self.reward, &self.dynamics, depth)
    }

    fn upper(&self, s: &PomdpState) -> f64 {
        optimistic_value(s, &self.src, &self.reward)
    }

    fn discount(&self) -> f64 {
        self.reward.discount
    }
}

/// State for the speed-only model: the vehicle is tied to a path at arc length `arc`.
#[derive(Debug, Clone, PartialEq)]
pub struct LsState {
    pub state: PomdpState,
    pub arc: f64,
}

/// Speed actions along a fixed path: decelerate, hold, accelerate, or brake.
pub fn speed_actions(speed: f64, v_max: f64) -> Vec<NavAction> {
    let mut out = Vec::with_capacity(4);
    if speed > 0.0 {
        out.push(NavAction::steer(0.0, -1));
    }
    out.push(NavAction::steer(0.0, 0));
    if speed < v_max {
        out.push(NavAction::steer(0.0, 1));
    }
    if speed > 0.0 {
        out.push(NavAction::SuddenBrake);
    }
    out
}

/// Moves a vehicle `speed * dt` along `path` from arc length `arc`.
pub fn follow_path(vehicle: &VehicleState, path: &PlannedPath, arc: f64, speed: f64, dt: f64) -> (VehicleState, f64) {
    let arc = (arc + speed * dt).min(path.length());
    let heading = if speed > 0.0 { path.heading_at(arc).unwrap_or(vehicle.heading) } else { vehicle.heading };
    (VehicleState { pos: path.point_at(arc), heading, speed, goal: vehicle.goal }, arc)
}

pub struct LsModel<'a> {
    pub env: &'a Environment,
    pub path: &'a PlannedPath,
    pub rollout: RolloutConfig,
    pub reward: RewardParams,
    pub dynamics: DynamicsParams,
}

impl LsModel<'_> {
    /// Path length left to travel, plus any gap between the path end and the goal.
    fn remaining(&self, s: &LsState) -> f64 {
        let end = self.path.point_at(self.path.length());
        (self.path.length() - s.arc).max(0.0) + end.dist(s.state.vehicle.goal)
    }

    fn advance(&self, s: &LsState, a: NavAction, seed: u64, depth: usize) -> (LsState, NavObservation, f64, bool) {
        let speed = match a {
            NavAction::SuddenBrake => 0.0,
            NavAction::Steer { dspeed, .. } => {
                (s.state.vehicle.speed + f64::from(dspeed)).clamp(0.0, self.reward.v_max)
            }
        };
        let (vehicle, arc) = follow_path(&s.state.vehicle, self.path, s.arc, speed, self.reward.dt);
        let mut rng = stream(seed, depth as u64);
        let t = finish_transition(self.env, &s.state, vehicle, a, &mut rng, &self.reward, &self.dynamics);
        (LsState { state: t.next, arc }, t.observation, t.reward, t.terminal)
    }
}

impl SearchModel for LsModel<'_> {
    type State = LsState;
    type Action = NavAction;
    type Observation = NavObservation;

    fn actions(&self, s: &LsState) -> Vec<NavAction> {
        speed_actions(s.state.vehicle.speed, self.reward.v_max)
    }

    fn step(&self, s: &LsState, a: NavAction, seed: u64, depth: usize) -> Result<Step<LsState, NavObservation>> {
        if !self.actions(s).contains(&a) {
            return Err(Error::IllegalAction(a.to_string()));
        }
        let (next, observation, reward, terminal) = self.advance(s, a, seed, depth);
        Ok(Step { next, observation, reward, terminal })
    }

    fn rollout(&self, s: &LsState, seed: u64, depth: usize) -> f64 {
        let v = &s.state.vehicle;
        if v.pos.dist(v.goal) <= self.reward.d_goal {
            return self.reward.r_goal;
        }
        let mut cur = s.clone();
        let mut total = 0.0;
        let mut discount = 1.0;
        for t in 0..self.rollout.steps {
            let speed = cur.state.vehicle.speed;
            let target =
                reactive_speed(speed, cur.state.nearest_pedestrian_distance(), &self.rollout, self.reward.v_max);
            let a = NavAction::steer(0.0, (target - speed).round() as i8);
            let new_speed = (speed + f64::from((target - speed).round() as i8)).clamp(0.0, self.reward.v_max);
            let (vehicle, arc) = follow_path(&cur.state.vehicle, self.path, cur.arc, new_speed, self.reward.dt);
            cur.arc = arc;
            let mut rng = stream(seed, (depth + t) as u64);
            let (reward, terminal) =
                advance_in_place(self.env, &mut cur.state, vehicle, a, &mut rng, &self.reward, &self.dynamics);
            total += discount * reward;
            if terminal {
                return total;
            }
            discount *= self.reward.discount;
        }
        if self.rollout.cost_to_go && self.rollout.steps > 0 {
            total += discount * cost_to_go(self.remaining(&cur), &self.reward);
        }
        total
    }

    fn upper(&self, s: &LsState) -> f64 {
        let r = &self.reward;
        let v = &s.state.vehicle;
        if v.speed > 0.0 && s.state.nearest_pedestrian_distance() < r.d_ped {
            return r.r_ped;
        }
        let remaining = (self.remaining(s) - r.d_goal).max(0.0);
        let t = (remaining / (r.v_max * r.dt) - 1e-9).ceil().max(0.0);
        r.discount.powf(t) * r.r_goal
    }

    fn discount(&self) -> f64 {
        self.reward.discount
    }
}

/// What the vehicle sees at decision time: its own state and the tracked pedestrians
/// with their intention beliefs.
#[derive(Debug, Clone)]
pub struct PlanInput {
    pub vehicle: VehicleState,
    pub pedestrians: Vec<PedestrianState>,
    pub belief: IntentionBelief,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Decision {
    pub action: Option<NavAction>,
    /// Path to follow, for planners that control speed only.
    #[serde(skip)]
    pub path: Option<PlannedPath>,
    pub search: SearchStats,
    pub path_expansions: usize,
    pub reused_path: bool,
}

/// A planner with its precomputed path sources.
pub struct Planner {
    pub kind: PlannerKind,
    pub cfg: PlannerConfig,
    pub env: Environment,
    pub field: Option<TravelTimeGrid>,
    pub roadmap: Option<Roadmap>,
    last_path: Option<PlannedPath>,
}

impl Planner {
    pub fn new(kind: PlannerKind, env: Environment, cfg: PlannerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let field = match kind {
            PlannerKind::EsFmm => Some(solve_environment(&env, &cfg.fmm)?),
            _ => None,
        };
        let roadmap = match kind {
            PlannerKind::EsPrm => Some(build_roadmap(&env, &cfg.prm, derive_seed(seed, 0, 3))?),
            _ => None,
        };
        Ok(Self { kind, cfg, env, field, roadmap, last_path: None })
    }

    fn source(&self) -> PathSource<'_> {
        match (&self.field, &self.roadmap) {
            (Some(f), _) => PathSource::Fmm(f),
            (_, Some(r)) => PathSource::Prm(r),
            _ => PathSource::StraightLine,
        }
    }

    pub fn plan(&mut self, input: &PlanInput) -> Result<Decision> {
        let observed = PomdpState { vehicle: input.vehicle, pedestrians: input.pedestrians.clone() };
        match self.kind {
            PlannerKind::LsAstar => self.plan_ls(observed, input),
            _ => {
                let model = EsModel {
                    env: &self.env,
                    src: self.source(),
                    rollout: self.cfg.rollout,
                    reward: self.cfg.reward,
                    dynamics: self.cfg.dynamics,
                };
                let particles = scenario_particles(&input.belief, &observed, self.cfg.es_solver.scenarios, input.seed);
                let res = plan(&model, particles, &self.cfg.es_solver, false)?;
                Ok(Decision { action: Some(res.action), search: res.stats, ..Decision::default() })
            }
        }
    }

    fn plan_ls(&mut self, observed: PomdpState, input: &PlanInput) -> Result<Decision> {
        let field = PedPotentialField::from_belief(&input.pedestrians, &input.belief, self.cfg.path.c_ped);
        let budget = if self.cfg.path.budget_s > 0.0 {
            Budget::seconds(self.cfg.path.budget_s)
        } else {
            Budget::iterations(self.cfg.path.max_expansions)
        };
        let mut path_stats = PathStats::default();
        let path = plan_path(
            &self.env,
            input.vehicle.pos,
            input.vehicle.heading,
            input.vehicle.goal,
            &field,
            &ActionSet::for_vehicle(self.cfg.dynamics.vehicle),
            &self.cfg.path,
            self.last_path.as_ref(),
            &budget,
            &mut path_stats,
        )?;
        self.last_path = Some(path.clone());
        let model = LsModel {
            env: &self.env,
            path: &path,
            rollout: self.cfg.rollout,
            reward: self.cfg.ls_reward(),
            dynamics: self.cfg.dynamics,
        };
        let particles = scenario_particles(&input.belief, &observed, self.cfg.ls_solver.scenarios, input.seed)
            .into_iter()
            .map(|p| Particle { state: LsState { state: p.state, arc: 0.0 }, seed: p.seed })
            .collect();
        let res = plan(&model, particles, &self.cfg.ls_solver, false)?;
        Ok(Decision {
            action: Some(res.action),
            path: Some(path),
            search: res.stats,
            path_expansions: path_stats.expansions,
            reused_path: path_stats.reused_previous,
        })
    }
}

fn scenario_particles(
    belief: &IntentionBelief,
    observed: &PomdpState,
    k: usize,
    seed: u64,
) -> Vec<Particle<PomdpState>> {
    sample_scenarios(belief, observed, k, seed).into_iter().map(|p| Particle { state: p.state, seed: p.seed }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec2;
    use crate::world::{build_scenario, ScenarioId};

    #[test]
    fn planner_names_round_trip() {
        for k in PlannerKind::ALL {
            assert_eq!(k.as_str().parse::<PlannerKind>().unwrap(), k);
        }
        assert!("nope".parse::<PlannerKind>().is_err());
    }

    #[test]
    fn speed_action_sets() {
        assert_eq!(speed_actions(0.0, 2.0), vec![NavAction::steer(0.0, 0), NavAction::steer(0.0, 1)]);
        assert_eq!(speed_actions(1.0, 2.0).len(), 4);
        assert_eq!(
            speed_actions(2.0, 2.0),
            vec![NavAction::steer(0.0, -1), NavAction::steer(0.0, 0), NavAction::SuddenBrake]
        );
    }

    fn input(env: &Environment, peds: Vec<PedestrianState>) -> PlanInput {
        let n = peds.len();
        PlanInput {
            vehicle: VehicleState { pos: env.vehicle_start, heading: 0.0, speed: 0.0, goal: env.vehicle_goal },
            pedestrians: peds,
            belief: IntentionBelief::uniform(env.pedestrian_goals.clone(), n),
            seed: 11,
        }
    }

    #[test]
    fn empty_field_planners_head_for_goal() {
        let env = build_scenario(ScenarioId::OpenField);
        let cfg = PlannerConfig::default().with_iteration_caps(20, 20_000);
        for kind in PlannerKind::ALL {
            let mut p = Planner::new(kind, env.clone(), cfg, 1).unwrap();
            let d = p.plan(&input(&env, vec![])).unwrap();
            match d.action.unwrap() {
                NavAction::Steer { dspeed, .. } => assert_eq!(dspeed, 1, "{kind} did not accelerate"),
                NavAction::SuddenBrake => panic!("{kind} braked at rest"),
            }
        }
    }

    #[test]
    fn speed_search_stops_for_pedestrian_on_path() {
        let env = build_scenario(ScenarioId::OpenField);
        let cfg = PlannerConfig::default();
        let start = Vec2::new(20.0, 50.0);
        let path = PlannedPath::new(vec![start, Vec2::new(89.5, 50.0)], vec![0.0], 0.0);
        let model = LsModel {
            env: &env,
            path: &path,
            rollout: cfg.rollout,
            reward: cfg.ls_reward(),
            dynamics: DynamicsParams { ped_noise_sigma: 0.0, ..cfg.dynamics },
        };
        let ped = PedestrianState { pos: Vec2::new(21.9, 50.0), speed: 0.0, goal: Vec2::new(21.9, 50.0) };
        let state = PomdpState {
            vehicle: VehicleState { pos: start, heading: 0.0, speed: 2.0, goal: Vec2::new(90.0, 50.0) },
            pedestrians: vec![ped],
        };
        let particles = vec![Particle { state: LsState { state, arc: 0.0 }, seed: 3 }];
        let solver = SolverConfig { max_iterations: Some(200), ..cfg.ls_solver };
        let a = plan(&model, particles, &solver, false).unwrap().action;
        assert!(matches!(a, NavAction::SuddenBrake | NavAction::Steer { dspeed: -1, .. }), "{a}");
    }

    #[test]
    fn ls_planner_returns_path_and_speed_action() {
        let env = build_scenario(ScenarioId::Scattered);
        let cfg = PlannerConfig::default().with_iteration_caps(20, 20_000);
        let mut p = Planner::new(PlannerKind::LsAstar, env.clone(), cfg, 1).unwrap();
        let d = p.plan(&input(&env, vec![])).unwrap();
        let path = d.path.unwrap();
        assert!(path.waypoints().last().unwrap().dist(env.vehicle_goal) <= cfg.path.goal_tolerance);
        assert_eq!(d.action, Some(NavAction::steer(0.0, 1)));
    }
}
