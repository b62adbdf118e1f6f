//! The navigation POMDP: vehicle and pedestrian state, the extended (heading, speed)
//! action space, rewards, and the generative model used by every planner.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Vec2};
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VehicleKind {
    #[default]
    Holonomic,
    Dubins,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Holonomic => "HOLONOMIC",
            VehicleKind::Dubins => "DUBINS",
        }
    }
}

impl std::str::FromStr for VehicleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HOLONOMIC" => Ok(VehicleKind::Holonomic),
            "DUBINS" => Ok(VehicleKind::Dubins),
            other => Err(Error::Config(format!("unknown vehicle type `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub pos: Vec2,
    pub heading: f64,
    pub speed: f64,
    pub goal: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianState {
    pub pos: Vec2,
    pub speed: f64,
    pub goal: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PomdpState {
    pub vehicle: VehicleState,
    pub pedestrians: Vec<PedestrianState>,
}

impl PomdpState {
    /// Distance from the vehicle to the closest pedestrian, `+∞` when there are none.
    pub fn nearest_pedestrian_distance(&self) -> f64 {
        self.pedestrians.iter().map(|p| p.pos.dist(self.vehicle.pos)).fold(f64::INFINITY, f64::min)
    }
}

/// A control: change heading by `dtheta` radians and speed by `dspeed` m/s, or brake
/// to a standstill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NavAction {
    Steer { dtheta: f64, dspeed: i8 },
    SuddenBrake,
}

impl NavAction {
    pub const fn steer(dtheta: f64, dspeed: i8) -> Self {
        NavAction::Steer { dtheta, dspeed }
    }

    pub fn is_sudden_brake(&self) -> bool {
        matches!(self, NavAction::SuddenBrake)
    }
}

// Total order used for deterministic tie-breaking: steering actions by (dspeed, dtheta),
// sudden brake last.
impl Eq for NavAction {}

impl PartialOrd for NavAction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for NavAction {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (NavAction::SuddenBrake, NavAction::SuddenBrake) => Ordering::Equal,
            (NavAction::SuddenBrake, _) => Ordering::Greater,
            (_, NavAction::SuddenBrake) => Ordering::Less,
            (NavAction::Steer { dtheta: a, dspeed: sa }, NavAction::Steer { dtheta: b, dspeed: sb }) => {
                sa.cmp(sb).then(a.total_cmp(b))
            }
        }
    }
}

impl fmt::Display for NavAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NavAction::Steer { dtheta, dspeed } => {
                write!(f, "steer({:+.1}deg,{:+})", dtheta.to_degrees(), dspeed)
            }
            NavAction::SuddenBrake => f.write_str("SB"),
        }
    }
}

pub type Cell = (i32, i32);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NavObservation {
    pub vehicle: Cell,
    pub pedestrians: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub r_goal: f64,
    pub r_obs: f64,
    pub r_ped: f64,
    pub r_sb: f64,
    pub r_t: f64,
    pub d_goal: f64,
    pub d_obs: f64,
    pub d_ped: f64,
    pub v_max: f64,
    pub discount: f64,
    pub dt: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            r_goal: 1000.0,
            r_obs: -1000.0,
            r_ped: -1000.0,
            r_sb: -50.0,
            r_t: -1.0,
            d_goal: 1.0,
            d_obs: 1.0,
            d_ped: 1.0,
            v_max: 2.0,
            discount: 0.97,
            dt: 0.5,
        }
    }
}

impl RewardParams {
    pub fn for_vehicle(kind: VehicleKind) -> Self {
        match kind {
            VehicleKind::Holonomic => Self::default(),
            VehicleKind::Dubins => Self { v_max: 4.0, ..Self::default() },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_goal > 0.0
            && self.r_obs <= 0.0
            && self.r_ped < 0.0
            && self.r_sb < 0.0
            && self.r_t < 0.0
            && self.discount > 0.0
            && self.discount < 1.0
            && self.dt > 0.0
            && self.v_max > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("reward parameters violate sign or range constraints".into()))
        }
    }

    /// Low-speed penalty `(v - v_max) / v_max`.
    pub fn speed_penalty(&self, speed: f64) -> f64 {
        (speed - self.v_max) / self.v_max
    }
}

/// Vehicle geometry, pedestrian noise and observation resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynamicsParams {
    pub vehicle: VehicleKind,
    /// Dubins wheelbase (m).
    pub wheelbase: f64,
    /// Dubins steering limit (degrees).
    pub max_steer_deg: f64,
    pub ped_noise_sigma: f64,
    pub ped_noise_bound: f64,
    pub obs_cell: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            vehicle: VehicleKind::Holonomic,
            wheelbase: 1.0,
            max_steer_deg: 45.0,
            ped_noise_sigma: 0.1,
            ped_noise_bound: 0.3,
            obs_cell: 1.0,
        }
    }
}

impl DynamicsParams {
    /// Largest heading change a Dubins vehicle can make in one step at `speed`.
    pub fn max_heading_change(&self, speed: f64, dt: f64) -> f64 {
        match self.vehicle {
            VehicleKind::Holonomic => f64::INFINITY,
            VehicleKind::Dubins => speed * dt * self.max_steer_deg.to_radians().tan() / self.wheelbase,
        }
    }

    /// Steering angle that produces heading change `dtheta` over one step, saturated.
    pub fn steering_for(&self, dtheta: f64, speed: f64, dt: f64) -> f64 {
        let limit = self.max_steer_deg.to_radians();
        if speed <= 0.0 {
            return if dtheta == 0.0 { 0.0 } else { limit.copysign(dtheta) };
        }
        (dtheta * self.wheelbase / (speed * dt)).atan().clamp(-limit, limit)
    }

    /// Heading change over one step produced by steering angle `beta`.
    pub fn heading_change_for(&self, beta: f64, speed: f64, dt: f64) -> f64 {
        speed * dt * beta.tan() / self.wheelbase
    }
}

/// The seven fixed heading changes, -45° to 45° in 15° steps.
pub fn fixed_heading_changes() -> [f64; 7] {
    [-45.0f64, -30.0, -15.0, 0.0, 15.0, 30.0, 45.0].map(f64::to_radians)
}

/// Extended action set for the current vehicle state.
///
/// At rest: stay put, or accelerate while picking one of the seven fixed heading
/// changes or `delta_ro` (9 actions). Moving: accelerate or decelerate straight, hold
/// speed with one of the eight heading changes, or brake (11 actions). At `v_max` the
/// accelerate action is dropped.
pub fn legal_actions(vehicle: &VehicleState, delta_ro: f64, v_max: f64) -> Vec<NavAction> {
    let headings = fixed_heading_changes();
    let mut actions = Vec::with_capacity(11);
    if vehicle.speed <= 0.0 {
        actions.extend(headings.iter().map(|&d| NavAction::steer(d, 1)));
        actions.push(NavAction::steer(delta_ro, 1));
        actions.push(NavAction::steer(0.0, 0));
    } else {
        if vehicle.speed < v_max {
            actions.push(NavAction::steer(0.0, 1));
        }
        actions.push(NavAction::steer(0.0, -1));
        actions.extend(headings.iter().map(|&d| NavAction::steer(d, 0)));
        actions.push(NavAction::steer(delta_ro, 0));
        actions.push(NavAction::SuddenBrake);
    }
    actions
}

/// Checks an action against the structural rules of the extended action set. The
/// `delta_ro` slot admits any heading change, so only speed changes are constrained.
pub fn check_action(vehicle: &VehicleState, action: NavAction, v_max: f64) -> Result<()> {
    let legal = match action {
        NavAction::SuddenBrake => vehicle.speed > 0.0,
        NavAction::Steer { dtheta, dspeed } => {
            if vehicle.speed <= 0.0 {
                dspeed == 1 || (dspeed == 0 && dtheta == 0.0)
            } else {
                match dspeed {
                    1 => dtheta == 0.0 && vehicle.speed < v_max,
                    -1 => dtheta == 0.0,
                    0 => true,
                    _ => false,
                }
            }
        }
    };
    if legal {
        Ok(())
    } else {
        Err(Error::IllegalAction(action.to_string()))
    }
}

/// Applies a heading change and a new speed over one step.
pub fn apply_control(
    vehicle: &VehicleState,
    dtheta: f64,
    new_speed: f64,
    dt: f64,
    dynamics: &DynamicsParams,
) -> VehicleState {
    let mut next = *vehicle;
    next.speed = new_speed;
    match dynamics.vehicle {
        VehicleKind::Holonomic => {
            next.heading = wrap_angle(vehicle.heading + dtheta);
            next.pos = vehicle.pos + Vec2::from_heading(next.heading) * (new_speed * dt);
        }
        VehicleKind::Dubins => {
            if new_speed <= 0.0 {
                return next;
            }
            let limit = dynamics.max_heading_change(new_speed, dt);
            let turn = dtheta.clamp(-limit, limit);
            let theta = vehicle.heading;
            let arc = new_speed * dt;
            next.heading = wrap_angle(theta + turn);
            next.pos = if turn.abs() < 1e-12 {
                vehicle.pos + Vec2::from_heading(theta) * arc
            } else {
                let radius = arc / turn;
                vehicle.pos
                    + Vec2::new(
                        ((theta + turn).sin() - theta.sin()) * radius,
                        (theta.cos() - (theta + turn).cos()) * radius,
                    )
            };
        }
    }
    next
}

/// Vehicle transition for one of the extended actions.
pub fn advance_vehicle(
    vehicle: &VehicleState,
    action: NavAction,
    params: &RewardParams,
    dynamics: &DynamicsParams,
) -> VehicleState {
    match action {
        NavAction::SuddenBrake => VehicleState { speed: 0.0, ..*vehicle },
        NavAction::Steer { dtheta, dspeed } => {
            let speed = (vehicle.speed + f64::from(dspeed)).clamp(0.0, params.v_max);
            apply_control(vehicle, dtheta, speed, params.dt, dynamics)
        }
    }
}

/// Samples the bounded pedestrian motion noise (zero-mean Gaussian, resampled until
/// inside the bound).
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, sigma: f64, bound: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, sigma).expect("positive sigma");
    loop {
        let w: f64 = normal.sample(rng);
        if w.abs() <= bound {
            return w;
        }
    }
}

/// Moves a pedestrian `speed * dt + noise` toward its goal without overshooting it.
pub fn move_pedestrian(ped: &PedestrianState, dt: f64, noise: f64) -> PedestrianState {
    let to_goal = ped.goal - ped.pos;
    let remaining = to_goal.norm();
    let step = (ped.speed * dt + noise).max(0.0);
    let pos = if remaining <= step { ped.goal } else { ped.pos + to_goal * (step / remaining) };
    PedestrianState { pos, ..*ped }
}

pub fn step_pedestrians<R: Rng + ?Sized>(
    peds: &[PedestrianState],
    dt: f64,
    dynamics: &DynamicsParams,
    rng: &mut R,
) -> Vec<PedestrianState> {
    peds.iter()
        .map(|p| {
            let w = sample_noise(rng, dynamics.ped_noise_sigma, dynamics.ped_noise_bound);
            move_pedestrian(p, dt, w)
        })
        .collect()
}

/// Safety-relevant facts about a post-transition state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepEvents {
    pub at_goal: bool,
    pub pedestrian_collision: bool,
    pub obstacle_collision: bool,
}

impl StepEvents {
    pub fn terminal(&self) -> bool {
        self.at_goal || self.pedestrian_collision || self.obstacle_collision
    }
}

pub fn step_events(env: &Environment, state: &PomdpState, params: &RewardParams) -> StepEvents {
    let v = &state.vehicle;
    StepEvents {
        at_goal: v.pos.dist(v.goal) <= params.d_goal,
        pedestrian_collision: v.speed > 0.0 && state.nearest_pedestrian_distance() < params.d_ped,
        obstacle_collision: params.r_obs < 0.0 && env.obstacle_clearance(v.pos) < params.d_obs,
    }
}

/// Reward for the transition `s --a--> s'`; a sum of the independently applicable terms.
pub fn reward(env: &Environment, action: NavAction, next: &PomdpState, params: &RewardParams) -> f64 {
    reward_for_events(step_events(env, next, params), action, next.vehicle.speed, params)
}

pub fn reward_for_events(events: StepEvents, action: NavAction, speed: f64, params: &RewardParams) -> f64 {
    let mut r = params.r_t + params.speed_penalty(speed);
    if events.at_goal {
        r += params.r_goal;
    }
    if events.obstacle_collision {
        r += params.r_obs;
    }
    if events.pedestrian_collision {
        r += params.r_ped;
    }
    if action.is_sudden_brake() {
        r += params.r_sb;
    }
    r
}

fn cell_of(p: Vec2, cell: f64) -> Cell {
    ((p.x / cell).floor() as i32, (p.y / cell).floor() as i32)
}

/// Maps every position to the half-open grid cell containing it.
pub fn discretize_observation(state: &PomdpState, cell: f64) -> NavObservation {
    NavObservation {
        vehicle: cell_of(state.vehicle.pos, cell),
        pedestrians: state.pedestrians.iter().map(|p| cell_of(p.pos, cell)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub next: PomdpState,
    pub observation: NavObservation,
    pub reward: f64,
    pub terminal: bool,
}

/// Generative model `G(s, a) -> (s', o, r)` for the extended action space.
pub fn generative_step<R: Rng + ?Sized>(
    env: &Environment,
    state: &PomdpState,
    action: NavAction,
    rng: &mut R,
    params: &RewardParams,
    dynamics: &DynamicsParams,
) -> Result<Transition> {
    check_action(&state.vehicle, action, params.v_max)?;
    let mut vehicle = advance_vehicle(&state.vehicle, action, params, dynamics);
    vehicle.pos = env.clamp(vehicle.pos);
    Ok(finish_transition(env, state, vehicle, action, rng, params, dynamics))
}

/// Moves pedestrians, then scores the transition given an already-advanced vehicle.
pub fn finish_transition<R: Rng + ?Sized>(
    env: &Environment,
    state: &PomdpState,
    vehicle: VehicleState,
    action: NavAction,
    rng: &mut R,
    params: &RewardParams,
    dynamics: &DynamicsParams,
) -> Transition {
    let mut next = state.clone();
    let (reward, terminal) = advance_in_place(env, &mut next, vehicle, action, rng, params, dynamics);
    Transition { observation: discretize_observation(&next, dynamics.obs_cell), next, reward, terminal }
}

/// [`finish_transition`] without the copy or the observation: updates `state` and
/// returns the reward and whether the new state is terminal.
pub fn advance_in_place<R: Rng + ?Sized>(
    env: &Environment,
    state: &mut PomdpState,
    vehicle: VehicleState,
    action: NavAction,
    rng: &mut R,
    params: &RewardParams,
    dynamics: &DynamicsParams,
) -> (f64, bool) {
    state.vehicle = vehicle;
    for p in state.pedestrians.iter_mut() {
        let w = sample_noise(rng, dynamics.ped_noise_sigma, dynamics.ped_noise_bound);
        *p = move_pedestrian(p, params.dt, w);
    }
    let events = step_events(env, state, params);
    (reward_for_events(events, action, state.vehicle.speed, params), events.terminal())
}
