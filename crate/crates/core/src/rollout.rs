//! Default policies for the belief-tree search: headings come from a path source,
//! speed from a reactive controller that only looks at the nearest pedestrian.

use serde::{Deserialize, Serialize};

use crate::astar::PlannedPath;
use crate::belief::ScenarioParticle;
use crate::error::{Error, Result};
use crate::fmm::TravelTimeGrid;
use crate::geometry::wrap_angle;
use crate::pomdp::{
    advance_in_place, apply_control, DynamicsParams, NavAction, PomdpState, RewardParams, VehicleKind, VehicleState,
};
use crate::prm::Roadmap;
use crate::rng::stream;
use crate::world::Environment;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RolloutConfig {
    pub d_near: f64,
    pub d_far: f64,
    /// Maximum roll-out length in steps.
    pub steps: usize,
    /// Close truncated roll-outs with the full-speed value of the remaining path.
    pub cost_to_go: bool,
}

impl Default for RolloutConfig {
    // With 200 pedestrians on a 100 m field the nearest one is usually 3-4 m away;
    // wider bands keep roll-outs crawling and the search learns to detour instead.
    fn default() -> Self {
        Self { d_near: 2.0, d_far: 4.0, steps: 40, cost_to_go: true }
    }
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_near > 0.0 && self.d_near < self.d_far && self.steps > 0 {
            Ok(())
        } else {
            Err(Error::Config("roll-out requires 0 < d_near < d_far and steps > 0".into()))
        }
    }
}

/// Where roll-out headings come from.
#[derive(Debug, Clone, Copy)]
pub enum PathSource<'a> {
    Fmm(&'a TravelTimeGrid),
    Prm(&'a Roadmap),
    Path(&'a PlannedPath),
    /// Head straight for the goal.
    StraightLine,
}

impl PathSource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PathSource::Fmm(_) => "fmm",
            PathSource::Prm(_) => "prm",
            PathSource::Path(_) => "astar_path",
            PathSource::StraightLine => "straight_line",
        }
    }

    /// Desired heading at the vehicle's position. `Ok(None)` means the source has
    /// nothing more to say (the vehicle sits on its target).
    pub fn heading(&self, vehicle: &VehicleState) -> Result<Option<f64>> {
        match self {
            PathSource::Fmm(grid) => grid.next_heading(vehicle.pos, 1.0),
            PathSource::Prm(roadmap) => roadmap.next_heading(vehicle.pos),
            PathSource::Path(path) => Ok(path.heading_at(path.project(vehicle.pos))),
            PathSource::StraightLine => Ok(if vehicle.pos.dist(vehicle.goal) > 1e-9 {
                Some(vehicle.pos.heading_to(vehicle.goal))
            } else {
                None
            }),
        }
    }

    /// Remaining path length to the goal from `vehicle`.
    pub fn path_length(&self, vehicle: &VehicleState) -> f64 {
        match self {
            PathSource::Fmm(grid) => grid.time_at(vehicle.pos),
            PathSource::Prm(roadmap) => roadmap.path_length_from(vehicle.pos),
            PathSource::Path(path) => (path.length() - path.project(vehicle.pos)).max(0.0),
            PathSource::StraightLine => vehicle.pos.dist(vehicle.goal),
        }
    }
}

/// Speed up when nobody is within `d_far`, slow down when someone is within `d_near`.
pub fn reactive_speed(v: f64, d_min: f64, cfg: &RolloutConfig, v_max: f64) -> f64 {
    if d_min > cfg.d_far {
        (v + 1.0).min(v_max)
    } else if d_min < cfg.d_near {
        (v - 1.0).max(0.0)
    } else {
        v
    }
}

/// Heading change that follows the path source at the vehicle's position, for a step
/// taken at `next_speed`. For the Dubins vehicle the change is mapped to a steering
/// angle and back, so it saturates at the steering limit. Falls back to `0` when the
/// source has no heading.
pub fn delta_ro(
    src: &PathSource<'_>,
    vehicle: &VehicleState,
    next_speed: f64,
    params: &RewardParams,
    dynamics: &DynamicsParams,
) -> f64 {
    let desired = match src.heading(vehicle) {
        Ok(Some(h)) => h,
        _ => return 0.0,
    };
    let dtheta = wrap_angle(desired - vehicle.heading);
    match dynamics.vehicle {
        VehicleKind::Holonomic => dtheta,
        VehicleKind::Dubins => {
            if next_speed <= 0.0 {
                return 0.0;
            }
            let beta = dynamics.steering_for(dtheta, next_speed, params.dt);
            dynamics.heading_change_for(beta, next_speed, params.dt)
        }
    }
}

/// Discounted return of the roll-out policy from `particle`, which sits `depth` steps
/// below the root. Random outcomes at absolute depth `d` come from the particle's
/// stream for `d`, as in the tree.
#[allow(clippy::too_many_arguments)]
pub fn rollout_value(
    env: &Environment,
    particle: &ScenarioParticle,
    src: &PathSource<'_>,
    cfg: &RolloutConfig,
    params: &RewardParams,
    dynamics: &DynamicsParams,
    depth: usize,
) -> f64 {
    rollout_state(env, &particle.state, particle.seed, src, cfg, params, dynamics, depth)
}

#[allow(clippy::too_many_arguments)]
pub fn rollout_state(
    env: &Environment,
    start: &PomdpState,
    seed: u64,
    src: &PathSource<'_>,
    cfg: &RolloutConfig,
    params: &RewardParams,
    dynamics: &DynamicsParams,
    depth: usize,
) -> f64 {
    if start.vehicle.pos.dist(start.vehicle.goal) <= params.d_goal {
        return params.r_goal;
    }
    let mut state = start.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    for t in 0..cfg.steps {
        let v = &state.vehicle;
        let speed = reactive_speed(v.speed, state.nearest_pedestrian_distance(), cfg, params.v_max);
        let desired = match src.heading(v) {
            Ok(Some(h)) => h,
            Ok(None) => v.pos.heading_to(v.goal),
            Err(_) => return total,
        };
        let dtheta = wrap_angle(desired - v.heading);
        let mut next = apply_control(v, dtheta, speed, params.dt, dynamics);
        next.pos = env.clamp(next.pos);
        let action = NavAction::steer(dtheta, (speed - v.speed).round() as i8);
        let mut rng = stream(seed, (depth + t) as u64);
        let (reward, terminal) = advance_in_place(env, &mut state, next, action, &mut rng, params, dynamics);
        total += discount * reward;
        if terminal {
            return total;
        }
        discount *= params.discount;
    }
    if cfg.cost_to_go && cfg.steps > 0 {
        total += discount * cost_to_go(src.path_length(&state.vehicle), params);
    }
    total
}

/// Value of covering `length` more meters at full speed with nobody in the way:
/// a time penalty per step, then the goal reward on the arrival step. The step count
/// is kept fractional so that shorter remaining paths always score higher.
pub fn cost_to_go(length: f64, params: &RewardParams) -> f64 {
    let remaining = (length - params.d_goal).max(0.0);
    if !remaining.is_finite() {
        return 0.0;
    }
    let steps = (remaining / (params.v_max * params.dt)).max(1.0);
    let g = params.discount;
    params.r_t * (1.0 - g.powf(steps)) / (1.0 - g) + g.powf(steps - 1.0) * params.r_goal
}

/// Optimistic value of a state: `R_ped` if the vehicle is moving within `D_ped` of a
/// pedestrian, otherwise `γ^t R_goal` where `t` is the number of steps needed at full
/// speed to cover the remaining path.
pub fn optimistic_value(state: &PomdpState, src: &PathSource<'_>, params: &RewardParams) -> f64 {
    let v = &state.vehicle;
    if v.speed > 0.0 && state.nearest_pedestrian_distance() < params.d_ped {
        return params.r_ped;
    }
    let remaining = (src.path_length(v) - params.d_goal).max(0.0);
    if !remaining.is_finite() {
        return 0.0;
    }
    let t = (remaining / (params.v_max * params.dt) - 1e-9).ceil().max(0.0);
    params.discount.powf(t) * params.r_goal
}
