//! Browser bindings. Every call returns a JSON string the page parses and draws.
//! Searches run under iteration caps: there is no wall clock on wasm32.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use crowdnav::config::Config;
use crowdnav::fmm::solve_environment;
use crowdnav::planner::PlannerKind;
use crowdnav::prm::{build_roadmap as build, PrmParams};
use crowdnav::simulator::SimConfig;
use crowdnav::world::{build_scenario, Environment, ScenarioId};

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn environment(scenario: &str) -> Result<Environment, JsError> {
    Ok(build_scenario(scenario.parse::<ScenarioId>().map_err(err)?))
}

fn env_json(env: &Environment) -> Value {
    json!({
        "name": env.name,
        "width": env.width,
        "height": env.height,
        "start": [env.vehicle_start.x, env.vehicle_start.y],
        "goal": [env.vehicle_goal.x, env.vehicle_goal.y],
        "obstacles": env.obstacles.iter().map(|o| [o.center.x, o.center.y, o.radius]).collect::<Vec<_>>(),
    })
}

/// Travel-time field to the vehicle goal, plus the descent path from `(x, y)`.
#[wasm_bindgen]
pub fn solve_field(scenario: &str, cell: f64, x: f64, y: f64) -> Result<String, JsError> {
    let env = environment(scenario)?;
    let mut params = Config::default().planner.fmm;
    if cell > 0.0 {
        params.cell = cell;
    }
    let field = solve_environment(&env, &params).map_err(err)?;
    let start = crowdnav::Vec2::new(x, y);
    let path = field.descend(start, params.alpha, 4 * (field.nx + field.ny)).unwrap_or_default();
    Ok(json!({
        "env": env_json(&env),
        "nx": field.nx,
        "ny": field.ny,
        "cell": field.cell,
        "times": field.times,
        "path": path.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Probabilistic roadmap with `nodes` samples and `k` neighbors, and its route from
/// `(x, y)` to the goal.
#[wasm_bindgen]
pub fn build_roadmap(scenario: &str, nodes: usize, k: usize, seed: u64, x: f64, y: f64) -> Result<String, JsError> {
    let env = environment(scenario)?;
    let params = PrmParams { nodes, k, ..Config::default().planner.prm };
    let map = build(&env, &params, seed).map_err(err)?;
    let start = crowdnav::Vec2::new(x, y);
    let mut route = vec![[x, y]];
    if let Some(entry) = map.entry_node(start) {
        route.extend(map.route(entry).into_iter().map(|i| [map.nodes[i].x, map.nodes[i].y]));
    }
    Ok(json!({
        "env": env_json(&env),
        "nodes": map.nodes.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
        "edges": map.edges.iter().map(|&(u, v, _)| [u, v]).collect::<Vec<_>>(),
        "route": route,
        "length": map.path_length_from(start),
    })
    .to_string())
}

/// Simulates one episode and returns its summary and per-step trajectory.
#[wasm_bindgen]
pub fn run_episode(
    scenario: &str,
    planner: &str,
    population: usize,
    seed: u64,
    iterations: usize,
    max_steps: usize,
) -> Result<String, JsError> {
    let env = environment(scenario)?;
    let kind: PlannerKind = planner.parse().map_err(err)?;
    let mut cfg = Config::default();
    cfg.planner = cfg.planner.with_iteration_caps(iterations.max(1), 20_000);
    cfg.sim = SimConfig { population, max_steps, record_trajectory: true, ..cfg.sim };
    let result = crowdnav::experiment::run_trial(&env, &cfg, kind, population, seed, true).map_err(err)?;
    Ok(json!({ "env": env_json(&env), "result": result }).to_string())
}
