//! Static environment: field bounds, circular obstacles, goal locations and the
//! three reference scenarios.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CircularObstacle {
    pub center: Vec2,
    pub radius: f64,
}

impl CircularObstacle {
    /// Signed distance from `p` to the obstacle boundary (negative inside).
    pub fn clearance(&self, p: Vec2) -> f64 {
        p.dist(self.center) - self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub obstacles: Vec<CircularObstacle>,
    pub pedestrian_goals: Vec<Vec2>,
    pub vehicle_goal: Vec2,
    pub vehicle_start: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ScenarioId {
    OpenField,
    Scattered,
    LLobby,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 3] = [ScenarioId::OpenField, ScenarioId::Scattered, ScenarioId::LLobby];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::OpenField => "OPEN_FIELD",
            ScenarioId::Scattered => "SCATTERED",
            ScenarioId::LLobby => "L_LOBBY",
        }
    }

    fn config_source(self) -> &'static str {
        match self {
            ScenarioId::OpenField => include_str!("../scenarios/open_field.toml"),
            ScenarioId::Scattered => include_str!("../scenarios/scattered.toml"),
            ScenarioId::LLobby => include_str!("../scenarios/l_lobby.toml"),
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "OPEN_FIELD" | "1" => Ok(ScenarioId::OpenField),
            "SCATTERED" | "2" => Ok(ScenarioId::Scattered),
            "L_LOBBY" | "3" => Ok(ScenarioId::LLobby),
            other => Err(Error::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

/// On-disk layout of a scenario file. Points are `[x, y]`, obstacles `[cx, cy, r]`.
#[derive(Debug, Deserialize)]
struct ScenarioFile {
    name: String,
    width: f64,
    height: f64,
    vehicle_start: [f64; 2],
    vehicle_goal: [f64; 2],
    pedestrian_goals: Vec<[f64; 2]>,
    #[serde(default)]
    obstacles: Vec<[f64; 3]>,
}

fn point([x, y]: [f64; 2]) -> Vec2 {
    Vec2::new(x, y)
}

/// Returns the fixed reference environment for a scenario.
pub fn build_scenario(id: ScenarioId) -> Environment {
    Environment::from_toml_str(id.config_source()).expect("bundled scenario config is valid")
}

impl Environment {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let raw: ScenarioFile = toml::from_str(src)?;
        let env = Environment {
            name: raw.name,
            width: raw.width,
            height: raw.height,
            obstacles: raw
                .obstacles
                .into_iter()
                .map(|[cx, cy, r]| CircularObstacle { center: Vec2::new(cx, cy), radius: r })
                .collect(),
            pedestrian_goals: raw.pedestrian_goals.into_iter().map(point).collect(),
            vehicle_goal: point(raw.vehicle_goal),
            vehicle_start: point(raw.vehicle_start),
        };
        env.validate()?;
        Ok(env)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(Error::Environment("field dimensions must be positive".into()));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.radius <= 0.0 {
                return Err(Error::Environment(format!("obstacle {i} has non-positive radius")));
            }
            let c = o.center;
            if c.x - o.radius < 0.0
                || c.y - o.radius < 0.0
                || c.x + o.radius > self.width
                || c.y + o.radius > self.height
            {
                return Err(Error::Environment(format!("obstacle {i} extends outside the field")));
            }
        }
        let named = self
            .pedestrian_goals
            .iter()
            .map(|g| ("pedestrian goal", *g))
            .chain([("vehicle goal", self.vehicle_goal), ("vehicle start", self.vehicle_start)]);
        for (what, p) in named {
            if !self.contains(p) {
                return Err(Error::Environment(format!("{what} ({}, {}) outside the field", p.x, p.y)));
            }
            if self.obstacle_clearance(p) <= 0.0 {
                return Err(Error::Environment(format!("{what} ({}, {}) inside an obstacle", p.x, p.y)));
            }
        }
        if self.pedestrian_goals.is_empty() {
            return Err(Error::Environment("at least one pedestrian goal is required".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Vec2) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    /// Minimum signed distance from `p` to any obstacle boundary; `+∞` without obstacles.
    pub fn obstacle_clearance(&self, p: Vec2) -> f64 {
        self.obstacles.iter().map(|o| o.clearance(p)).fold(f64::INFINITY, f64::min)
    }

    /// Minimum signed distance from the segment `a`–`b` to any obstacle boundary.
    pub fn segment_clearance(&self, a: Vec2, b: Vec2) -> f64 {
        self.obstacles.iter().map(|o| point_segment_distance(o.center, a, b) - o.radius).fold(f64::INFINITY, f64::min)
    }

    pub fn diagonal(&self) -> f64 {
        self.width.hypot(self.height)
    }
}

/// Indices of the `n` points closest to `origin`, nearest first. Equal distances
/// keep ascending index order.
pub fn nearest_pedestrians<I>(origin: Vec2, positions: I, n: usize) -> Vec<usize>
where
    I: IntoIterator<Item = Vec2>,
{
    let mut ranked: Vec<(f64, usize)> = positions.into_iter().enumerate().map(|(i, p)| (origin.dist(p), i)).collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.truncate(n);
    ranked.into_iter().map(|(_, i)| i).collect()
}
