use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to parse config: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("invalid environment: {0}")]
    Environment(String),

    #[error("source cell ({0}, {1}) is not free space")]
    SourceBlocked(usize, usize),

    #[error("point ({x:.2}, {y:.2}) has no finite travel time")]
    Unreachable { x: f64, y: f64 },

    #[error("no roadmap node visible from ({x:.2}, {y:.2})")]
    NoVisibleNode { x: f64, y: f64 },

    #[error("goal unreachable from start after {0} roadmap attempts")]
    RoadmapDisconnected(usize),

    #[error("path planner found no path and has no previous path")]
    NoPath,

    #[error("action {0} is not legal in the current state")]
    IllegalAction(String),

    #[error("no legal actions available")]
    NoActions,

    #[error("paired lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
