//! Aggregate configuration file: planner, simulator and belief settings in one TOML
//! document. Every table and key is optional and falls back to the defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::BeliefParams;
use crate::error::Result;
use crate::planner::PlannerConfig;
use crate::pomdp::{RewardParams, VehicleKind};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub planner: PlannerConfig,
    pub sim: SimConfig,
    pub belief: BeliefParams,
}

impl Config {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(src)?;
        cfg.planner.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Switches vehicle model, adopting that vehicle's speed limit and path actions.
    pub fn for_vehicle(mut self, kind: VehicleKind) -> Self {
        self.planner.dynamics.vehicle = kind;
        self.planner.reward.v_max = RewardParams::for_vehicle(kind).v_max;
        self
    }

    /// Splits a per-step planning budget between path search and speed search the
    /// way the baseline does (30% / 70%); the extended planner gets all of it.
    pub fn with_budget(mut self, seconds: f64) -> Self {
        self.planner.es_solver.budget_s = seconds;
        self.planner.ls_solver.budget_s = seconds * 0.7;
        self.planner.path.budget_s = seconds * 0.3;
        self
    }
}
