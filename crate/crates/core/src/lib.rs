//! Crowd navigation with an extended-space POMDP planner.
//!
//! The vehicle plans over both heading and speed with an anytime belief-tree search
//! over sampled scenarios. Lower bounds come from roll-outs guided by multi-query path
//! sources (a Fast Marching travel-time field or a probabilistic roadmap); the baseline
//! plans a hybrid A* path and controls speed only.

pub mod astar;
pub mod belief;
pub mod budget;
pub mod config;
pub mod despot;
pub mod error;
pub mod experiment;
pub mod fmm;
pub mod geometry;
pub mod planner;
pub mod pomdp;
pub mod prm;
pub mod rng;
pub mod rollout;
pub mod simulator;
pub mod value;
pub mod world;

pub use error::{Error, Result};
pub use geometry::Vec2;
