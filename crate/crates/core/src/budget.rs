//! Planning budgets: wall clock or a fixed iteration count.
//!
//! Iteration budgets make runs reproducible and never touch the system clock, which
//! is unavailable on `wasm32-unknown-unknown`.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    WallClock(Duration),
    Iterations(usize),
}

impl Budget {
    pub fn seconds(s: f64) -> Self {
        Budget::WallClock(Duration::from_secs_f64(s.max(0.0)))
    }

    pub fn iterations(n: usize) -> Self {
        Budget::Iterations(n)
    }

    pub fn start(&self) -> Clock {
        match *self {
            Budget::WallClock(d) => Clock::Wall(Instant::now(), d),
            Budget::Iterations(n) => Clock::Count(n),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Clock {
    Wall(Instant, Duration),
    Count(usize),
}

impl Clock {
    /// Whether the budget is spent after `done` iterations.
    pub fn expired(&self, done: usize) -> bool {
        match *self {
            Clock::Wall(start, d) => start.elapsed() >= d,
            Clock::Count(n) => done >= n,
        }
    }
}
