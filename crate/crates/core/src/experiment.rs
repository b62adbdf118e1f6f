//! Batch experiments: paired-seed episodes over planners and crowd sizes, the raw
//! per-episode CSV, and the aggregated metrics table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::planner::{Planner, PlannerKind};
use crate::pomdp::VehicleKind;
use crate::rng::derive_seed;
use crate::simulator::{run_episode, GoalWalker, Outcome, SimConfig};
use crate::world::{build_scenario, Environment, ScenarioId};

/// What to run. Wall-clock budgets make runs machine dependent; set
/// `iteration_cap` for byte-reproducible output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioId,
    /// Optional scenario file overriding the bundled geometry.
    #[serde(default)]
    pub scenario_file: Option<PathBuf>,
    #[serde(default)]
    pub vehicle: VehicleKind,
    pub planners: Vec<PlannerKind>,
    pub populations: Vec<usize>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-step planning budget (s).
    #[serde(default = "default_budget")]
    pub budget_s: f64,
    /// Search iterations per step; replaces the wall-clock budget when set.
    #[serde(default)]
    pub iteration_cap: Option<usize>,
    /// Path-search expansions per step under an iteration cap.
    #[serde(default = "default_expansions")]
    pub path_expansions: usize,
    /// Planner the others are compared against. Defaults to LS_ASTAR when listed,
    /// otherwise the first planner.
    #[serde(default)]
    pub baseline: Option<PlannerKind>,
    #[serde(default)]
    pub config: Config,
}

fn default_budget() -> f64 {
    0.5
}

fn default_expansions() -> usize {
    20_000
}

impl ExperimentSpec {
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(src)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.planners.is_empty() || self.populations.is_empty() {
            return Err(Error::Config("need at least one planner and one population".into()));
        }
        if self.iteration_cap.is_none() && self.budget_s <= 0.0 {
            return Err(Error::Config("planning budget must be positive".into()));
        }
        if let Some(b) = self.baseline {
            if !self.planners.contains(&b) {
                return Err(Error::Config(format!("baseline {b} is not in the planner list")));
            }
        }
        self.resolved_config().planner.validate()
    }

    pub fn baseline(&self) -> PlannerKind {
        self.baseline.unwrap_or_else(|| {
            if self.planners.contains(&PlannerKind::LsAstar) {
                PlannerKind::LsAstar
            } else {
                self.planners[0]
            }
        })
    }

    pub fn environment(&self) -> Result<Environment> {
        match &self.scenario_file {
            Some(p) => Environment::from_file(p),
            None => Ok(build_scenario(self.scenario)),
        }
    }

    /// Config with the vehicle and budget of this spec applied.
    pub fn resolved_config(&self) -> Config {
        let mut cfg = self.config.for_vehicle(self.vehicle).with_budget(self.budget_s);
        if let Some(cap) = self.iteration_cap {
            cfg.planner = cfg.planner.with_iteration_caps(cap, self.path_expansions);
        }
        cfg
    }

    /// World seed shared by every planner for one (population, trial) cell.
    pub fn trial_seed(&self, population: usize, trial: usize) -> u64 {
        derive_seed(self.seed, population as u64, trial as u64)
    }
}

/// One CSV row per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub scenario: String,
    pub vehicle: String,
    pub planner: PlannerKind,
    pub population: usize,
    pub trial: usize,
    pub seed: u64,
    pub travel_time_s: f64,
    pub sb_count: usize,
    #[serde(rename = "unsafe")]
    pub is_unsafe: bool,
    pub outcome: Outcome,
}

pub fn write_csv<W: Write>(rows: &[EpisodeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<EpisodeRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Number of paired trials where the candidate is strictly faster.
pub fn compare_outperform(baseline: &[f64], candidate: &[f64]) -> Result<usize> {
    if baseline.len() != candidate.len() {
        return Err(Error::LengthMismatch(baseline.len(), candidate.len()));
    }
    Ok(baseline.iter().zip(candidate).filter(|(b, c)| c < b).count())
}

/// Mean and standard error (sample stdev / √n; 0 for a single sample).
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    pub population: usize,
    pub planner: PlannerKind,
    pub trials: usize,
    pub travel_time_mean: f64,
    pub travel_time_sem: f64,
    pub sb_mean: f64,
    pub sb_sem: f64,
    /// Paired trials faster than the baseline; `None` for the baseline itself.
    pub outperformed: Option<usize>,
    pub unsafe_count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub baseline: PlannerKind,
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    /// Aggregates raw rows. Planner failures are excluded from the means and from
    /// the paired comparison, and counted on their own.
    pub fn from_rows(rows: &[EpisodeRow], baseline: PlannerKind) -> Result<Self> {
        type Key = (String, usize);
        let mut cells: BTreeMap<Key, BTreeMap<PlannerKind, Vec<&EpisodeRow>>> = BTreeMap::new();
        for r in rows {
            cells.entry((r.scenario.clone(), r.population)).or_default().entry(r.planner).or_default().push(r);
        }
        let mut out = Vec::new();
        for ((scenario, population), planners) in &cells {
            let base: BTreeMap<usize, &EpisodeRow> =
                planners.get(&baseline).map(|v| v.iter().map(|r| (r.trial, *r)).collect()).unwrap_or_default();
            for (&planner, runs) in planners {
                let ok: Vec<&&EpisodeRow> = runs.iter().filter(|r| r.outcome != Outcome::PlannerFailure).collect();
                let (travel_time_mean, travel_time_sem) =
                    mean_sem(&ok.iter().map(|r| r.travel_time_s).collect::<Vec<_>>());
                let (sb_mean, sb_sem) = mean_sem(&ok.iter().map(|r| r.sb_count as f64).collect::<Vec<_>>());
                let outperformed = if planner == baseline || base.is_empty() {
                    None
                } else {
                    let (b, c): (Vec<f64>, Vec<f64>) = ok
                        .iter()
                        .filter_map(|r| base.get(&r.trial).map(|b| (*b, r)))
                        .filter(|(b, _)| b.outcome != Outcome::PlannerFailure)
                        .map(|(b, r)| (b.travel_time_s, r.travel_time_s))
                        .unzip();
                    Some(compare_outperform(&b, &c)?)
                };
                out.push(MetricsRow {
                    scenario: scenario.clone(),
                    population: *population,
                    planner,
                    trials: runs.len(),
                    travel_time_mean,
                    travel_time_sem,
                    sb_mean,
                    sb_sem,
                    outperformed,
                    unsafe_count: runs.iter().filter(|r| r.is_unsafe).count(),
                    failures: runs.len() - ok.len(),
                });
            }
        }
        Ok(Self { baseline, rows: out })
    }

    pub fn get(&self, population: usize, planner: PlannerKind) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.population == population && r.planner == planner)
    }

    pub fn total_unsafe(&self) -> usize {
        self.rows.iter().map(|r| r.unsafe_count).sum()
    }
}

impl fmt::Display for MetricsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>5} {:<16} {:>6} {:>18} {:>14} {:>10} {:>6} {:>5}",
            "scenario", "peds", "planner", "trials", "travel time (s)", "SB count", "outperf", "unsafe", "fail"
        )?;
        for r in &self.rows {
            let outperf = match r.outperformed {
                Some(n) => n.to_string(),
                None => "base".to_string(),
            };
            writeln!(
                f,
                "{:<12} {:>5} {:<16} {:>6} {:>18} {:>14} {:>10} {:>6} {:>5}",
                r.scenario,
                r.population,
                r.planner.as_str(),
                r.trials,
                format!("{:.2} ± {:.2}", r.travel_time_mean, r.travel_time_sem),
                format!("{:.2} ± {:.2}", r.sb_mean, r.sb_sem),
                outperf,
                r.unsafe_count,
                r.failures
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<EpisodeRow>,
    pub table: MetricsTable,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 or 1 runs inline.
    pub workers: usize,
    /// Directory for per-episode JSON-lines trajectories.
    pub log_dir: Option<PathBuf>,
    /// Called after each finished episode.
    pub progress: Option<fn(&EpisodeRow)>,
}

/// Runs one episode for a (planner, population, seed) cell.
pub fn run_trial(
    env: &Environment,
    cfg: &Config,
    planner: PlannerKind,
    population: usize,
    seed: u64,
    record: bool,
) -> Result<crate::simulator::EpisodeResult> {
    let mut p = Planner::new(planner, env.clone(), cfg.planner, seed)?;
    let sim = SimConfig { population, record_trajectory: record, ..cfg.sim };
    let walker = GoalWalker { dynamics: cfg.planner.dynamics };
    Ok(run_episode(env, &mut p, &sim, &cfg.belief, &walker, seed))
}

pub fn run_experiment(spec: &ExperimentSpec, opts: &RunOptions) -> Result<ExperimentOutput> {
    spec.validate()?;
    let env = spec.environment()?;
    let cfg = spec.resolved_config();
    if let Some(dir) = &opts.log_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut jobs = Vec::new();
    for &population in &spec.populations {
        for trial in 0..spec.trials {
            for &planner in &spec.planners {
                jobs.push((population, trial, planner));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<EpisodeRow>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(&(population, trial, planner)) = jobs.get(i) else { break };
        let seed = spec.trial_seed(population, trial);
        let row = run_trial(&env, &cfg, planner, population, seed, opts.log_dir.is_some()).and_then(|res| {
            if let Some(dir) = &opts.log_dir {
                let name = format!("{}_{}_{}_{}.jsonl", env.name, planner.as_str(), population, trial);
                res.write_trajectory(std::io::BufWriter::new(std::fs::File::create(dir.join(name))?))?;
            }
            Ok(EpisodeRow {
                scenario: env.name.clone(),
                vehicle: spec.vehicle.as_str().to_string(),
                planner,
                population,
                trial,
                seed,
                travel_time_s: res.travel_time_s,
                sb_count: res.sb_count,
                is_unsafe: res.is_unsafe,
                outcome: res.outcome,
            })
        });
        if let (Ok(r), Some(cb)) = (&row, opts.progress) {
            cb(r);
        }
        slots.lock().expect("worker panicked")[i] = Some(row);
    };
    let workers = opts.workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    let rows = slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<Vec<_>>>()?;
    let table = MetricsTable::from_rows(&rows, spec.baseline())?;
    Ok(ExperimentOutput { rows, table })
}
